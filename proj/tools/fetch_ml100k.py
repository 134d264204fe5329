#!/usr/bin/env python3
# Copyright 2026 The RecRank Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Materialise MovieLens-100K in its native layout (u.data, u.item).

GroupLens hosts the canonical archive. When that host is unreachable, the
copy bundled in the RecBole wheel (available from any PyPI mirror) is
converted back to the native tab/pipe-separated files.
"""
import argparse
import io
import pathlib
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def from_grouplens(out: pathlib.Path) -> bool:
    try:
        blob = urllib.request.urlopen(GROUPLENS, timeout=20).read()
    except Exception as exc:  # noqa: BLE001
        print(f"grouplens unavailable: {exc}", file=sys.stderr)
        return False
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        for name in ("u.data", "u.item"):
            (out / name).write_bytes(zf.read(f"ml-100k/{name}"))
    return True


def from_recbole(out: pathlib.Path) -> bool:
    with tempfile.TemporaryDirectory() as tmp:
        cmd = [sys.executable, "-m", "pip", "download", "--no-deps",
               "recbole==1.2.1", "-d", tmp]
        if subprocess.run(cmd, capture_output=True).returncode != 0:
            print("pip download of recbole failed", file=sys.stderr)
            return False
        wheel = next(pathlib.Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            inter = zf.read("recbole/dataset_example/ml-100k/ml-100k.inter")
            item = zf.read("recbole/dataset_example/ml-100k/ml-100k.item")
    rows = inter.decode("utf-8").splitlines()[1:]
    with open(out / "u.data", "w", encoding="latin-1", newline="\n") as fh:
        for row in rows:
            user, it, rating, ts = row.split("\t")
            fh.write(f"{user}\t{it}\t{int(float(rating))}\t{int(float(ts))}\n")
    with open(out / "u.item", "w", encoding="latin-1", newline="\n") as fh:
        for row in item.decode("utf-8").splitlines()[1:]:
            parts = row.split("\t")
            item_id, title = parts[0], parts[1]
            year = parts[2] if len(parts) > 2 else ""
            full = f"{title} ({year})" if year else title
            fh.write(f"{item_id}|{full}|||" + "|".join(["0"] * 19) + "\n")
    return True


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/ml-100k")
    args = parser.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if from_grouplens(out) or from_recbole(out):
        print(f"wrote {out}/u.data and {out}/u.item")
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
