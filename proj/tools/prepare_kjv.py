#!/usr/bin/env python3
"""Build the char-level LM corpus (King James Bible, public domain) used by
the language-model runs: contiguous verses from Genesis onward, one verse
per line, split 90/5/5 into train/valid/test at verse boundaries.

The verse text comes from the `kjv` npm package (json/verses-1769.json).
"""

import argparse
import json
import pathlib
import subprocess
import tarfile
import tempfile


def fetch_verses(cache: pathlib.Path) -> dict:
    src = cache / "package" / "json" / "verses-1769.json"
    if not src.exists():
        cache.mkdir(parents=True, exist_ok=True)
        out = subprocess.run(["npm", "pack", "kjv", "--silent"], cwd=cache, check=True,
                             capture_output=True, text=True).stdout.strip().splitlines()[-1]
        with tarfile.open(cache / out) as tar:
            tar.extractall(cache)
    return json.loads(src.read_text(encoding="utf-8"))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/kjv", help="output directory")
    ap.add_argument("--chars", type=int, default=1_100_000, help="total corpus size in characters")
    ap.add_argument("--cache", default=str(pathlib.Path(tempfile.gettempdir()) / "kjv-npm"))
    args = ap.parse_args()

    verses = fetch_verses(pathlib.Path(args.cache))
    lines, total = [], 0
    for text in verses.values():  # insertion order is canonical book order
        line = text.replace("[", "").replace("]", "").replace("# ", "").strip()
        if not line:
            continue
        lines.append(line)
        total += len(line) + 1
        if total >= args.chars:
            break

    n = len(lines)
    cut1, cut2 = int(n * 0.90), int(n * 0.95)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", lines[:cut1]), ("valid", lines[cut1:cut2]), ("test", lines[cut2:])):
        (out / f"{name}.txt").write_text("\n".join(part) + "\n", encoding="utf-8")
        print(f"{name}: {len(part)} verses, {sum(len(l) + 1 for l in part)} chars")


if __name__ == "__main__":
    main()
