#!/usr/bin/env python3
"""Ingest a MusicXML corpus with a manifest.csv into a corpus archive.

Expects a directory containing manifest.csv (columns: path, bartok_index,
optional henle_grade, optional title) with score paths relative to it.

Usage: scripts/ingest_real_corpus.py CORPUS_DIR OUT_JSON
"""

import sys

from pianodiff.cli import main


def run(argv: list[str]) -> int:
    if len(argv) != 2:
        print(__doc__, file=sys.stderr)
        return 1
    corpus_dir, out = argv
    return main(
        [
            "ingest",
            "--manifest", f"{corpus_dir}/manifest.csv",
            "--scores-dir", corpus_dir,
            "--out", out,
        ]
    )


if __name__ == "__main__":
    raise SystemExit(run(sys.argv[1:]))
