#!/usr/bin/env python3
# Copyright (C) 2026 The zoomrefine Authors
# SPDX-License-Identifier: Apache-2.0
"""Convert an HR-Bench style TSV file to dataset.jsonl plus images/.

Columns: index, image (base64), question, answer, A, B, C, D, category.
category "single" maps to subtask FSP, "cross" to FCP. Every record is a
perception task. Images are written to <out_dir>/images/<index>.jpg.
"""

import argparse
import base64
import csv
import json
import os
import sys

CATEGORIES = {"single": "FSP", "cross": "FCP"}


def convert_row(row, out_dir):
    index = row["index"].strip()
    rel = os.path.join("images", f"{index}.jpg")
    with open(os.path.join(out_dir, rel), "wb") as f:
        f.write(base64.b64decode(row["image"]))
    category = row["category"].strip().lower()
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {row['category']!r}")
    return {
        "id": index,
        "image": rel,
        "question": row["question"],
        "options": [row[k] for k in "ABCD"],
        "answer": row["answer"].strip().upper(),
        "task": "perception",
        "subtask": CATEGORIES[category],
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("input", help="TSV file")
    ap.add_argument("out_dir", help="directory for dataset.jsonl and images/")
    args = ap.parse_args(argv)
    csv.field_size_limit(sys.maxsize)
    os.makedirs(os.path.join(args.out_dir, "images"), exist_ok=True)
    n = 0
    with open(args.input, encoding="utf-8", newline="") as f, open(
        os.path.join(args.out_dir, "dataset.jsonl"), "w", encoding="utf-8"
    ) as out:
        for row in csv.DictReader(f, delimiter="\t"):
            try:
                rec = convert_row(row, args.out_dir)
            except (KeyError, ValueError) as e:
                print(f"row {n + 1}: {e}", file=sys.stderr)
                return 4
            out.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    print(f"wrote {n} records to {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
