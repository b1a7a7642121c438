#!/usr/bin/env python3
# Copyright (C) 2026 The zoomrefine Authors
# SPDX-License-Identifier: Apache-2.0
"""Convert an MME-RealWorld style JSON annotation file to dataset.jsonl.

Field mapping:
  Question_id       -> id
  Image             -> image (kept relative; pass --image-root to eval)
  Text              -> question
  Answer choices    -> options, "(A) " prefixes stripped
  Ground truth      -> answer
  Task              -> task ("Perception"/"Reasoning", case-insensitive)
  Subtask           -> subtask, long names mapped to OCR/RS/DT/MO/AD
"""

import argparse
import json
import re
import sys

SUBTASKS = {
    "ocr": "OCR",
    "ocr with complex context": "OCR",
    "remote sensing": "RS",
    "remote_sensing": "RS",
    "diagram and table": "DT",
    "diagram_and_table": "DT",
    "monitoring": "MO",
    "autonomous driving": "AD",
    "autonomous_driving": "AD",
}

PREFIX = re.compile(r"^\(\s*([A-Ea-e])\s*\)\s*")


def map_subtask(s):
    return SUBTASKS.get(s.strip().lower(), s.strip())


def map_task(s):
    t = s.strip().lower()
    if t not in ("perception", "reasoning"):
        raise ValueError(f"unknown task {s!r}")
    return t


def strip_choice(c):
    return PREFIX.sub("", c.strip(), count=1)


def convert_record(r):
    answer = str(r["Ground truth"]).strip()
    m = PREFIX.match(answer)
    if m:
        answer = m.group(1)
    return {
        "id": str(r["Question_id"]),
        "image": r["Image"],
        "question": r["Text"],
        "options": [strip_choice(c) for c in r["Answer choices"]],
        "answer": answer.upper(),
        "task": map_task(r["Task"]),
        "subtask": map_subtask(r["Subtask"]),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("input", help="annotation JSON (a list of records)")
    ap.add_argument("output", help="dataset.jsonl to write")
    args = ap.parse_args(argv)
    with open(args.input, encoding="utf-8") as f:
        records = json.load(f)
    with open(args.output, "w", encoding="utf-8") as out:
        for i, r in enumerate(records):
            try:
                rec = convert_record(r)
            except (KeyError, ValueError) as e:
                print(f"record {i}: {e}", file=sys.stderr)
                return 4
            out.write(json.dumps(rec, ensure_ascii=False) + "\n")
    print(f"wrote {len(records)} records to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
