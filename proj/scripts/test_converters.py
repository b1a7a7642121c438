# Copyright (C) 2026 The zoomrefine Authors
# SPDX-License-Identifier: Apache-2.0

import base64
import json
import os
import sys
import tempfile
import unittest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import convert_hrbench  # noqa: E402
import convert_mme_realworld  # noqa: E402


class MmeRealWorld(unittest.TestCase):
    def test_record(self):
        rec = convert_mme_realworld.convert_record(
            {
                "Question_id": "ocr/1",
                "Image": "ocr/a.jpg",
                "Text": "What is the sign?",
                "Answer choices": ["(A) STOP", "(B) SLOW", "(C) EXIT"],
                "Ground truth": "B",
                "Task": "Perception",
                "Subtask": "Remote Sensing",
            }
        )
        self.assertEqual(rec["options"], ["STOP", "SLOW", "EXIT"])
        self.assertEqual(rec["answer"], "B")
        self.assertEqual(rec["task"], "perception")
        self.assertEqual(rec["subtask"], "RS")

    def test_file(self):
        with tempfile.TemporaryDirectory() as d:
            src = os.path.join(d, "in.json")
            with open(src, "w") as f:
                json.dump(
                    [
                        {
                            "Question_id": 7,
                            "Image": "x.jpg",
                            "Text": "q",
                            "Answer choices": ["(A) a", "(B) b"],
                            "Ground truth": "(A)",
                            "Task": "reasoning",
                            "Subtask": "Monitoring",
                        }
                    ],
                    f,
                )
            dst = os.path.join(d, "out.jsonl")
            self.assertEqual(convert_mme_realworld.main([src, dst]), 0)
            with open(dst) as f:
                rec = json.loads(f.readline())
            self.assertEqual(rec["id"], "7")
            self.assertEqual(rec["answer"], "A")
            self.assertEqual(rec["subtask"], "MO")

    def test_bad_task(self):
        with self.assertRaises(ValueError):
            convert_mme_realworld.map_task("planning")


class HrBench(unittest.TestCase):
    def test_file(self):
        payload = b"\xff\xd8fake"
        with tempfile.TemporaryDirectory() as d:
            src = os.path.join(d, "in.tsv")
            with open(src, "w") as f:
                f.write("index\timage\tquestion\tanswer\tA\tB\tC\tD\tcategory\n")
                f.write(f"12\t{base64.b64encode(payload).decode()}\tcolour?\tc\tred\tblue\tgreen\tgrey\tcross\n")
            out = os.path.join(d, "out")
            self.assertEqual(convert_hrbench.main([src, out]), 0)
            with open(os.path.join(out, "dataset.jsonl")) as f:
                rec = json.loads(f.readline())
            self.assertEqual(rec["subtask"], "FCP")
            self.assertEqual(rec["answer"], "C")
            self.assertEqual(rec["options"], ["red", "blue", "green", "grey"])
            with open(os.path.join(out, rec["image"]), "rb") as f:
                self.assertEqual(f.read(), payload)


if __name__ == "__main__":
    unittest.main()
