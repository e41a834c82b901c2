"""
Unit tests for the report service module.
"""
import os
import tempfile
import unittest

import pandas as pd

from src.models.report_models import PanopticEntry, PanopticReport, StructureScores
from src.services.report_service import collect_frame, compare, subject_name, summary_table, write_rows_csv
from src.utils.error_handlers import ConfigError


def evaluation(dsc, rq):
    return PanopticReport(
        global_scores={"vertebra": StructureScores(dice=dsc, assd=None)},
        instance_scores={"vertebra": PanopticEntry(tp=4, fp=0, fn=1, rq=rq, sq=0.9, pq=0.9 * rq)},
    )


class TestReportService(unittest.TestCase):
    """Test cases for the report service module."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def _write(self, name, report):
        path = os.path.join(self.tmp.name, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(report.model_dump_json())
        return path

    def test_summary_table(self):
        paths = [self._write(f"s{i}.json", evaluation(dsc, 1.0)) for i, dsc in enumerate((0.8, 0.9, 1.0))]
        frame = collect_frame(paths)
        self.assertEqual(frame["subject"].nunique(), 3)

        table = summary_table(frame)
        row = table[(table["level"] == "global") & (table["metric"] == "DSC")].iloc[0]
        self.assertAlmostEqual(row["mean"], 0.9)
        self.assertEqual(row["count"], 3)
        self.assertEqual(row["summary"], "0.900 ± 0.100")

        assd = table[(table["level"] == "global") & (table["metric"] == "ASSD")].iloc[0]
        self.assertEqual(assd["summary"], "n/a")

    def test_compare(self):
        """Test a paired comparison where the candidate wins on every subject."""
        base = [0.5, 0.6, 0.7, 0.8, 0.9]
        gain = [0.01, 0.02, 0.03, 0.04, 0.05]
        baseline = [self._write(f"b{i}.json", evaluation(d, 0.5)) for i, d in enumerate(base)]
        candidate = [self._write(f"c{i}.json", evaluation(d + g, 0.5)) for i, (d, g) in enumerate(zip(base, gain))]

        result = compare(baseline, candidate)
        dsc = result[(result["level"] == "global") & (result["metric"] == "DSC")].iloc[0]
        self.assertAlmostEqual(dsc["p_value"], 0.0625)
        self.assertEqual(dsc["n"], 5)
        self.assertFalse(dsc["significant"])

        rq = result[(result["level"] == "instance") & (result["metric"] == "RQ")].iloc[0]
        self.assertEqual(rq["p_value"], 1.0)

    def test_compare_unequal_sets(self):
        path = self._write("a.json", evaluation(0.5, 0.5))
        with self.assertRaises(ConfigError):
            compare([path, path], [path])

    def test_collect_requires_files(self):
        with self.assertRaises(ConfigError):
            collect_frame([])

    def test_invalid_json(self):
        path = os.path.join(self.tmp.name, "bad.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write("{not json")
        with self.assertRaises(ConfigError):
            collect_frame([path])

    def test_rows_csv_and_subject_names(self):
        path = os.path.join(self.tmp.name, "rows.csv")
        write_rows_csv(evaluation(0.7, 0.5), path)
        frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ["level", "structure", "metric", "value"])
        self.assertEqual(len(frame), 10)

        self.assertEqual(subject_name("/data/sub-01.json"), "sub-01")
        self.assertEqual(subject_name("/data/sub-02/evaluation.json"), "sub-02")


if __name__ == "__main__":
    unittest.main()
