"""
Integration tests of the spinekit command line.
"""
import json
import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from src.app import main
from src.models.volume_models import VolumeKind
from src.services.label_service import SemanticLabel
from src.services.volume_service import read_nifti, write_nifti

SHAPE = "128,256,48"


class TestCli(unittest.TestCase):
    """Test cases for the spinekit subcommands."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.phantom_dir = os.path.join(cls.tmp.name, "phantom")
        code = main(["phantom", "--vertebrae", "5", "--seed", "3", "--shape", SHAPE,
                     "--out-dir", cls.phantom_dir, "--log-level", "WARNING"])
        assert code == 0

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def path(self, *parts):
        return os.path.join(self.tmp.name, *parts)

    def phantom(self, name):
        return os.path.join(self.phantom_dir, name)

    def test_phantom_outputs(self):
        for name in ("image.nii.gz", "semantic.nii.gz", "instance.nii.gz", "labels.json",
                     "phantom_spec.json", "run.json"):
            self.assertTrue(os.path.exists(self.phantom(name)), name)
        with open(self.phantom("run.json"), "r", encoding="utf-8") as f:
            record = json.load(f)
        self.assertEqual((record["command"], record["seed"]), ("phantom", 3))
        self.assertEqual(record["config"]["n_vertebrae"], 5)

    def test_phantom_is_deterministic(self):
        out = self.path("phantom_again")
        self.assertEqual(main(["phantom", "--vertebrae", "5", "--seed", "3", "--shape", SHAPE,
                               "--out-dir", out, "--log-level", "WARNING"]), 0)
        for name, kind in (("image.nii.gz", VolumeKind.INTENSITY), ("semantic.nii.gz", VolumeKind.SEMANTIC),
                           ("instance.nii.gz", VolumeKind.INSTANCE)):
            self.assertEqual(read_nifti(os.path.join(out, name), kind=kind), read_nifti(self.phantom(name), kind=kind))
        for name in ("phantom_spec.json", "labels.json"):
            with open(os.path.join(out, name), "r", encoding="utf-8") as a, open(self.phantom(name), "r", encoding="utf-8") as b:
                self.assertEqual(json.load(a), json.load(b))

    def test_usage_errors(self):
        self.assertEqual(main(["phantom", "--vertebrae", "1", "--out-dir", self.path("bad")]), 2)
        self.assertEqual(main(["unknown"]), 2)
        self.assertEqual(main(["phantom", "--vertebrae", "12", "--shape", SHAPE, "--out-dir", self.path("big")]), 2)
        self.assertFalse(os.path.exists(self.path("big", "image.nii.gz")))

    def test_segment_with_oracles(self):
        out = self.path("segment")
        code = main([
            "segment", "--input", self.phantom("image.nii.gz"),
            "--semantic", "oracle:" + self.phantom("semantic.nii.gz"),
            "--instance", "oracle:" + self.phantom("instance.nii.gz"),
            "--out-dir", out, "--keep-raw", "--log-level", "WARNING",
        ])
        self.assertEqual(code, 0)
        self.assertEqual(read_nifti(os.path.join(out, "semantic.nii.gz"), kind=VolumeKind.SEMANTIC),
                         read_nifti(self.phantom("semantic.nii.gz"), kind=VolumeKind.SEMANTIC))
        self.assertEqual(read_nifti(os.path.join(out, "instance.nii.gz"), kind=VolumeKind.INSTANCE),
                         read_nifti(self.phantom("instance.nii.gz"), kind=VolumeKind.INSTANCE))
        self.assertTrue(os.path.exists(os.path.join(out, "instance_raw.nii.gz")))
        with open(os.path.join(out, "report.json"), "r", encoding="utf-8") as f:
            self.assertEqual(json.load(f)["n_vertebrae"], 5)

    def test_segment_bad_predictor_uri(self):
        code = main(["segment", "--input", self.phantom("image.nii.gz"), "--semantic", "http://model",
                     "--instance", "oracle:" + self.phantom("instance.nii.gz"), "--out-dir", self.path("seg_bad")])
        self.assertEqual(code, 2)

    def test_evaluate_and_report(self):
        semantic, instance = self.phantom("semantic.nii.gz"), self.phantom("instance.nii.gz")
        evaluations = []
        for i in range(2):
            json_path = self.path("eval", f"sub{i}", "evaluation.json")
            csv_path = self.path("eval", f"sub{i}", "rows.csv")
            code = main(["evaluate", "--pred", semantic, "--ref", semantic, "--pred-instance", instance,
                         "--ref-instance", instance, "--json", json_path, "--csv", csv_path])
            self.assertEqual(code, 0)
            evaluations.append(json_path)

        with open(evaluations[0], "r", encoding="utf-8") as f:
            report = json.load(f)
        self.assertEqual(report["global_scores"]["vertebra"]["dice"], 1.0)
        self.assertEqual(report["instance_scores"]["vertebra"]["rq"], 1.0)
        self.assertTrue(os.path.exists(self.path("eval", "sub0", "rows.csv")))

        summary_csv, compare_csv = self.path("summary.csv"), self.path("compare.csv")
        code = main(["report", *evaluations, "--csv", summary_csv, "--baseline", *evaluations,
                     "--candidate", *evaluations, "--compare-csv", compare_csv, "--out-dir", self.path("report")])
        self.assertEqual(code, 0)
        table = pd.read_csv(summary_csv)
        dsc = table[(table["level"] == "global") & (table["structure"] == "vertebra") & (table["metric"] == "DSC")]
        self.assertEqual(float(dsc["mean"].iloc[0]), 1.0)
        self.assertEqual(int(dsc["count"].iloc[0]), 2)
        self.assertTrue(os.path.exists(compare_csv))

    def test_evaluate_grid_mismatch(self):
        other = self.path("other.nii.gz")
        vol = read_nifti(self.phantom("semantic.nii.gz"), kind=VolumeKind.SEMANTIC)
        write_nifti(vol.with_data(np.zeros((8, 8, 8))), other)
        json_path = self.path("mismatch", "evaluation.json")
        code = main(["evaluate", "--pred", other, "--ref", self.phantom("semantic.nii.gz"), "--json", json_path])
        self.assertEqual(code, 1)
        self.assertFalse(os.path.exists(json_path))

    def test_fuse(self):
        semantic = read_nifti(self.phantom("semantic.nii.gz"), kind=VolumeKind.SEMANTIC)
        data = semantic.data
        base = np.where(np.isin(data, [1, 11, 12, 14]), data, 0)
        substructures = np.where((data >= 2) & (data <= 9), data, 0)
        cord = (data == SemanticLabel.SPINAL_CORD).astype(np.uint16)
        paths = {}
        for name, array in (("base", base), ("sub", substructures), ("cord", cord)):
            paths[name] = self.path("fuse_in", f"{name}.nii.gz")
            write_nifti(semantic.with_data(array), paths[name])

        out = self.path("fuse_out")
        code = main(["fuse", "--base", paths["base"], "--substructures", paths["sub"], "--cord", paths["cord"],
                     "--out-dir", out, "--log-level", "WARNING"])
        self.assertEqual(code, 0)
        fused = read_nifti(os.path.join(out, "fused.nii.gz"), kind=VolumeKind.SEMANTIC)
        np.testing.assert_array_equal(fused.data == SemanticLabel.SPINAL_CORD, cord > 0)
        with open(os.path.join(out, "fusion_summary.json"), "r", encoding="utf-8") as f:
            summary = json.load(f)
        self.assertGreater(summary["endplates_synthesized"], 0)
        self.assertEqual(summary["substructure_blocked"], 0)
        self.assertEqual(summary["canal_to_cord"], 0)


if __name__ == "__main__":
    unittest.main()
