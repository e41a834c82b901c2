"""
Unit tests for the annotation service module.
"""
import unittest

import numpy as np

from src.models.report_models import FusionSummary
from src.services.annotation_service import (
    AnnotationSources,
    fuse_annotations,
    merge_sources,
    synthesize_endplates,
)
from src.services.label_service import SemanticLabel
from src.utils.error_handlers import LabelError, VolumeError
from tests.volume_fixtures import make_volume


def sources(base, substructures=None, cord=None):
    shape = base.shape
    return AnnotationSources(
        base=make_volume(base),
        substructures=make_volume(substructures if substructures is not None else np.zeros(shape)),
        cord=make_volume(cord if cord is not None else np.zeros(shape)),
    )


class TestMergeSources(unittest.TestCase):
    """Test cases for merge_sources."""

    def setUp(self):
        self.base = np.zeros((4, 4, 4), dtype=np.uint16)
        self.base[0, 0, 0] = SemanticLabel.CORPUS
        self.base[1, 1, 1] = SemanticLabel.SPINAL_CANAL

    def test_substructure_never_overwrites_base(self):
        sub = np.zeros((4, 4, 4), dtype=np.uint16)
        sub[0, 0, 0] = SemanticLabel.ARCUS
        sub[2, 2, 2] = SemanticLabel.ARCUS
        summary = FusionSummary()
        merged = merge_sources(sources(self.base, substructures=sub), summary)

        self.assertEqual(merged.data[0, 0, 0], SemanticLabel.CORPUS)
        self.assertEqual(merged.data[2, 2, 2], SemanticLabel.ARCUS)
        self.assertEqual(summary.substructure_blocked, 1)

    def test_cord_overwrites_canal_only(self):
        cord = np.zeros((4, 4, 4), dtype=np.uint8)
        cord[1, 1, 1] = cord[0, 0, 0] = cord[3, 3, 3] = 1
        summary = FusionSummary()
        merged = merge_sources(sources(self.base, cord=cord), summary)

        self.assertEqual(merged.data[1, 1, 1], SemanticLabel.SPINAL_CORD)
        self.assertEqual(merged.data[0, 0, 0], SemanticLabel.CORPUS)
        self.assertEqual(merged.data[3, 3, 3], SemanticLabel.SPINAL_CORD)
        self.assertEqual((summary.canal_to_cord, summary.cord_blocked), (1, 1))

    def test_unexpected_codes(self):
        base = self.base.copy()
        base[3, 0, 0] = SemanticLabel.ARCUS
        with self.assertRaises(LabelError):
            merge_sources(sources(base))

        sub = np.zeros((4, 4, 4), dtype=np.uint16)
        sub[3, 0, 0] = SemanticLabel.IVD
        with self.assertRaises(LabelError):
            merge_sources(sources(self.base, substructures=sub))

    def test_grid_mismatch(self):
        with self.assertRaises(VolumeError):
            AnnotationSources(
                base=make_volume(np.zeros((4, 4, 4))),
                substructures=make_volume(np.zeros((4, 4, 4)), spacing=(0.75, 0.75, 1.65)),
                cord=make_volume(np.zeros((4, 4, 4))),
            )


class TestSynthesizeEndplates(unittest.TestCase):
    """Test cases for synthesize_endplates."""

    def setUp(self):
        self.labels = np.zeros((7, 9, 7), dtype=np.uint16)
        self.labels[1:6, 1:4, 1:6] = SemanticLabel.CORPUS
        self.labels[1:6, 5:8, 1:6] = SemanticLabel.IVD

    def test_enclosed_sheet_becomes_endplate(self):
        """Test that the one-voxel background sheet between corpus and disc is converted."""
        summary = FusionSummary()
        out = synthesize_endplates(make_volume(self.labels), summary)

        expected = self.labels.copy()
        expected[1:6, 4, 1:6] = SemanticLabel.ENDPLATE
        np.testing.assert_array_equal(out.data, expected)
        self.assertEqual(summary.endplates_synthesized, 25)

    def test_direct_contact_unchanged(self):
        labels = self.labels.copy()
        labels[1:6, 4, 1:6] = SemanticLabel.IVD
        out = synthesize_endplates(make_volume(labels))
        np.testing.assert_array_equal(out.data, labels)

    def test_idempotent(self):
        once = synthesize_endplates(make_volume(self.labels))
        self.assertEqual(synthesize_endplates(once), once)


class TestFuseAnnotations(unittest.TestCase):
    """Test cases for fuse_annotations."""

    def test_summary(self):
        base = np.zeros((7, 9, 7), dtype=np.uint16)
        base[1:6, 1:4, 1:6] = SemanticLabel.CORPUS
        base[1:6, 5:8, 1:6] = SemanticLabel.IVD
        cord = np.zeros_like(base)
        cord[1:6, 4, 3] = 1

        fused, summary = fuse_annotations(sources(base, cord=cord))

        self.assertEqual(summary.label_counts["spinal_cord"], 5)
        self.assertEqual(summary.cord_in_transition, 5)
        self.assertEqual(summary.endplates_synthesized, 20)
        self.assertEqual(summary.label_counts["endplate"], 20)
        self.assertNotIn("background", summary.label_counts)
        self.assertEqual(int(np.count_nonzero(fused.data == SemanticLabel.ENDPLATE)), 20)


if __name__ == "__main__":
    unittest.main()
