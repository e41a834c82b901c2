"""
Unit tests for the assembly service module.
"""
import unittest

import numpy as np

from src.models.spec_models import NoiseSpec
from src.models.volume_models import VolumeKind
from src.services.assembly_service import (
    ABOVE,
    BELOW,
    CENTER,
    VertebraGroup,
    assemble,
    assign_disc_endplate_instances,
    find_corpus_centers,
    group_agreement,
    make_cutouts,
    nominal_members,
    reconcile,
)
from src.services.label_service import SemanticLabel
from src.services.phantom_service import OracleInstancePredictor, generate_phantom
from src.utils.error_handlers import VolumeError
from tests.volume_fixtures import cube_mask, make_volume, small_phantom_spec


class TestCorpusCenters(unittest.TestCase):
    """Test cases for find_corpus_centers and make_cutouts."""

    def test_phantom_centers_ordered_top_down(self):
        _, semantic, _ = generate_phantom(small_phantom_spec(5))
        centers = find_corpus_centers(semantic)
        self.assertEqual(len(centers), 5)
        rows = [c[1] for c in centers]
        self.assertEqual(rows, sorted(rows))

    def test_fused_pair_gives_one_center(self):
        _, semantic, _ = generate_phantom(small_phantom_spec(5, fuse_pairs=[(2, 3)]))
        self.assertEqual(len(find_corpus_centers(semantic)), 4)

    def test_speckle_filtered(self):
        data = np.zeros((10, 20, 10), dtype=np.uint16)
        data[cube_mask(data.shape, (2, 12, 2), 3)] = SemanticLabel.CORPUS
        data[cube_mask(data.shape, (2, 2, 2), 3)] = SemanticLabel.CORPUS
        data[8, 18, 8] = SemanticLabel.CORPUS
        centers = find_corpus_centers(make_volume(data))
        self.assertEqual(centers, [(3.0, 3.0, 3.0), (3.0, 13.0, 3.0)])

    def test_no_corpus(self):
        self.assertEqual(find_corpus_centers(make_volume(np.zeros((4, 4, 4)))), [])

    def test_cutout_placement(self):
        dims = (300, 400, 64)
        inside, edge = make_cutouts([(150.0, 200.0, 32.0), (10.0, 200.0, 32.0)], dims)
        self.assertEqual(inside.origin, (26, 48, 0))
        self.assertFalse(inside.shifted or inside.padded)
        self.assertEqual(edge.origin, (0, 48, 0))
        self.assertTrue(edge.shifted)
        self.assertEqual(edge.local_center, (10, 152, 32))
        self.assertEqual([inside.index, edge.index], [1, 2])

        padded, = make_cutouts([(50.0, 200.0, 32.0)], (100, 400, 64))
        self.assertEqual(padded.origin[0], -74)
        self.assertTrue(padded.padded)


class TestGroups(unittest.TestCase):
    """Test cases for group membership and agreement."""

    def test_nominal_members(self):
        self.assertEqual(nominal_members(1, 3), [(1, CENTER), (2, ABOVE)])
        self.assertEqual(nominal_members(2, 3), [(1, BELOW), (2, CENTER), (3, ABOVE)])
        self.assertEqual(nominal_members(3, 3), [(2, BELOW), (3, CENTER)])
        self.assertEqual(nominal_members(1, 1), [(1, CENTER)])

    def test_agreement(self):
        full, eroded, empty = np.arange(10), np.arange(5), np.array([], dtype=np.int64)
        self.assertEqual(group_agreement([full]), 1.0)
        self.assertAlmostEqual(group_agreement([full, full, eroded]), 7 / 9)
        self.assertEqual(group_agreement([full, empty]), 0.0)
        self.assertEqual(group_agreement([empty, empty]), 1.0)


class TestReconcile(unittest.TestCase):
    """Test cases for reconcile."""

    def test_majority_vote(self):
        exact = np.array([1, 2, 3])
        shifted = np.array([2, 3, 4])
        group = VertebraGroup(target_index=1, predictions=[exact, exact, shifted], agreement=0.8)
        instance, reports, flags = reconcile([group], (6, 1, 1))
        np.testing.assert_array_equal(instance.ravel(), [0, 1, 1, 1, 0, 0])
        self.assertEqual(reports[0].fused_voxels, 3)
        self.assertEqual(flags, [])

    def test_empty_prediction_does_not_vote(self):
        exact = np.array([1, 2])
        group = VertebraGroup(target_index=1, predictions=[exact, np.array([], dtype=np.int64), exact])
        instance, reports, _ = reconcile([group], (4, 1, 1))
        np.testing.assert_array_equal(instance.ravel(), [0, 1, 1, 0])
        self.assertEqual(reports[0].n_predictions, 2)

    def test_first_claim_by_agreement(self):
        """Test that the boundary voxel goes to the group with higher agreement."""
        a = VertebraGroup(target_index=1, predictions=[np.array([0, 1, 2])], agreement=0.9)
        b = VertebraGroup(target_index=2, predictions=[np.array([2, 3, 4])], agreement=0.7)
        instance, reports, _ = reconcile([a, b], (5, 1, 1))
        np.testing.assert_array_equal(instance.ravel(), [1, 1, 1, 2, 2])
        self.assertEqual(reports[1].conflict_voxels, 1)

        a.agreement, b.agreement = 0.5, 0.7
        instance, _, _ = reconcile([a, b], (5, 1, 1))
        np.testing.assert_array_equal(instance.ravel(), [1, 1, 2, 2, 2])

    def test_union_fallback_and_renumbering(self):
        a = VertebraGroup(target_index=1, predictions=[np.array([0, 1])], agreement=0.9)
        b = VertebraGroup(target_index=2, predictions=[np.array([1]), np.array([1, 2]), np.array([0, 3])], agreement=0.2)
        c = VertebraGroup(target_index=3, predictions=[], agreement=1.0)
        instance, reports, flags = reconcile([a, b, c], (5, 1, 1))
        np.testing.assert_array_equal(instance.ravel(), [1, 1, 2, 2, 0])
        self.assertEqual(reports[1].fallback, "union")
        self.assertEqual(len(flags), 2)

    def test_steal_takes_only_own_vote(self):
        a = VertebraGroup(target_index=1, predictions=[np.array([0, 1, 2, 3])], agreement=0.9)
        b = VertebraGroup(
            target_index=2, predictions=[np.array([0, 1]), np.array([0, 1]), np.array([2])], agreement=0.2
        )
        instance, reports, flags = reconcile([a, b], (5, 1, 1))
        np.testing.assert_array_equal(instance.ravel(), [2, 2, 1, 1, 0])
        self.assertEqual(reports[1].fallback, "steal")
        self.assertEqual(reports[1].fused_voxels, 2)
        self.assertEqual(len(flags), 1)

    def test_steal_that_empties_a_group_is_flagged(self):
        a = VertebraGroup(target_index=1, predictions=[np.array([0, 1])], agreement=0.9)
        b = VertebraGroup(target_index=2, predictions=[np.array([0, 1])], agreement=0.2)
        instance, reports, flags = reconcile([a, b], (3, 1, 1))
        np.testing.assert_array_equal(instance.ravel(), [1, 1, 0])
        self.assertEqual(reports[0].fused_voxels, 0)
        self.assertEqual(reports[1].fallback, "steal")
        self.assertTrue(any("emptied" in flag for flag in flags))


class TestDiscEndplateAssignment(unittest.TestCase):
    """Test cases for assign_disc_endplate_instances."""

    def test_nearest_above(self):
        semantic = np.zeros((1, 20, 1), dtype=np.uint16)
        vertebrae = np.zeros_like(semantic)
        semantic[0, 2:5, 0] = SemanticLabel.CORPUS
        vertebrae[0, 2:5, 0] = 1
        semantic[0, 5, 0] = SemanticLabel.ENDPLATE
        semantic[0, 7:9, 0] = SemanticLabel.IVD
        semantic[0, 10:13, 0] = SemanticLabel.CORPUS
        vertebrae[0, 10:13, 0] = 2
        semantic[0, 15:17, 0] = SemanticLabel.IVD

        instance, flags = assign_disc_endplate_instances(semantic, vertebrae)
        self.assertEqual(instance[0, 5, 0], 201)
        self.assertEqual(instance[0, 7, 0], 101)
        self.assertEqual(instance[0, 15, 0], 102)
        self.assertEqual(flags, [])

    def test_disc_above_all_vertebrae(self):
        semantic = np.zeros((1, 10, 1), dtype=np.uint16)
        vertebrae = np.zeros_like(semantic)
        semantic[0, 1:3, 0] = SemanticLabel.IVD
        semantic[0, 5:8, 0] = SemanticLabel.CORPUS
        vertebrae[0, 5:8, 0] = 1

        instance, flags = assign_disc_endplate_instances(semantic, vertebrae)
        self.assertEqual(instance[0, 1, 0], 101)
        self.assertEqual(len(flags), 1)


class TestAssemble(unittest.TestCase):
    """Test cases for assemble."""

    def test_oracle_reproduces_ground_truth(self):
        """Test that zero-noise cutout predictions rebuild the ground-truth instances."""
        _, semantic, instance = generate_phantom(small_phantom_spec(5))
        result, report = assemble(semantic, OracleInstancePredictor(instance, NoiseSpec.zero()))

        self.assertEqual(result.kind, VolumeKind.INSTANCE)
        np.testing.assert_array_equal(result.data, instance.data)
        self.assertEqual(report.n_vertebrae, 5)
        self.assertTrue(all(c.padded for c in report.cutouts))
        self.assertTrue(all(g.agreement == 1.0 for g in report.groups))
        self.assertEqual(report.flags, [])

    def test_rejects_non_semantic_input(self):
        with self.assertRaises(VolumeError):
            assemble(make_volume(np.zeros((4, 4, 4)), kind=VolumeKind.INTENSITY), None)


if __name__ == "__main__":
    unittest.main()
