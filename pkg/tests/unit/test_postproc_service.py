"""
Unit tests for the post-processing service module.
"""
import unittest

import numpy as np

from src.models.volume_models import VolumeKind
from src.services.label_service import SemanticLabel
from src.services.phantom_service import generate_phantom
from src.services.postproc_service import enforce_consistency, foreground_equal
from src.utils.error_handlers import VolumeError
from tests.volume_fixtures import cube_mask, make_volume, small_phantom_spec


def pair(semantic, instance):
    return make_volume(semantic), make_volume(instance, kind=VolumeKind.INSTANCE)


class TestEnforceConsistency(unittest.TestCase):
    """Test cases for enforce_consistency."""

    def test_consistent_phantom_unchanged(self):
        _, semantic, instance = generate_phantom(small_phantom_spec(5))
        sem, inst, report = enforce_consistency(semantic, instance)
        self.assertTrue(report.is_noop)
        self.assertEqual(sem, semantic)
        self.assertEqual(inst, instance)

    def test_stray_instance_voxel_cleared(self):
        semantic = np.zeros((10, 10, 10), dtype=np.uint16)
        semantic[cube_mask(semantic.shape, (2, 2, 2), 3)] = SemanticLabel.CORPUS
        instance = (semantic > 0).astype(np.uint16)
        instance[8, 8, 8] = 1

        sem, inst, report = enforce_consistency(*pair(semantic, instance))
        self.assertEqual(inst.data[8, 8, 8], 0)
        self.assertEqual(report.zeroed, 1)
        self.assertEqual(report.holes_filled, 0)
        self.assertTrue(foreground_equal(sem, inst))

    def test_holes_filled(self):
        """Test that a hollow corpus and its instance are filled."""
        shape = (9, 9, 9)
        shell = cube_mask(shape, (1, 1, 1), 5) & ~cube_mask(shape, (2, 2, 2), 3)
        semantic = np.where(shell, SemanticLabel.CORPUS, 0).astype(np.uint16)
        instance = shell.astype(np.uint16) * 3

        sem, inst, report = enforce_consistency(*pair(semantic, instance))
        solid = cube_mask(shape, (1, 1, 1), 5)
        np.testing.assert_array_equal(sem.data == SemanticLabel.CORPUS, solid)
        np.testing.assert_array_equal(inst.data == 3, solid)
        self.assertEqual(report.holes_filled, 54)

    def test_orphan_goes_to_majority_neighbour(self):
        """Test that an orphan touching id 3 on 10 voxels and id 4 on 2 joins id 3."""
        semantic = np.zeros((12, 12, 12), dtype=np.uint16)
        instance = np.zeros_like(semantic)
        semantic[5, 5, 5] = SemanticLabel.ARCUS
        semantic[4, 4:7, 4:7] = SemanticLabel.CORPUS
        instance[4, 4:7, 4:7] = 3
        semantic[5, 5, 4] = SemanticLabel.CORPUS
        instance[5, 5, 4] = 3
        for voxel in ((6, 5, 5), (6, 6, 6)):
            semantic[voxel] = SemanticLabel.CORPUS
            instance[voxel] = 4

        sem, inst, report = enforce_consistency(*pair(semantic, instance))
        self.assertEqual(inst.data[5, 5, 5], 3)
        self.assertEqual(report.orphans_assigned, [(1, 3)])
        self.assertTrue(foreground_equal(sem, inst))

    def test_orphan_disc_without_neighbour(self):
        semantic = np.zeros((1, 12, 1), dtype=np.uint16)
        instance = np.zeros_like(semantic)
        semantic[0, 1:4, 0] = SemanticLabel.CORPUS
        instance[0, 1:4, 0] = 2
        semantic[0, 8:10, 0] = SemanticLabel.IVD

        flags = []
        _, inst, report = enforce_consistency(*pair(semantic, instance), flags=flags)
        self.assertEqual(inst.data[0, 8, 0], 102)
        self.assertEqual(report.orphans_assigned, [(2, 102)])
        self.assertEqual(flags, [])

    def test_orphans_without_any_vertebra_stay_unassigned(self):
        semantic = np.zeros((1, 12, 1), dtype=np.uint16)
        semantic[0, 1:4, 0] = SemanticLabel.ARCUS
        semantic[0, 6:8, 0] = SemanticLabel.IVD
        semantic[0, 9, 0] = SemanticLabel.ENDPLATE

        flags = []
        _, inst, report = enforce_consistency(*pair(semantic, np.zeros_like(semantic)), flags=flags)
        self.assertFalse(np.any(inst.data))
        self.assertEqual(report.orphans_assigned, [])
        self.assertEqual(sorted(report.orphans_unassigned), [1, 2, 3])
        self.assertEqual(len(flags), 1)

    def test_idempotent_on_random_masks(self):
        """Test that a second pass changes nothing."""
        rng = np.random.default_rng(21)
        for _ in range(100):
            semantic = rng.integers(0, 15, size=(10, 10, 10)).astype(np.uint16)
            instance = rng.choice(np.array([0, 1, 2, 101, 201], dtype=np.uint16), size=(10, 10, 10))
            sem, inst, _ = enforce_consistency(*pair(semantic, instance))
            self.assertTrue(foreground_equal(sem, inst))

            sem2, inst2, report = enforce_consistency(sem, inst)
            self.assertTrue(report.is_noop)
            self.assertEqual(sem2, sem)
            self.assertEqual(inst2, inst)

    def test_grid_mismatch(self):
        with self.assertRaises(VolumeError):
            enforce_consistency(make_volume(np.zeros((4, 4, 4))), make_volume(np.zeros((4, 4, 5)), kind=VolumeKind.INSTANCE))


class TestForegroundEqual(unittest.TestCase):
    """Test cases for foreground_equal."""

    def test_canal_without_instance(self):
        semantic = np.zeros((3, 3, 3), dtype=np.uint16)
        semantic[1, 1, 1] = SemanticLabel.SPINAL_CANAL
        self.assertTrue(foreground_equal(*pair(semantic, np.zeros_like(semantic))))

    def test_corpus_without_instance(self):
        semantic = np.zeros((3, 3, 3), dtype=np.uint16)
        semantic[1, 1, 1] = SemanticLabel.CORPUS
        self.assertFalse(foreground_equal(*pair(semantic, np.zeros_like(semantic))))


if __name__ == "__main__":
    unittest.main()
