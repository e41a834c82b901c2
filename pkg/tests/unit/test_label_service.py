"""
Unit tests for the label service module.
"""
import json
import os
import tempfile
import unittest

from src.services.label_service import (
    INSTANCE_CODES,
    SINGLE_INSTANCE_CODES,
    InstanceKind,
    SemanticLabel,
    classify_instance_id,
    id_range,
    instance_id,
    label_map,
    read_label_map,
    vertebra_body_codes,
    vertebra_substructure_codes,
    write_label_map,
)
from src.utils.error_handlers import LabelError


class TestLabelService(unittest.TestCase):
    """Test cases for the label taxonomy and instance ids."""

    def test_classify_instance_ids(self):
        """Test the three id ranges."""
        info = classify_instance_id(3)
        self.assertEqual((info.kind, info.order_index), (InstanceKind.VERTEBRA, 3))
        info = classify_instance_id(104)
        self.assertEqual((info.kind, info.order_index), (InstanceKind.IVD, 4))
        info = classify_instance_id(204)
        self.assertEqual((info.kind, info.order_index), (InstanceKind.ENDPLATE, 4))

    def test_out_of_range_ids_rejected(self):
        for value in (0, 100, 200, 300):
            with self.assertRaises(LabelError):
                classify_instance_id(value)

    def test_instance_id_inverts_classify(self):
        for kind in InstanceKind:
            for order in (1, 7, 99):
                info = classify_instance_id(instance_id(kind, order))
                self.assertEqual((info.kind, info.order_index), (kind, order))
        self.assertEqual(id_range(InstanceKind.IVD), (101, 199))
        with self.assertRaises(LabelError):
            instance_id(InstanceKind.VERTEBRA, 100)

    def test_code_sets(self):
        """Test the substructure, body and single-instance code sets."""
        self.assertEqual(len(vertebra_substructure_codes()), 10)
        self.assertIn(SemanticLabel.ENDPLATE, vertebra_substructure_codes())
        self.assertNotIn(SemanticLabel.IVD, vertebra_substructure_codes())
        self.assertEqual(vertebra_body_codes(), frozenset(range(1, 10)))
        self.assertEqual(INSTANCE_CODES, frozenset(range(1, 12)))
        self.assertEqual(SINGLE_INSTANCE_CODES, {12, 13, 14})

    def test_label_map_round_trip(self):
        """Test that labels.json lists all 15 codes and reads back."""
        entries = label_map()
        self.assertEqual([e["code"] for e in entries], list(range(15)))
        self.assertEqual(entries[14], {"code": 14, "name": "sacrum", "kind": "single_instance"})

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "labels.json")
            write_label_map(path)
            self.assertEqual(read_label_map(path)[11], SemanticLabel.IVD)

            entries[3]["name"] = "spine_tip"
            with open(path, "w", encoding="utf-8") as f:
                json.dump(entries, f)
            with self.assertRaises(LabelError):
                read_label_map(path)


if __name__ == "__main__":
    unittest.main()
