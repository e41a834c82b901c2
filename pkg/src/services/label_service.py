"""
Label service module

This module defines the 14-structure semantic taxonomy and the instance id
scheme shared by every other service.
"""
import json
import logging
from enum import Enum, IntEnum

from pydantic import BaseModel

from src.utils.error_handlers import LabelError

# Set up logging
logger = logging.getLogger(__name__)


class SemanticLabel(IntEnum):
    BACKGROUND = 0
    CORPUS = 1
    ARCUS = 2
    SPINOUS_PROCESS = 3
    ARTICULAR_INFERIOR_LEFT = 4
    ARTICULAR_INFERIOR_RIGHT = 5
    ARTICULAR_SUPERIOR_LEFT = 6
    ARTICULAR_SUPERIOR_RIGHT = 7
    COSTAL_PROCESS_LEFT = 8
    COSTAL_PROCESS_RIGHT = 9
    ENDPLATE = 10
    IVD = 11
    SPINAL_CANAL = 12
    SPINAL_CORD = 13
    SACRUM = 14

    @property
    def label_name(self):
        return self.name.lower()


N_CLASSES = len(SemanticLabel)


class InstanceKind(str, Enum):
    VERTEBRA = "vertebra"
    IVD = "ivd"
    ENDPLATE = "endplate"


class InstanceInfo(BaseModel):
    kind: InstanceKind
    order_index: int


IVD_OFFSET = 100
ENDPLATE_OFFSET = 200

# Codes that carry instance ids (vertebra substructures, endplate, disc)
INSTANCE_CODES = frozenset(range(SemanticLabel.CORPUS, SemanticLabel.IVD + 1))
# Structures with a single instance by nature
SINGLE_INSTANCE_CODES = frozenset({SemanticLabel.SPINAL_CANAL, SemanticLabel.SPINAL_CORD, SemanticLabel.SACRUM})


def vertebra_substructure_codes():
    """Codes 1..10: the ten vertebra substructures, endplate included."""
    return frozenset(range(SemanticLabel.CORPUS, SemanticLabel.ENDPLATE + 1))


def vertebra_body_codes():
    """Substructure codes that carry the vertebra's own id (endplates excluded)."""
    return vertebra_substructure_codes() - {SemanticLabel.ENDPLATE}


def classify_instance_id(value):
    """
    Recover kind and vertical order from an instance id.

    Args:
        value (int): Positive instance id

    Returns:
        InstanceInfo: kind and 1-based order index

    Raises:
        LabelError: If the id lies outside all ranges
    """
    value = int(value)
    if 1 <= value <= 99:
        return InstanceInfo(kind=InstanceKind.VERTEBRA, order_index=value)
    if IVD_OFFSET + 1 <= value <= IVD_OFFSET + 99:
        return InstanceInfo(kind=InstanceKind.IVD, order_index=value - IVD_OFFSET)
    if ENDPLATE_OFFSET + 1 <= value <= ENDPLATE_OFFSET + 99:
        return InstanceInfo(kind=InstanceKind.ENDPLATE, order_index=value - ENDPLATE_OFFSET)
    raise LabelError(f"instance id {value} is outside the vertebra/ivd/endplate ranges")


def instance_id(kind, order_index):
    """Inverse of classify_instance_id."""
    kind = InstanceKind(kind)
    if not 1 <= order_index <= 99:
        raise LabelError(f"order index {order_index} outside 1..99")
    offset = {InstanceKind.VERTEBRA: 0, InstanceKind.IVD: IVD_OFFSET, InstanceKind.ENDPLATE: ENDPLATE_OFFSET}[kind]
    return offset + int(order_index)


def id_range(kind):
    """Inclusive (low, high) id range of an instance kind."""
    low = instance_id(kind, 1)
    return low, low + 98


def label_kind(code):
    """Short category of a semantic code used in the label map."""
    code = SemanticLabel(code)
    if code is SemanticLabel.BACKGROUND:
        return "background"
    if code is SemanticLabel.ENDPLATE:
        return "endplate"
    if code is SemanticLabel.IVD:
        return "ivd"
    if code in SINGLE_INSTANCE_CODES:
        return "single_instance"
    return "vertebra_substructure"


def label_map():
    """Machine-readable code/name/kind table."""
    return [
        {"code": int(label), "name": label.label_name, "kind": label_kind(label)}
        for label in SemanticLabel
    ]


def write_label_map(path):
    """Write labels.json next to an output."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(label_map(), f, indent=4)
    logger.debug(f"Wrote label map to {path}")


def read_label_map(path):
    """
    Read labels.json back into a code -> SemanticLabel dict.

    Raises:
        LabelError: If an entry does not match the taxonomy
    """
    with open(path, "r", encoding="utf-8") as f:
        entries = json.load(f)

    result = {}
    for entry in entries:
        try:
            label = SemanticLabel(int(entry["code"]))
        except (KeyError, ValueError) as e:
            raise LabelError(f"unknown label entry {entry}") from e
        if entry.get("name") != label.label_name:
            raise LabelError(f"label {label.value} is named {entry.get('name')!r}, expected {label.label_name!r}")
        result[label.value] = label
    return result
