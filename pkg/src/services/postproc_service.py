"""
Post-processing service module

This module enforces consistency between a semantic and an instance mask:
hole filling, zeroing instance voxels outside instance-bearing structures,
and handing orphaned semantic voxels to a neighbouring instance.
"""
import logging

import numpy as np
from scipy import ndimage

from src.models.report_models import ConsistencyReport
from src.services.assembly_service import corpus_centroid_rows, nearest_above
from src.services.label_service import (
    ENDPLATE_OFFSET,
    INSTANCE_CODES,
    IVD_OFFSET,
    InstanceKind,
    SemanticLabel,
    instance_id,
)
from src.services.volume_service import STRUCTURE_26, connected_components, fill_holes, require_same_grid
from src.utils.error_handlers import handle_exceptions

# Set up logging
logger = logging.getLogger(__name__)

# (semantic codes, instance kind, id range) handled together during orphan assignment
ORPHAN_KINDS = (
    (range(SemanticLabel.CORPUS, SemanticLabel.ENDPLATE), InstanceKind.VERTEBRA, (1, IVD_OFFSET - 1)),
    ((SemanticLabel.ENDPLATE,), InstanceKind.ENDPLATE, (ENDPLATE_OFFSET + 1, ENDPLATE_OFFSET + 99)),
    ((SemanticLabel.IVD,), InstanceKind.IVD, (IVD_OFFSET + 1, IVD_OFFSET + 99)),
)


def instance_relevant(semantic):
    """Voxels whose semantic code carries an instance id (codes 1..11)."""
    return (semantic >= min(INSTANCE_CODES)) & (semantic <= max(INSTANCE_CODES))


def _padded(slices, shape):
    return tuple(slice(max(0, s.start - 1), min(n, s.stop + 1)) for s, n in zip(slices, shape))


def _fill_label_holes(labels, ids):
    """Fill background holes of each id, ascending. Returns the mask of converted voxels."""
    added = np.zeros(labels.shape, dtype=bool)
    boxes = ndimage.find_objects(labels)
    for value in ids:
        if value > len(boxes) or boxes[value - 1] is None:
            continue
        window = _padded(boxes[value - 1], labels.shape)
        crop = labels[window]
        filled = fill_holes(crop == value) & (crop == 0)
        if filled.any():
            crop[filled] = value
            added[window] |= filled
    return added


def _neighbour_vote(component, instance, low, high):
    """Most frequent same-kind id on the component's 26-neighbourhood shell (ties to the smaller id)."""
    shell = ndimage.binary_dilation(component, structure=STRUCTURE_26) & ~component
    ids = instance[shell]
    ids = ids[(ids >= low) & (ids <= high)]
    if ids.size == 0:
        return None
    values, counts = np.unique(ids, return_counts=True)
    return int(values[np.argmax(counts)])


def _nearest_vertebra(center, centers):
    if not centers:
        return None
    point = np.asarray(center)
    return min(centers, key=lambda v: (float(np.sum((np.asarray(centers[v]) - point) ** 2)), v))


def _assign_orphans(semantic, instance, flags):
    """
    Hand every orphan component to an instance; decisions use the pre-assignment mask.

    Without any vertebra instance there is nothing to anchor ids to, so the
    orphans stay at 0 and only their sizes are returned.
    """
    before = instance.copy()
    vertebra_ids = [int(v) for v in np.unique(before) if 0 < v < IVD_OFFSET]
    orphan = instance_relevant(semantic) & (before == 0)
    assigned, unassigned = [], []

    if not vertebra_ids:
        if np.any(orphan):
            components = connected_components(orphan, connectivity=26)
            unassigned = [int(s) for s in components.sizes]
            flags.append(f"{len(unassigned)} orphan components left unassigned: no vertebra instance")
            logger.warning(f"No vertebra instance to receive {len(unassigned)} orphan components; left at 0")
        return assigned, unassigned

    mask = (before > 0) & (before < IVD_OFFSET)
    centers = dict(zip(vertebra_ids, ndimage.center_of_mass(mask, before, vertebra_ids)))
    rows = corpus_centroid_rows(semantic, np.where(before < IVD_OFFSET, before, 0))

    for codes, kind, (low, high) in ORPHAN_KINDS:
        components = connected_components(orphan & np.isin(semantic, list(codes)), connectivity=26)
        for index in range(1, components.count + 1):
            lo, hi = zip(*components.bboxes[index - 1])
            window = _padded([slice(a, b) for a, b in zip(lo, hi)], semantic.shape)
            component = components.labels[window] == index

            target = _neighbour_vote(component, before[window], low, high)
            if target is None and kind is InstanceKind.VERTEBRA:
                target = _nearest_vertebra(components.centers[index - 1], centers)
            elif target is None:
                vertebra, fallback = nearest_above(components.centers[index - 1][1], rows)
                target = instance_id(kind, vertebra)
                if fallback:
                    flags.append(f"orphan {kind.value} above all vertebrae assigned to {target}")

            instance[window][component] = target
            assigned.append((int(components.sizes[index - 1]), int(target)))

    return assigned, unassigned


@handle_exceptions
def enforce_consistency(semantic, instance, flags=None):
    """
    Make semantic and instance foreground agree.

    Steps: fill background holes per semantic class, fill background holes
    per instance id, clear instance voxels whose semantic code carries no
    instance, then assign orphan components by neighbour count. Orphans
    stay at 0 when the instance mask holds no vertebra.

    Args:
        semantic (Volume): Semantic mask
        instance (Volume): Instance mask on the same grid
        flags (list): Optional list receiving fallback notes

    Returns:
        tuple: (semantic Volume, instance Volume, ConsistencyReport)

    Raises:
        VolumeError: On grid mismatch
    """
    require_same_grid(semantic, instance)
    flags = flags if flags is not None else []

    sem = np.array(semantic.data, copy=True)
    sem_added = _fill_label_holes(sem, [int(label) for label in SemanticLabel if label])

    inst = np.array(instance.data, copy=True)
    ids = [int(v) for v in np.unique(inst) if v]
    inst_added = _fill_label_holes(inst, ids)

    clear = (inst != 0) & ~instance_relevant(sem)
    inst[clear] = 0
    zeroed = int(np.count_nonzero(clear & ~inst_added))
    holes_filled = int(np.count_nonzero(sem_added)) + int(np.count_nonzero(inst_added & ~clear))

    assigned, unassigned = _assign_orphans(sem, inst, flags)

    report = ConsistencyReport(
        holes_filled=holes_filled, zeroed=zeroed, orphans_assigned=assigned, orphans_unassigned=unassigned
    )
    logger.info(
        f"Consistency: {report.holes_filled} voxels filled, {report.zeroed} zeroed, "
        f"{len(report.orphans_assigned)} orphan components assigned, {len(report.orphans_unassigned)} left"
    )
    return semantic.with_data(sem), instance.with_data(inst), report


def foreground_equal(semantic, instance):
    """True iff instance-bearing semantic foreground equals instance foreground."""
    require_same_grid(semantic, instance)
    return bool(np.array_equal(instance_relevant(semantic.data), instance.data != 0))
