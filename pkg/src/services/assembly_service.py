"""
Assembly service module

This module turns a semantic mask into vertebra, disc and endplate
instances: corpus-centroid cutouts, per-cutout above/center/below
predictions, agreement-ordered reconciliation and nearest-above
disc/endplate labelling.
"""
import logging
import math
from itertools import combinations
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from src.models.report_models import AssemblyReport, Cutout, GroupReport
from src.models.spec_models import CUTOUT_SIZE
from src.models.volume_models import VolumeKind
from src.services.label_service import InstanceKind, SemanticLabel, instance_id
from src.services.predictor_service import positioned_patch
from src.services.volume_service import connected_components, crop_window
from src.utils.error_handlers import VolumeError, handle_exceptions
from src.utils.thread_manager import run_in_workers

# Set up logging
logger = logging.getLogger(__name__)

ABOVE, CENTER, BELOW = 1, 2, 3


class VertebraGroup(BaseModel):
    """
    All predictions of one vertebra.

    Masks are stored as sorted flat voxel indices into the volume.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    target_index: int
    predictions: List[np.ndarray] = Field(default_factory=list)
    agreement: float = 1.0

    @property
    def non_empty(self):
        return [p for p in self.predictions if p.size]


def find_corpus_centers(semantic, min_volume_fraction=0.10):
    """
    Centroids of the corpus components, ordered superior to inferior.

    Components smaller than min_volume_fraction times the median
    component volume are discarded.

    Args:
        semantic (Volume): Semantic mask
        min_volume_fraction: Speckle threshold relative to the median

    Returns:
        list: (axis0, axis1, axis2) voxel centroids
    """
    components = connected_components(semantic.data == SemanticLabel.CORPUS, connectivity=26)
    if components.count == 0:
        return []

    cutoff = min_volume_fraction * float(np.median(components.sizes))
    kept = [
        (center[1], index, center)
        for index, (size, center) in enumerate(zip(components.sizes, components.centers))
        if size >= cutoff
    ]
    dropped = components.count - len(kept)
    if dropped:
        logger.info(f"Discarded {dropped} corpus speckle components below {cutoff:.0f} voxels")
    return [center for _, _, center in sorted(kept)]


def _place(center, size, dim):
    """Window origin along one axis: shifted inside when it fits, centered with padding otherwise."""
    origin = int(round(center)) - size // 2
    if size > dim:
        return -((size - dim) // 2), False, True
    clamped = min(max(origin, 0), dim - size)
    return clamped, clamped != origin, False


def make_cutouts(centers, dims, size=CUTOUT_SIZE):
    """
    One fixed-size window per corpus centroid.

    Args:
        centers: Ordered centroids
        dims: Volume dims
        size: Window dims

    Returns:
        list[Cutout]
    """
    cutouts = []
    for index, center in enumerate(centers, start=1):
        placed = [_place(c, s, d) for c, s, d in zip(center, size, dims)]
        cutouts.append(Cutout(
            index=index,
            center=tuple(float(c) for c in center),
            origin=tuple(p[0] for p in placed),
            size=tuple(int(s) for s in size),
            shifted=any(p[1] for p in placed),
            padded=any(p[2] for p in placed),
        ))
    return cutouts


def predict_cutouts(semantic, cutouts, predictor, workers=1):
    """
    Run the instance predictor on every cutout.

    Returns:
        list[np.ndarray]: uint8 label windows (0..3), in cutout order
    """
    def predict(cutout):
        window = positioned_patch(
            semantic,
            crop_window(semantic.data, cutout.origin, cutout.size),
            cutout.origin,
            kind=VolumeKind.SEMANTIC,
        )
        labels = predictor.predict_cutout(window, cutout.local_center)
        logger.debug(f"Cutout {cutout.index} at {cutout.origin}: {int(np.count_nonzero(labels))} labelled voxels")
        return labels

    return run_in_workers(predict, cutouts, max_workers=workers, desc="cutouts")


def nominal_members(index, n_cutouts):
    """
    (cutout index, label) slots predicting vertebra `index`.

    The cutout above sees it as "below", its own cutout as "center" and
    the cutout below as "above".
    """
    slots = []
    if index > 1:
        slots.append((index - 1, BELOW))
    slots.append((index, CENTER))
    if index < n_cutouts:
        slots.append((index + 1, ABOVE))
    return slots


def _flat_indices(labels, value, origin, shape):
    local = np.nonzero(labels == value)
    coords = [axis + int(o) for axis, o in zip(local, origin)]
    inside = np.ones(coords[0].shape, dtype=bool)
    for axis, n in zip(coords, shape):
        inside &= (axis >= 0) & (axis < n)
    # C order of the window is preserved, so the result is sorted
    return np.ravel_multi_index([axis[inside] for axis in coords], shape).astype(np.int64)


def flat_dice(a, b):
    """Dice of two masks given as sorted flat index arrays."""
    if a.size + b.size == 0:
        return 1.0
    overlap = np.intersect1d(a, b, assume_unique=True).size
    return 2.0 * overlap / (a.size + b.size)


def group_agreement(predictions):
    """
    Mean pairwise Dice of a group's predictions.

    Pairs of two empty masks are skipped; empty versus non-empty counts
    as 0. A group without scored pairs agrees perfectly.
    """
    scores = [
        flat_dice(a, b)
        for a, b in combinations(predictions, 2)
        if a.size or b.size
    ]
    return float(np.mean(scores)) if scores else 1.0


def collect_groups(predictions, cutouts, shape):
    """
    Gather the up-to-three predictions of every vertebra.

    Args:
        predictions: Label windows from predict_cutouts
        cutouts: The matching cutouts
        shape: Volume dims

    Returns:
        list[VertebraGroup]: One group per cutout, in cutout order
    """
    n = len(cutouts)

    def build(index):
        masks = [
            _flat_indices(predictions[member - 1], value, cutouts[member - 1].origin, shape)
            for member, value in nominal_members(index, n)
        ]
        return VertebraGroup(target_index=index, predictions=masks, agreement=group_agreement(masks))

    return [build(index) for index in range(1, n + 1)]


def reconcile(groups, shape):
    """
    Fuse the groups into disjoint vertebra instances.

    Groups are finalized in descending agreement (ties by index). A voxel
    joins a group's mask when at least ceil(k/2) of its k non-empty
    predictions contain it; voxels claimed by earlier groups are skipped.
    A group left with nothing takes the unclaimed part of its union, and
    failing that steals its own vote from earlier groups (flagged, as is
    any group the steal empties).

    Returns:
        tuple: (uint16 instance array with ids 1..M top-down, list[GroupReport], flags)
    """
    size = int(np.prod(shape))
    claimed = np.zeros(size, dtype=bool)
    owner = np.zeros(size, dtype=np.uint16)
    reports, flags = {}, []

    for group in sorted(groups, key=lambda g: (-g.agreement, g.target_index)):
        votes = group.non_empty
        report = GroupReport(target_index=group.target_index, n_predictions=len(votes), agreement=group.agreement)
        reports[group.target_index] = report
        if not votes:
            flags.append(f"group {group.target_index}: no prediction")
            logger.warning(f"Vertebra group {group.target_index} has no non-empty prediction")
            continue

        values, counts = np.unique(np.concatenate(votes), return_counts=True)
        fused = values[counts >= math.ceil(len(votes) / 2)]
        free = fused[~claimed[fused]]
        report.conflict_voxels = int(fused.size - free.size)

        if free.size == 0:
            free = values[~claimed[values]]
            report.fallback = "union"
            if free.size == 0:
                free = fused
                report.fallback = "steal"
            flags.append(f"group {group.target_index}: {report.fallback} fallback")
            logger.warning(f"Vertebra group {group.target_index} used the {report.fallback} fallback")

        previous = set(int(v) for v in np.unique(owner[free]) if v)
        claimed[free] = True
        owner[free] = group.target_index
        report.fused_voxels = int(free.size)

        for target in sorted(previous):
            if not np.any(owner == target):
                reports[target].fused_voxels = 0
                flags.append(f"group {target}: emptied by the steal of group {group.target_index}")
                logger.warning(f"Vertebra group {target} lost all voxels to group {group.target_index}")

    present = sorted(int(v) for v in np.unique(owner) if v)
    lookup = np.zeros(len(groups) + 1, dtype=np.uint16)
    for new_id, target in enumerate(present, start=1):
        lookup[target] = new_id
    instance = lookup[owner].reshape(shape)

    ordered = [reports[g.target_index] for g in groups]
    logger.info(f"Reconciled {len(groups)} groups into {len(present)} vertebrae")
    return instance, ordered, flags


def corpus_centroid_rows(semantic, vertebrae):
    """
    Axis-1 corpus centroid per vertebra id.

    Falls back to the whole instance when it holds no corpus voxel.
    """
    ids = [int(v) for v in np.unique(vertebrae) if 0 < v < 100]
    if not ids:
        return {}
    corpus = np.where(semantic == SemanticLabel.CORPUS, vertebrae, 0)
    rows = {}
    corpus_present = set(int(v) for v in np.unique(corpus) if v)
    with_corpus = [v for v in ids if v in corpus_present]
    for v, center in zip(with_corpus, ndimage.center_of_mass(corpus > 0, corpus, with_corpus)):
        rows[v] = center[1]
    rest = [v for v in ids if v not in corpus_present]
    if rest:
        for v, center in zip(rest, ndimage.center_of_mass(vertebrae > 0, vertebrae, rest)):
            rows[v] = center[1]
    return rows


def nearest_above(row, centroid_rows):
    """
    Vertebra whose centroid is the closest one strictly above `row`.

    Returns:
        tuple: (vertebra id, fallback flag); (None, True) without vertebrae
    """
    if not centroid_rows:
        return None, True
    above = [(row - r, v) for v, r in centroid_rows.items() if r < row]
    if above:
        return min(above)[1], False
    return min(centroid_rows, key=lambda v: (centroid_rows[v], v)), True


def assign_disc_endplate_instances(semantic, vertebrae):
    """
    Label disc and endplate components after the nearest vertebra above.

    Args:
        semantic (np.ndarray): Semantic labels
        vertebrae (np.ndarray): Vertebra instance ids

    Returns:
        tuple: (uint16 instance array, flags)
    """
    instance = np.array(vertebrae, dtype=np.uint16, copy=True)
    rows = corpus_centroid_rows(semantic, vertebrae)
    flags = []

    for code, kind in ((SemanticLabel.IVD, InstanceKind.IVD), (SemanticLabel.ENDPLATE, InstanceKind.ENDPLATE)):
        components = connected_components(semantic == code, connectivity=26)
        for index in range(1, components.count + 1):
            center = components.centers[index - 1]
            vertebra, fallback = nearest_above(center[1], rows)
            if vertebra is None:
                flags.append(f"{kind.value} component at {tuple(round(c) for c in center)}: no vertebra")
                continue
            if fallback:
                flags.append(f"{kind.value} component at row {center[1]:.1f}: no vertebra above, using {vertebra}")
                logger.warning(f"{kind.value} component above all vertebrae assigned to vertebra {vertebra}")
            instance[components.labels == index] = instance_id(kind, vertebra)

    return instance, flags


@handle_exceptions
def assemble(semantic, predictor, cutout_size=CUTOUT_SIZE, min_volume_fraction=0.10, workers=1):
    """
    Build the full instance mask from a semantic mask.

    Only the semantic labels are used; intensities never enter this stage.

    Args:
        semantic (Volume): Semantic mask
        predictor (InstancePredictor): Cutout predictor
        cutout_size: Window dims
        min_volume_fraction: Corpus speckle threshold
        workers: Parallel cutout predictions

    Returns:
        tuple: (instance Volume, AssemblyReport)
    """
    if semantic.kind is not VolumeKind.SEMANTIC:
        raise VolumeError(f"assembly needs a semantic volume, got {semantic.kind.value}")

    report = AssemblyReport()
    centers = find_corpus_centers(semantic, min_volume_fraction)
    report.cutouts = make_cutouts(centers, semantic.shape, cutout_size)
    logger.info(f"Placed {len(report.cutouts)} cutouts")

    vertebrae = np.zeros(semantic.shape, dtype=np.uint16)
    if report.cutouts:
        predictions = predict_cutouts(semantic, report.cutouts, predictor, workers)
        groups = collect_groups(predictions, report.cutouts, semantic.shape)
        vertebrae, report.groups, flags = reconcile(groups, semantic.shape)
        report.flags.extend(flags)

    instance, flags = assign_disc_endplate_instances(semantic.data, vertebrae)
    report.flags.extend(flags)
    report.n_vertebrae = int(len(np.unique(vertebrae)) - 1) if vertebrae.any() else 0
    return semantic.with_data(instance, kind=VolumeKind.INSTANCE), report
