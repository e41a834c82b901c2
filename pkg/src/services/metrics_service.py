"""
Metrics service module

This module implements the evaluation suite: overlap (Dice, IoU), average
symmetric surface distance, one-to-one instance matching, panoptic
quality and the paired Wilcoxon signed-rank test.
"""
import logging
import math

import numpy as np
from scipy import ndimage
from scipy.stats import norm, rankdata

from src.models.report_models import (
    InstanceMatching,
    PanopticEntry,
    PanopticReport,
    StructureScores,
    WilcoxonResult,
)
from src.models.volume_models import Volume
from src.services.label_service import (
    ENDPLATE_OFFSET,
    IVD_OFFSET,
    InstanceKind,
    SemanticLabel,
    id_range,
    vertebra_substructure_codes,
)
from src.services.volume_service import STRUCTURE_6, require_same_grid
from src.utils.error_handlers import VolumeError, handle_exceptions

# Set up logging
logger = logging.getLogger(__name__)

MATCH_THRESHOLD = 0.5
EXACT_WILCOXON_MAX_N = 25

# Evaluated structures: name -> semantic codes
STRUCTURES = {
    "vertebra": tuple(sorted(vertebra_substructure_codes())),
    "ivd": (SemanticLabel.IVD,),
    "endplate": (SemanticLabel.ENDPLATE,),
    "spinal_canal": (SemanticLabel.SPINAL_CANAL,),
    "spinal_cord": (SemanticLabel.SPINAL_CORD,),
    "sacrum": (SemanticLabel.SACRUM,),
    "corpus": (SemanticLabel.CORPUS,),
}

INSTANCE_STRUCTURES = {
    "vertebra": InstanceKind.VERTEBRA,
    "ivd": InstanceKind.IVD,
    "endplate": InstanceKind.ENDPLATE,
}


def _arrays(a, b):
    if isinstance(a, Volume) and isinstance(b, Volume):
        require_same_grid(a, b)
        return a.data != 0, b.data != 0
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise VolumeError(f"grid mismatch: {a.shape} vs {b.shape}")
    return a != 0, b != 0


def dice(a, b):
    """2|A∩B| / (|A|+|B|); two empty masks score 1.0."""
    a, b = _arrays(a, b)
    total = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def iou(a, b):
    """|A∩B| / |A∪B|; two empty masks score 1.0."""
    a, b = _arrays(a, b)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def surface_mask(mask):
    """Foreground voxels with a 6-neighbour in the background or outside the volume."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=STRUCTURE_6, border_value=0)


def _surface_distances(source, target, spacing):
    """Distance (mm) from each surface voxel of source to the nearest surface voxel of target."""
    distance = ndimage.distance_transform_edt(~target, sampling=spacing)
    return distance[source]


def assd(a, b, spacing=None):
    """
    Average symmetric surface distance in mm.

    Args:
        a, b: Binary masks (Volumes or arrays) on one grid
        spacing: Voxel size; taken from the volumes when omitted

    Raises:
        VolumeError: If either mask is empty
    """
    if spacing is None:
        spacing = a.spacing if isinstance(a, Volume) else (1.0, 1.0, 1.0)
    a, b = _arrays(a, b)
    if not a.any() or not b.any():
        raise VolumeError("surface distance is undefined for an empty mask")

    surface_a, surface_b = surface_mask(a), surface_mask(b)
    forward = _surface_distances(surface_a, surface_b, spacing)
    backward = _surface_distances(surface_b, surface_a, spacing)
    return float((forward.mean() + backward.mean()) / 2.0)


def _kind_filter(data, kind):
    if kind is None:
        return data
    low, high = id_range(kind)
    return np.where((data >= low) & (data <= high), data, 0)


def pair_overlaps(pred, ref):
    """
    Voxel counts per instance and per overlapping (pred, ref) pair.

    Returns:
        tuple: (pred sizes dict, ref sizes dict, overlap dict keyed by (pred, ref))
    """
    pred, ref = np.asarray(pred).ravel(), np.asarray(ref).ravel()
    p_ids, p_counts = np.unique(pred[pred != 0], return_counts=True)
    r_ids, r_counts = np.unique(ref[ref != 0], return_counts=True)

    both = (pred != 0) & (ref != 0)
    encoded = pred[both].astype(np.int64) * 65536 + ref[both].astype(np.int64)
    pairs, counts = np.unique(encoded, return_counts=True)
    overlaps = {(int(code // 65536), int(code % 65536)): int(c) for code, c in zip(pairs, counts)}
    return (
        dict(zip(p_ids.tolist(), p_counts.tolist())),
        dict(zip(r_ids.tolist(), r_counts.tolist())),
        overlaps,
    )


def match_instances(pred, ref, kind=None, threshold=MATCH_THRESHOLD):
    """
    Greedy one-to-one matching by descending IoU.

    Candidates with IoU >= threshold are taken in order of descending IoU
    (ties by pred id, then ref id) while both partners are free.

    Args:
        pred, ref: Instance masks (Volumes or arrays) on one grid
        kind: Optional InstanceKind restricting both masks to its id range

    Returns:
        InstanceMatching
    """
    if isinstance(pred, Volume) and isinstance(ref, Volume):
        require_same_grid(pred, ref)
        pred, ref = pred.data, ref.data
    pred, ref = np.asarray(pred), np.asarray(ref)
    if pred.shape != ref.shape:
        raise VolumeError(f"grid mismatch: {pred.shape} vs {ref.shape}")
    pred, ref = _kind_filter(pred, kind), _kind_filter(ref, kind)

    pred_sizes, ref_sizes, overlaps = pair_overlaps(pred, ref)
    candidates = []
    for (p, r), inter in overlaps.items():
        score = inter / (pred_sizes[p] + ref_sizes[r] - inter)
        if score >= threshold:
            candidates.append((-score, p, r))
    candidates.sort()

    used_pred, used_ref, pairs = set(), set(), []
    for negative, p, r in candidates:
        if p in used_pred or r in used_ref:
            continue
        used_pred.add(p)
        used_ref.add(r)
        pairs.append((p, r, -negative))

    return InstanceMatching(
        pairs=pairs,
        unmatched_pred=sorted(set(pred_sizes) - used_pred),
        unmatched_ref=sorted(set(ref_sizes) - used_ref),
        threshold=threshold,
    )


def panoptic(matching, pred=None, ref=None, spacing=(1.0, 1.0, 1.0)):
    """
    Recognition, segmentation and panoptic quality of a matching.

    With masks given, instance-wise Dice and ASSD are averaged over the
    matched pairs. A structure absent from both prediction and reference
    scores 1.0 everywhere (ASSD stays undefined).

    Returns:
        PanopticEntry
    """
    tp, fp, fn = matching.tp, matching.fp, matching.fn
    if tp == fp == fn == 0:
        return PanopticEntry(rq=1.0, sq=1.0, pq=1.0, dice=1.0)

    denominator = tp + 0.5 * fp + 0.5 * fn
    rq = tp / denominator
    sq = float(np.mean([pair[2] for pair in matching.pairs])) if tp else 0.0
    entry = PanopticEntry(tp=tp, fp=fp, fn=fn, rq=rq, sq=sq, pq=sq * rq)

    if pred is not None and ref is not None and tp:
        pred, ref = np.asarray(pred), np.asarray(ref)
        dices, distances = [], []
        for p, r, _ in matching.pairs:
            a, b = pred == p, ref == r
            dices.append(dice(a, b))
            distances.append(assd(a, b, spacing))
        entry.dice = float(np.mean(dices))
        entry.assd = float(np.mean(distances))
    return entry


def _structure_scores(pred, ref, codes, spacing):
    a, b = np.isin(pred, codes), np.isin(ref, codes)
    distance = assd(a, b, spacing) if a.any() and b.any() else None
    return StructureScores(
        dice=dice(a, b),
        assd=distance,
        pred_voxels=int(np.count_nonzero(a)),
        ref_voxels=int(np.count_nonzero(b)),
    )


def _single_instance_entry(pred, ref, codes, spacing):
    """Canal, cord and sacrum have one instance by nature: matched by IoU of the whole structure."""
    a, b = np.isin(pred, codes), np.isin(ref, codes)
    matching = match_instances(a.astype(np.uint16), b.astype(np.uint16))
    return panoptic(matching, a.astype(np.uint16), b.astype(np.uint16), spacing)


@handle_exceptions
def evaluate_masks(pred_semantic, ref_semantic, pred_instance=None, ref_instance=None):
    """
    Evaluate one subject.

    Args:
        pred_semantic, ref_semantic (Volume): Semantic masks on one grid
        pred_instance, ref_instance (Volume): Optional instance masks on the same grid

    Returns:
        PanopticReport
    """
    require_same_grid(pred_semantic, ref_semantic)
    spacing = ref_semantic.spacing
    pred, ref = pred_semantic.data, ref_semantic.data
    codes = {name: [int(c) for c in values] for name, values in STRUCTURES.items()}

    report = PanopticReport(spacing=spacing)
    for name, structure_codes in codes.items():
        report.global_scores[name] = _structure_scores(pred, ref, structure_codes, spacing)

    if pred_instance is not None and ref_instance is not None:
        require_same_grid(pred_instance, ref_instance)
        require_same_grid(pred_instance, ref_semantic)
        for name, kind in INSTANCE_STRUCTURES.items():
            p, r = _kind_filter(pred_instance.data, kind), _kind_filter(ref_instance.data, kind)
            report.instance_scores[name] = panoptic(match_instances(p, r), p, r, spacing)
        for name in ("spinal_canal", "spinal_cord", "sacrum"):
            report.instance_scores[name] = _single_instance_entry(pred, ref, codes[name], spacing)

    logger.info(
        "Evaluated: "
        + ", ".join(f"{name} DSC={scores.dice:.3f}" for name, scores in report.global_scores.items())
    )
    return report


def _exact_lower_tail(ranks, statistic):
    """P(W+ <= statistic) under the null, by dynamic programming over doubled ranks."""
    doubled = np.rint(2 * np.asarray(ranks)).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    limit = int(np.rint(2 * statistic))
    return counts[: limit + 1].sum() / 2.0 ** len(doubled)


def wilcoxon_signed_rank(x, y):
    """
    Paired two-sided Wilcoxon signed-rank test.

    Zero differences are dropped and ties get average ranks. The p-value
    is exact for n <= 25, otherwise a normal approximation with tie and
    continuity correction.

    Returns:
        WilcoxonResult

    Raises:
        ValueError: On unequal or empty samples
    """
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size == 0:
        raise ValueError("wilcoxon_signed_rank needs two paired samples of equal length >= 1")

    d = x - y
    d = d[d != 0]
    n = int(d.size)
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n=0, exact=True)

    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)

    if n <= EXACT_WILCOXON_MAX_N:
        p = min(1.0, 2.0 * _exact_lower_tail(ranks, statistic))
        return WilcoxonResult(statistic=statistic, p_value=p, n=n, exact=True)

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    z = (statistic - mean + 0.5) / math.sqrt(variance) if variance > 0 else 0.0
    p = min(1.0, 2.0 * float(norm.cdf(z)))
    return WilcoxonResult(statistic=statistic, p_value=p, n=n, exact=False)
