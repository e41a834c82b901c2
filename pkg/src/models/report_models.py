"""
Report models module

This module contains Pydantic models for the structured outputs of the
toolkit: cutouts, run reports, consistency reports, annotation-fusion
summaries and evaluation results.
"""
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field


class Cutout(BaseModel):
    """A fixed-size window anchored at a corpus centroid."""
    index: int = Field(..., description="1-based position in superior->inferior order")
    center: Tuple[float, float, float] = Field(..., description="Corpus centroid (voxel coords)")
    origin: Tuple[int, int, int] = Field(..., description="Window origin, negative where padded")
    size: Tuple[int, int, int] = Field(..., description="Window dims")
    shifted: bool = Field(False, description="Window moved to stay inside the volume")
    padded: bool = Field(False, description="Window larger than the volume along some axis")

    @property
    def center_voxel(self):
        return tuple(int(round(c)) for c in self.center)

    @property
    def local_center(self):
        """Rounded centroid relative to the window origin."""
        return tuple(c - o for c, o in zip(self.center_voxel, self.origin))


class GroupReport(BaseModel):
    """Per-vertebra reconciliation summary."""
    target_index: int
    n_predictions: int
    agreement: float
    fused_voxels: int = 0
    conflict_voxels: int = Field(0, description="Fused voxels already claimed by earlier instances")
    fallback: Optional[str] = Field(None, description="'union' or 'steal' when the vote left nothing")


class AssemblyReport(BaseModel):
    """What assemble did: cutouts, groups and fallbacks."""
    cutouts: List[Cutout] = Field(default_factory=list)
    groups: List[GroupReport] = Field(default_factory=list)
    n_vertebrae: int = 0
    flags: List[str] = Field(default_factory=list)


class ConsistencyReport(BaseModel):
    """Voxel deltas of enforce_consistency."""
    holes_filled: int = Field(0, ge=0, description="Voxels added by hole filling that survived zero-out")
    zeroed: int = Field(0, ge=0, description="Instance voxels cleared over irrelevant semantics")
    orphans_assigned: List[Tuple[int, int]] = Field(default_factory=list, description="(component size, receiving id)")
    orphans_unassigned: List[int] = Field(default_factory=list, description="Sizes of orphan components left at 0")

    @property
    def is_noop(self):
        return self.holes_filled == 0 and self.zeroed == 0 and not self.orphans_assigned


class RunReport(BaseModel):
    """Everything run_pipeline records about one run."""
    n_patches: int = 0
    cutouts: List[Cutout] = Field(default_factory=list)
    groups: List[GroupReport] = Field(default_factory=list)
    n_vertebrae: int = 0
    raw_instance_voxels: int = Field(0, description="Instance foreground before post-processing")
    consistency: Optional[ConsistencyReport] = None
    flags: List[str] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)
    timings: Dict[str, float] = Field(default_factory=dict)


class FusionSummary(BaseModel):
    """Counts emitted by the annotation-fusion command."""
    label_counts: Dict[str, int] = Field(default_factory=dict)
    substructure_blocked: int = Field(0, description="Substructure voxels rejected by priority")
    cord_blocked: int = Field(0, description="Cord voxels rejected by priority")
    canal_to_cord: int = Field(0, description="Canal voxels overwritten by cord")
    endplates_synthesized: int = 0
    cord_in_transition: int = Field(0, description="Cord voxels inside a corpus/disc transition zone")


class InstanceMatching(BaseModel):
    """One-to-one matching of predicted and reference instances."""
    pairs: List[Tuple[int, int, float]] = Field(default_factory=list, description="(pred id, ref id, IoU)")
    unmatched_pred: List[int] = Field(default_factory=list, description="False positives")
    unmatched_ref: List[int] = Field(default_factory=list, description="False negatives")
    threshold: float = 0.5

    @property
    def tp(self):
        return len(self.pairs)

    @property
    def fp(self):
        return len(self.unmatched_pred)

    @property
    def fn(self):
        return len(self.unmatched_ref)


class PanopticEntry(BaseModel):
    """Instance-wise scores of one structure."""
    tp: int = 0
    fp: int = 0
    fn: int = 0
    rq: float = 0.0
    sq: float = 0.0
    pq: float = 0.0
    dice: Optional[float] = Field(None, description="Mean DSC over TP pairs")
    assd: Optional[float] = Field(None, description="Mean ASSD (mm) over TP pairs")


class StructureScores(BaseModel):
    """Global (semantic) scores of one structure."""
    dice: float
    assd: Optional[float] = None
    pred_voxels: int = 0
    ref_voxels: int = 0


class PanopticReport(BaseModel):
    """Evaluation of one subject."""
    global_scores: Dict[str, StructureScores] = Field(default_factory=dict)
    instance_scores: Dict[str, PanopticEntry] = Field(default_factory=dict)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def rows(self):
        """Flatten into (level, structure, metric, value) rows."""
        rows = []
        for name, scores in self.global_scores.items():
            rows.append(("global", name, "DSC", scores.dice))
            rows.append(("global", name, "ASSD", scores.assd))
        for name, entry in self.instance_scores.items():
            rows.append(("instance", name, "DSC", entry.dice))
            rows.append(("instance", name, "RQ", entry.rq))
            rows.append(("instance", name, "SQ", entry.sq))
            rows.append(("instance", name, "PQ", entry.pq))
            rows.append(("instance", name, "ASSD", entry.assd))
            rows.append(("instance", name, "TP", entry.tp))
            rows.append(("instance", name, "FP", entry.fp))
            rows.append(("instance", name, "FN", entry.fn))
        return rows


class WilcoxonResult(BaseModel):
    """Paired Wilcoxon signed-rank test result."""
    statistic: float
    p_value: float
    n: int = Field(..., description="Pairs left after dropping zero differences")
    exact: bool
