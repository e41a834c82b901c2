"""
Specification models module

This module contains Pydantic models for the run parameters: phantom
geometry, predictor corruption, tiling and pipeline configuration. All of
them round-trip through JSON.
"""
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from src.models.volume_models import TARGET_SPACING

PositiveTriple = Tuple[float, float, float]

# Fixed window of the instance phase
CUTOUT_SIZE = (248, 304, 64)

# Patch size of the semantic phase
PATCH_SIZE = (256, 256, 64)


class PhantomSpec(BaseModel):
    """
    Geometry of a procedural spine phantom.

    Lengths are in mm. The phantom is laid out in canonical orientation:
    axis 0 anterior->posterior, axis 1 superior->inferior, axis 2 left->right.
    """
    n_vertebrae: int = Field(7, ge=3, le=24, description="Number of vertebrae")
    shape: Tuple[int, int, int] = Field((256, 384, 64), description="Volume dims in voxels")
    spacing: PositiveTriple = Field(TARGET_SPACING, description="Voxel size in mm")
    corpus_radii: Tuple[float, float] = Field((14.0, 18.0), description="Corpus semi-axes (AP, LR)")
    radius_jitter: float = Field(1.0, ge=0.0, description="Seeded per-vertebra corpus radius jitter")
    disc_thickness: float = Field(6.0, gt=0.0, description="Intervertebral disc height")
    pitch: float = Field(20.0, gt=0.0, description="Distance between consecutive vertebra centers")
    canal_radius: float = Field(7.0, gt=0.0, description="Spinal canal radius")
    cord_radius: float = Field(4.0, gt=0.0, description="Spinal cord radius")
    arcus_thickness: float = Field(4.0, gt=0.0, description="Thickness of the vertebral arch")
    process_length: float = Field(18.0, gt=0.0, description="Length of spinous and costal processes")
    process_width: float = Field(5.0, gt=0.0, description="Width of spinous and costal processes")
    articular_size: float = Field(5.0, gt=0.0, description="Edge length of articular processes")
    sacrum_height: float = Field(30.0, gt=0.0, description="Superior-inferior extent of the sacrum")
    top_margin: float = Field(8.0, ge=0.0, description="Empty space above the first vertebra")
    include_sacrum: bool = Field(True, description="Add a disc and sacrum below the last vertebra")
    fuse_pairs: List[Tuple[int, int]] = Field(default_factory=list, description="Adjacent vertebra pairs to fuse")
    seed: int = Field(0, ge=0, lt=2 ** 64, description="Seed for jitter and pseudo-intensity noise")

    @field_validator("shape")
    @classmethod
    def _positive_shape(cls, value):
        if min(value) < 1:
            raise ValueError("shape entries must be >= 1")
        return value

    @field_validator("spacing", "corpus_radii")
    @classmethod
    def _positive_lengths(cls, value):
        if min(value) <= 0:
            raise ValueError("lengths must be > 0")
        return value

    @model_validator(mode="after")
    def _check_geometry(self):
        if self.disc_thickness >= self.pitch:
            raise ValueError("disc_thickness must be smaller than pitch")
        if self.cord_radius >= self.canal_radius:
            raise ValueError("cord_radius must be smaller than canal_radius")
        for upper, lower in self.fuse_pairs:
            if lower != upper + 1:
                raise ValueError(f"fuse pair ({upper}, {lower}) is not adjacent")
            if upper < 1 or lower > self.n_vertebrae:
                raise ValueError(f"fuse pair ({upper}, {lower}) outside 1..{self.n_vertebrae}")
        return self


class NoiseSpec(BaseModel):
    """
    Corruption applied by oracle predictors.

    The defaults follow the instance model's training augmentations
    (erosion, label drop and down/up-sampling at 10% each).
    """
    p_erosion: float = Field(0.1, ge=0.0, le=1.0, description="Per-structure erosion probability")
    erosion_radius: int = Field(1, ge=0, description="Erosion radius in voxels")
    p_labeldrop: float = Field(0.1, ge=0.0, le=1.0, description="Per-structure drop probability")
    labeldrop_overrides: Dict[int, float] = Field(default_factory=dict, description="Drop probability per label code")
    p_downup: float = Field(0.1, ge=0.0, le=1.0, description="Probability of 2x down- then upsampling")
    p_scale: float = Field(0.0, ge=0.0, le=1.0, description="Per-structure rescale probability")
    scale_range: float = Field(0.2, ge=0.0, lt=1.0, description="Maximum relative rescale")
    boundary_jitter_mm: float = Field(0.0, ge=0.0, description="Boundary jitter distance")
    seed: int = Field(0, ge=0, lt=2 ** 64, description="Seed of the corruption stream")

    @field_validator("labeldrop_overrides")
    @classmethod
    def _probabilities(cls, value):
        for code, p in value.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"drop probability for label {code} must be in [0, 1]")
        return value

    @classmethod
    def zero(cls, seed=0):
        """A spec that leaves its input untouched."""
        return cls(p_erosion=0.0, p_labeldrop=0.0, p_downup=0.0, p_scale=0.0,
                   boundary_jitter_mm=0.0, seed=seed)

    def drop_probability(self, code):
        return self.labeldrop_overrides.get(int(code), self.p_labeldrop)

    @property
    def is_zero(self):
        return (
            self.p_erosion == 0.0 or self.erosion_radius == 0
        ) and self.p_labeldrop == 0.0 and not any(self.labeldrop_overrides.values()) \
            and self.p_downup == 0.0 and self.p_scale == 0.0 and self.boundary_jitter_mm == 0.0


class BlendMode(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


class TilingSpec(BaseModel):
    """Patch tiling of the semantic phase."""
    patch_size: Tuple[int, int, int] = Field(PATCH_SIZE, description="Patch dims in voxels")
    overlap: float = Field(0.5, ge=0.0, lt=1.0, description="Fractional overlap of adjacent patches")
    blend: BlendMode = Field(BlendMode.GAUSSIAN, description="Blending window")

    @field_validator("patch_size")
    @classmethod
    def _positive_patch(cls, value):
        if min(value) < 1:
            raise ValueError("patch_size entries must be >= 1")
        return value


class PredictorKind(str, Enum):
    ORACLE = "oracle"
    EXTERNAL = "external"


class PredictorHandle(BaseModel):
    """
    Address of a predictor.

    Oracles read a ground-truth mask (plus optional noise); external
    predictors are commands exchanging NIfTI files through a directory.
    """
    kind: PredictorKind
    gt_path: Optional[str] = Field(None, description="Ground-truth mask of an oracle")
    noise_path: Optional[str] = Field(None, description="NoiseSpec JSON of an oracle")
    command: Optional[str] = Field(None, description="Command template of an external predictor")
    exchange_dir: Optional[str] = Field(None, description="Scratch directory for file exchange")
    timeout: float = Field(600.0, gt=0.0, description="Seconds before an external call is killed")
    reentrant: bool = Field(False, description="Allow concurrent calls to the same external command")

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind is PredictorKind.ORACLE and not self.gt_path:
            raise ValueError("oracle predictors need a ground-truth path")
        if self.kind is PredictorKind.EXTERNAL and not self.command:
            raise ValueError("external predictors need a command")
        return self


class PipelineConfig(BaseModel):
    """Parameters of run_pipeline."""
    tiling: TilingSpec = Field(default_factory=TilingSpec)
    cutout_size: Tuple[int, int, int] = Field(CUTOUT_SIZE, description="Instance-phase window")
    min_volume_fraction: float = Field(0.10, ge=0.0, le=1.0, description="Corpus speckle filter relative to the median")
    target_spacing: Optional[PositiveTriple] = Field(TARGET_SPACING, description="Working grid spacing, None to keep input grid")
    postprocess: bool = Field(True, description="Run consistency post-processing")
    workers: int = Field(1, ge=1, description="Parallel patch/cutout predictions")
