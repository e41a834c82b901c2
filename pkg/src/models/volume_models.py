"""
Volume models module

This module contains the Pydantic models for voxel volumes and their
connected-component decompositions.
"""
from enum import Enum
from typing import List, Tuple

import nibabel as nib
import numpy as np
from nibabel.orientations import axcodes2ornt
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Stored axes: anterior->posterior, superior->inferior, left->right.
# nibabel codes name the direction each axis points to.
CANONICAL_ORIENTATION = ("P", "I", "R")

# Working grid of the segmentation models
TARGET_SPACING = (0.75, 0.75, 1.65)


class VolumeKind(str, Enum):
    """Element kind carried by a volume's voxel buffer."""
    INTENSITY = "intensity"
    SEMANTIC = "semantic"
    INSTANCE = "instance"

    @property
    def is_label(self):
        return self is not VolumeKind.INTENSITY


def orientation_affine(spacing, orientation=CANONICAL_ORIENTATION, origin=(0.0, 0.0, 0.0)):
    """
    Build a voxel-to-world affine from spacing and axis codes.

    Args:
        spacing: Three voxel sizes in mm
        orientation: Three nibabel axis codes, e.g. ("P", "I", "R")
        origin: World position (mm) of voxel (0, 0, 0)

    Returns:
        np.ndarray: 4x4 affine
    """
    ornt = axcodes2ornt(tuple(orientation))
    affine = np.eye(4)
    affine[:3, :3] = 0.0
    for axis, (world_axis, flip) in enumerate(ornt):
        affine[int(world_axis), axis] = flip * float(spacing[axis])
    affine[:3, 3] = origin
    return affine


class Volume(BaseModel):
    """
    A 3D voxel grid with its geometry.

    The buffer is copied and made read-only on construction, so a Volume
    is immutable and can be shared between threads.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray = Field(..., description="Dense 3D voxel buffer")
    affine: np.ndarray = Field(..., description="4x4 voxel-to-world transform (RAS+, mm)")
    kind: VolumeKind = Field(VolumeKind.INTENSITY, description="Element kind of the buffer")

    @field_validator("data")
    @classmethod
    def _check_data(cls, value):
        value = np.array(value, copy=True)
        if value.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {value.shape}")
        if min(value.shape) < 1:
            raise ValueError(f"volume dims must be >= 1, got {value.shape}")
        return value

    @field_validator("affine")
    @classmethod
    def _check_affine(cls, value):
        value = np.array(value, dtype=np.float64, copy=True)
        if value.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got {value.shape}")
        if np.any(nib.affines.voxel_sizes(value) <= 0):
            raise ValueError("affine has a zero-length axis")
        value.setflags(write=False)
        return value

    @model_validator(mode="after")
    def _check_kind(self):
        data = self.data
        if self.kind.is_label:
            if not np.issubdtype(data.dtype, np.integer):
                if not np.all(np.mod(data, 1) == 0):
                    raise ValueError("label volumes must hold integer values")
            if data.size and (data.min() < 0 or data.max() > np.iinfo(np.uint16).max):
                raise ValueError("label values must fit in unsigned 16-bit integers")
            data = data.astype(np.uint16, copy=False)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        return self

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0), orientation=CANONICAL_ORIENTATION,
                   kind=VolumeKind.INTENSITY, origin=(0.0, 0.0, 0.0)):
        """Create a volume from an array plus spacing and orientation codes."""
        return cls(data=data, affine=orientation_affine(spacing, orientation, origin), kind=kind)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(int(s) for s in self.data.shape)

    @property
    def spacing(self) -> Tuple[float, float, float]:
        return tuple(float(s) for s in nib.affines.voxel_sizes(self.affine))

    @property
    def orientation(self) -> Tuple[str, str, str]:
        return tuple(nib.aff2axcodes(self.affine))

    def with_data(self, data, kind=None):
        """Return a volume on the same grid holding different data."""
        return Volume(data=data, affine=self.affine, kind=kind or self.kind)

    def shifted(self, offset):
        """
        Return the affine of a sub-grid starting at voxel `offset`.

        Used to position patches and cutouts so that predictors can
        locate them in the parent volume.
        """
        affine = np.array(self.affine)
        affine[:3, 3] = self.affine[:3, :3] @ np.asarray(offset, dtype=np.float64) + self.affine[:3, 3]
        return affine

    def same_grid(self, other, atol=1e-4):
        """True when both volumes share dims and voxel-to-world geometry."""
        return self.shape == other.shape and np.allclose(self.affine, other.affine, atol=atol)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.same_grid(other)
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


class ComponentSet(BaseModel):
    """
    Connected components of a binary mask.

    Component ids are 1..count, ordered by each component's minimum
    linear voxel index.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    labels: np.ndarray = Field(..., description="Component id per voxel, 0 = background")
    count: int = Field(..., description="Number of components")
    sizes: List[int] = Field(default_factory=list, description="Voxel count per component")
    centers: List[Tuple[float, float, float]] = Field(default_factory=list, description="Center of mass per component (voxel coords)")
    bboxes: List[Tuple[Tuple[int, int], ...]] = Field(default_factory=list, description="Per-axis (start, stop) bounding box per component")

    def mask(self, component_id):
        """Binary mask of one component."""
        return self.labels == component_id
