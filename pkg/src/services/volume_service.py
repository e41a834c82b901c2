"""
Volume service module

This module provides the core voxel operations: reorientation, resampling,
connected components, centers of mass, hole filling and NIfTI I/O.
"""
import logging
import os

import nibabel as nib
import numpy as np
from nibabel.orientations import apply_orientation, axcodes2ornt, inv_ornt_aff, ornt_transform
from scipy import ndimage

from src.models.volume_models import CANONICAL_ORIENTATION, ComponentSet, Volume, VolumeKind
from src.utils.error_handlers import VolumeError, VolumeIOError, handle_exceptions

# Set up logging
logger = logging.getLogger(__name__)

AXIS_PAIRS = (("L", "R"), ("P", "A"), ("I", "S"))

SUPPORTED_DTYPES = {
    np.dtype(t) for t in (
        np.uint8, np.int8, np.uint16, np.int16, np.uint32, np.int32,
        np.int64, np.uint64, np.float32, np.float64,
    )
}

STRUCTURE_6 = ndimage.generate_binary_structure(3, 1)
STRUCTURE_26 = ndimage.generate_binary_structure(3, 3)


def connectivity_structure(connectivity):
    if connectivity == 6:
        return STRUCTURE_6
    if connectivity == 26:
        return STRUCTURE_26
    raise VolumeError(f"connectivity must be 6 or 26, got {connectivity}")


def validate_orientation(codes):
    """
    Check that codes name each anatomical axis exactly once.

    Raises:
        VolumeError: On unknown or duplicate axis codes
    """
    codes = tuple(str(c).upper() for c in codes)
    if len(codes) != 3:
        raise VolumeError(f"orientation needs 3 axis codes, got {codes}")
    used = []
    for code in codes:
        pair = [i for i, p in enumerate(AXIS_PAIRS) if code in p]
        if not pair:
            raise VolumeError(f"invalid axis code {code!r} in {codes}")
        used.append(pair[0])
    if len(set(used)) != 3:
        raise VolumeError(f"duplicate anatomical axis in {codes}")
    return codes


def require_same_grid(*volumes):
    """Raise VolumeError unless all volumes share one grid."""
    first = volumes[0]
    for other in volumes[1:]:
        if not first.same_grid(other):
            raise VolumeError(
                f"grid mismatch: {first.shape}/{first.spacing} vs {other.shape}/{other.spacing}"
            )


def reorient(vol, target=CANONICAL_ORIENTATION):
    """
    Permute and flip a volume's axes into the target orientation.

    Args:
        vol (Volume): Input volume
        target: Three axis codes

    Returns:
        Volume: Reoriented volume; voxel values are untouched
    """
    target = validate_orientation(target)
    if vol.orientation == target:
        return vol

    transform = ornt_transform(axcodes2ornt(vol.orientation), axcodes2ornt(target))
    data = apply_orientation(vol.data, transform)
    affine = vol.affine @ inv_ornt_aff(transform, vol.shape)
    return Volume(data=np.ascontiguousarray(data), affine=affine, kind=vol.kind)


def resampled_shape(shape, spacing, new_spacing):
    return tuple(
        max(1, int(round(n * s / ns))) for n, s, ns in zip(shape, spacing, new_spacing)
    )


def resample(vol, new_spacing, mode="nearest", shape=None):
    """
    Resample a volume to a new voxel spacing.

    The output grid shares the input's physical corner. Output dims are
    round(dims * spacing / new_spacing) unless `shape` is given.

    Args:
        vol (Volume): Input volume
        new_spacing: Three voxel sizes in mm
        mode: "nearest" or "trilinear"
        shape: Optional explicit output dims

    Returns:
        Volume: The resampled volume

    Raises:
        VolumeError: On non-positive spacing or trilinear resampling of labels
    """
    new_spacing = tuple(float(s) for s in new_spacing)
    if len(new_spacing) != 3 or min(new_spacing) <= 0:
        raise VolumeError(f"new spacing must be 3 positive values, got {new_spacing}")
    if mode not in ("nearest", "trilinear"):
        raise VolumeError(f"unknown interpolation mode {mode!r}")
    if mode == "trilinear" and vol.kind.is_label:
        raise VolumeError("label volumes can only be resampled with nearest interpolation")

    if shape is None:
        shape = resampled_shape(vol.shape, vol.spacing, new_spacing)
    shape = tuple(int(s) for s in shape)
    if shape == vol.shape and np.allclose(vol.spacing, new_spacing, rtol=1e-5):
        return vol

    ratio = np.asarray(new_spacing) / np.asarray(vol.spacing)

    if mode == "nearest":
        index = [
            np.clip(np.floor((np.arange(n) + 0.5) * r).astype(np.int64), 0, size - 1)
            for n, r, size in zip(shape, ratio, vol.shape)
        ]
        data = vol.data[np.ix_(*index)]
    else:
        data = ndimage.affine_transform(
            vol.data.astype(np.float32),
            matrix=np.diag(ratio),
            offset=0.5 * ratio - 0.5,
            output_shape=shape,
            order=1,
            mode="nearest",
        )

    affine = np.array(vol.affine)
    affine[:3, :3] = vol.affine[:3, :3] @ np.diag(ratio)
    affine[:3, 3] = vol.affine[:3, :3] @ (0.5 * ratio - 0.5) + vol.affine[:3, 3]
    return Volume(data=data, affine=affine, kind=vol.kind)


def connected_components(mask, connectivity=26):
    """
    Label the connected components of a binary mask.

    Args:
        mask: Binary Volume or boolean array
        connectivity: 6 or 26

    Returns:
        ComponentSet: ids ordered by minimum linear voxel index
    """
    data = mask.data if isinstance(mask, Volume) else np.asarray(mask)
    data = data.astype(bool, copy=False)
    labels, count = ndimage.label(data, structure=connectivity_structure(connectivity))

    if count == 0:
        return ComponentSet(labels=labels, count=0)

    # Relabel by first occurrence in C order
    flat = labels.ravel()
    values, first_index = np.unique(flat, return_index=True)
    foreground = values != 0
    values, first_index = values[foreground], first_index[foreground]
    order = values[np.argsort(first_index, kind="stable")]
    lookup = np.zeros(count + 1, dtype=labels.dtype)
    lookup[order] = np.arange(1, count + 1, dtype=labels.dtype)
    labels = lookup[labels]

    index = np.arange(1, count + 1)
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    centers = ndimage.center_of_mass(data, labels, index)
    bboxes = [
        tuple((int(s.start), int(s.stop)) for s in slices)
        for slices in ndimage.find_objects(labels, max_label=count)
    ]
    return ComponentSet(
        labels=labels,
        count=int(count),
        sizes=[int(s) for s in sizes],
        centers=[tuple(float(c) for c in center) for center in centers],
        bboxes=bboxes,
    )


def center_of_mass(component):
    """
    Arithmetic mean of a component's voxel index triples.

    Args:
        component: Binary mask (Volume or array), or an (N, 3) array of voxel indices

    Returns:
        tuple: Three real voxel coordinates

    Raises:
        VolumeError: If the component is empty
    """
    data = component.data if isinstance(component, Volume) else np.asarray(component)
    if data.ndim == 2 and data.shape[1] == 3:
        if len(data) == 0:
            raise VolumeError("center of mass of an empty component")
        return tuple(float(c) for c in data.mean(axis=0))

    data = data.astype(bool, copy=False)
    if not data.any():
        raise VolumeError("center of mass of an empty component")
    return tuple(float(c) for c in ndimage.center_of_mass(data))


def fill_holes(mask, connectivity=6):
    """
    Fill background regions not connected to the volume boundary.

    Args:
        mask: Binary Volume or boolean array
        connectivity: Connectivity of the background flood fill

    Returns:
        Same type as the input, with holes set to foreground
    """
    data = mask.data if isinstance(mask, Volume) else np.asarray(mask)
    filled = ndimage.binary_fill_holes(data.astype(bool), structure=connectivity_structure(connectivity))
    if isinstance(mask, Volume):
        return mask.with_data(filled.astype(mask.data.dtype))
    return filled


@handle_exceptions
def read_nifti(path, kind=VolumeKind.INTENSITY):
    """
    Read a single 3D NIfTI-1 image.

    Args:
        path: .nii or .nii.gz file
        kind: Element kind of the voxel buffer

    Returns:
        Volume: The decoded volume

    Raises:
        VolumeIOError: For missing, malformed, truncated, 4D or unsupported files
    """
    kind = VolumeKind(kind)
    path = str(path)
    if not os.path.exists(path):
        raise VolumeIOError(f"NIfTI file not found: {path}")

    try:
        img = nib.load(path, mmap=False)
    except Exception as e:
        raise VolumeIOError(f"Malformed NIfTI header in {path}: {e}") from e

    if not isinstance(img, nib.Nifti1Image):
        raise VolumeIOError(f"{path} is not a NIfTI-1 image ({type(img).__name__})")
    if len(img.shape) != 3:
        raise VolumeIOError(f"{path} has {len(img.shape)} dimensions; only 3D images are supported")
    dtype = img.get_data_dtype()
    if dtype not in SUPPORTED_DTYPES:
        raise VolumeIOError(f"{path} has unsupported datatype {dtype}")

    try:
        data = np.asanyarray(img.dataobj)
    except Exception as e:
        raise VolumeIOError(f"Cannot read voxel data from {path} (truncated?): {e}") from e

    try:
        return Volume(data=np.asarray(data), affine=img.affine, kind=kind)
    except ValueError as e:
        raise VolumeIOError(f"{path} does not hold a valid {kind.value} volume: {e}") from e


@handle_exceptions
def write_nifti(vol, path):
    """
    Write a volume as NIfTI-1; labels as uint16, intensities as float32.

    Args:
        vol (Volume): Volume to write
        path: Target .nii or .nii.gz path
    """
    path = str(path)
    dtype = np.uint16 if vol.kind.is_label else np.float32
    img = nib.Nifti1Image(vol.data.astype(dtype), vol.affine)
    img.header.set_data_dtype(dtype)
    img.header.set_xyzt_units("mm")
    img.set_qform(vol.affine, code=1)
    img.set_sform(vol.affine, code=1)

    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
    try:
        nib.save(img, path)
    except Exception as e:
        raise VolumeIOError(f"Cannot write NIfTI file {path}: {e}") from e
    logger.debug(f"Wrote {vol.kind.value} volume {vol.shape} to {path}")


def window_slices(origin, size, shape):
    """
    Intersect a window with a volume.

    Args:
        origin: Window origin in volume voxels (may be negative)
        size: Window dims
        shape: Volume dims

    Returns:
        tuple: (volume slices, window slices) of the overlapping region,
        or None when the window lies outside the volume
    """
    volume_slices, local_slices = [], []
    for o, s, n in zip(origin, size, shape):
        lo, hi = max(0, int(o)), min(int(n), int(o) + int(s))
        if hi <= lo:
            return None
        volume_slices.append(slice(lo, hi))
        local_slices.append(slice(lo - int(o), hi - int(o)))
    return tuple(volume_slices), tuple(local_slices)


def crop_window(data, origin, size, fill=0):
    """Copy a window out of an array, padding outside voxels with `fill`."""
    out = np.full(tuple(int(s) for s in size), fill, dtype=data.dtype)
    overlap = window_slices(origin, size, data.shape)
    if overlap is not None:
        volume_slices, local_slices = overlap
        out[local_slices] = data[volume_slices]
    return out


def locate_window(parent, window_affine):
    """Integer voxel offset of a positioned sub-grid inside `parent`."""
    offset = np.linalg.solve(parent.affine[:3, :3], np.asarray(window_affine)[:3, 3] - parent.affine[:3, 3])
    return tuple(int(round(o)) for o in offset)
