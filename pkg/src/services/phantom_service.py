"""
Phantom service module

This module builds procedural spine phantoms (pseudo-intensity, semantic
and instance ground truth) and the corruption model that turns ground
truth into deterministic oracle predictors.
"""
import json
import logging
import math
import os

import numpy as np
from scipy import ndimage
from skimage.morphology import ball

from src.models.volume_models import Volume, VolumeKind
from src.services.label_service import ENDPLATE_OFFSET, IVD_OFFSET, SemanticLabel, write_label_map
from src.services.predictor_service import InstancePredictor, PatchPrediction, SemanticPredictor
from src.services.volume_service import crop_window, locate_window, write_nifti
from src.utils.error_handlers import PhantomSpecError, PredictorError, handle_exceptions

# Set up logging
logger = logging.getLogger(__name__)

ANTERIOR_MARGIN_MM = 10.0

# Base pseudo-intensity per semantic code (T2w-like contrast)
BASE_INTENSITY = {
    SemanticLabel.BACKGROUND: 0.0,
    SemanticLabel.CORPUS: 120.0,
    SemanticLabel.ARCUS: 110.0,
    SemanticLabel.SPINOUS_PROCESS: 100.0,
    SemanticLabel.ARTICULAR_INFERIOR_LEFT: 105.0,
    SemanticLabel.ARTICULAR_INFERIOR_RIGHT: 105.0,
    SemanticLabel.ARTICULAR_SUPERIOR_LEFT: 105.0,
    SemanticLabel.ARTICULAR_SUPERIOR_RIGHT: 105.0,
    SemanticLabel.COSTAL_PROCESS_LEFT: 100.0,
    SemanticLabel.COSTAL_PROCESS_RIGHT: 100.0,
    SemanticLabel.ENDPLATE: 150.0,
    SemanticLabel.IVD: 200.0,
    SemanticLabel.SPINAL_CANAL: 250.0,
    SemanticLabel.SPINAL_CORD: 180.0,
    SemanticLabel.SACRUM: 115.0,
}

PHANTOM_FILES = {
    "image": "image.nii.gz",
    "semantic": "semantic.nii.gz",
    "instance": "instance.nii.gz",
}


class _Layout:
    """Row layout along axis 1 and in-plane anchors of a phantom, in voxels and mm."""

    def __init__(self, spec):
        self.spec = spec
        n0, n1, n2 = spec.shape
        sp0, sp1, sp2 = spec.spacing
        ra, rz = spec.corpus_radii

        self.pitch = int(round(spec.pitch / sp1))
        self.disc = max(1, int(round(spec.disc_thickness / sp1)))
        self.half_disc = self.disc // 2
        self.top = int(round(spec.top_margin / sp1))
        self.sacrum_rows = max(1, int(round(spec.sacrum_height / sp1)))

        self.ac = ANTERIOR_MARGIN_MM + ra + spec.radius_jitter
        self.acan = self.ac + ra + spec.radius_jitter + spec.canal_radius
        self.zc = n2 * sp2 / 2.0
        self.arch_outer = spec.canal_radius + spec.arcus_thickness

        self.fused = {int(upper) for upper, _ in spec.fuse_pairs}

        self._check_fit(n0, n1, n2, sp0, sp2)

    def boundary(self, k):
        """First row of the slab below vertebra k."""
        return self.top + k * self.pitch

    def corpus_rows(self, k):
        start = self.top + (k - 1) * self.pitch - self.half_disc + self.disc + 1
        return start, self.boundary(k) - self.half_disc - 1

    def disc_rows(self, k):
        start = self.boundary(k) - self.half_disc
        return start, start + self.disc

    def has_disc_below(self, k):
        if k in self.fused:
            return False
        return k < self.spec.n_vertebrae or self.spec.include_sacrum

    def sacrum_span(self):
        start = self.disc_rows(self.spec.n_vertebrae)[1]
        return start, start + self.sacrum_rows

    def last_row(self):
        if self.spec.include_sacrum:
            return self.sacrum_span()[1]
        return self.corpus_rows(self.spec.n_vertebrae)[1]

    def _check_fit(self, n0, n1, n2, sp0, sp2):
        spec = self.spec
        if self.pitch - self.disc - 2 < 3:
            raise PhantomSpecError(
                f"pitch {spec.pitch} mm leaves less than 3 corpus rows next to a {spec.disc_thickness} mm disc"
            )
        if self.last_row() > n1:
            raise PhantomSpecError(
                f"{spec.n_vertebrae} vertebrae need {self.last_row()} rows along axis 1, volume has {n1}"
            )
        posterior = self.acan + self.arch_outer + spec.process_length
        if posterior >= n0 * sp0:
            raise PhantomSpecError(f"posterior elements reach {posterior:.1f} mm, axis 0 spans {n0 * sp0:.1f} mm")
        lateral = max(
            self.arch_outer + max(spec.process_length, spec.articular_size),
            spec.corpus_radii[1] + spec.radius_jitter,
        )
        if lateral >= self.zc:
            raise PhantomSpecError(f"lateral extent {lateral:.1f} mm exceeds half width {self.zc:.1f} mm")


def _paint(semantic, owner, rows, mask2d, code, own):
    """Write `code` (and `own`) on mask2d in every row of [start, stop)."""
    start, stop = rows
    if stop <= start or not mask2d.any():
        return
    target = semantic[:, start:stop, :]
    where = np.broadcast_to(mask2d[:, None, :], target.shape)
    target[where] = int(code)
    owner[:, start:stop, :][where] = own


def _thirds(rows):
    start, stop = rows
    third = (stop - start) // 3
    return (start, start + third), (start + third, stop - third), (stop - third, stop)


@handle_exceptions
def generate_phantom(spec):
    """
    Build a synthetic spine in canonical orientation.

    Args:
        spec (PhantomSpec): Geometry and seed

    Returns:
        tuple: (intensity Volume, semantic Volume, instance Volume)

    Raises:
        PhantomSpecError: If the requested geometry cannot fit the volume
    """
    layout = _Layout(spec)
    rng = np.random.default_rng(spec.seed)
    n_vert = spec.n_vertebrae
    n0, n1, n2 = spec.shape
    sp0, _, sp2 = spec.spacing

    radii = np.asarray(spec.corpus_radii, dtype=np.float64) + rng.uniform(
        -spec.radius_jitter, spec.radius_jitter, size=(n_vert, 2)
    )

    a_mm, z_mm = np.meshgrid(np.arange(n0) * sp0, np.arange(n2) * sp2, indexing="ij")

    def ellipse(ra, rz):
        return ((a_mm - layout.ac) / ra) ** 2 + ((z_mm - layout.zc) / rz) ** 2 <= 1.0

    def box(a_lo, a_hi, z_lo, z_hi):
        return (a_mm >= a_lo) & (a_mm <= a_hi) & (z_mm >= z_lo) & (z_mm <= z_hi)

    rho = np.hypot(a_mm - layout.acan, z_mm - layout.zc)
    canal_disk = rho <= spec.canal_radius
    cord_disk = rho <= spec.cord_radius
    arch = (rho > spec.canal_radius) & (rho <= layout.arch_outer) & (a_mm >= layout.acan)

    semantic = np.zeros(spec.shape, dtype=np.uint16)
    owner = np.zeros(spec.shape, dtype=np.uint8)
    flat = math.sqrt(0.5)

    # Lowest priority first; later paints overwrite
    if spec.include_sacrum:
        start, stop = layout.sacrum_span()
        for row in range(start, stop):
            shrink = 1.0 - 0.6 * (row - start) / max(1, stop - start)
            _paint(semantic, owner, (row, row + 1), ellipse(radii[-1, 0] * shrink, radii[-1, 1] * shrink),
                   SemanticLabel.SACRUM, 0)

    _paint(semantic, owner, (0, n1), canal_disk, SemanticLabel.SPINAL_CANAL, 0)
    _paint(semantic, owner, (0, layout.corpus_rows(n_vert)[1]), cord_disk, SemanticLabel.SPINAL_CORD, 0)

    outer, length = layout.arch_outer, spec.process_length
    half_w, art = spec.process_width / 2.0, spec.articular_size
    spinous = box(layout.acan + outer, layout.acan + outer + length, layout.zc - half_w, layout.zc + half_w)
    costal_left = box(layout.acan - half_w, layout.acan + half_w, layout.zc - outer - length, layout.zc - outer)
    costal_right = box(layout.acan - half_w, layout.acan + half_w, layout.zc + outer, layout.zc + outer + length)
    art_left = box(layout.acan - art / 2.0, layout.acan + art / 2.0, layout.zc - outer - art, layout.zc - outer)
    art_right = box(layout.acan - art / 2.0, layout.acan + art / 2.0, layout.zc + outer, layout.zc + outer + art)

    for k in range(1, n_vert + 1):
        rows = layout.corpus_rows(k)
        top, middle, bottom = _thirds(rows)
        _paint(semantic, owner, rows, arch, SemanticLabel.ARCUS, k)
        _paint(semantic, owner, middle, spinous, SemanticLabel.SPINOUS_PROCESS, k)
        _paint(semantic, owner, middle, costal_left, SemanticLabel.COSTAL_PROCESS_LEFT, k)
        _paint(semantic, owner, middle, costal_right, SemanticLabel.COSTAL_PROCESS_RIGHT, k)
        _paint(semantic, owner, top, art_left, SemanticLabel.ARTICULAR_SUPERIOR_LEFT, k)
        _paint(semantic, owner, top, art_right, SemanticLabel.ARTICULAR_SUPERIOR_RIGHT, k)
        _paint(semantic, owner, bottom, art_left, SemanticLabel.ARTICULAR_INFERIOR_LEFT, k)
        _paint(semantic, owner, bottom, art_right, SemanticLabel.ARTICULAR_INFERIOR_RIGHT, k)

    for k in range(1, n_vert + 1):
        lo, hi = layout.disc_rows(k)
        below = min(k, n_vert - 1)
        bridge_radii = np.minimum(radii[k - 1], radii[below]) * flat
        if k in layout.fused:
            # Block vertebra: endplate, disc and endplate rows become corpus
            _paint(semantic, owner, (lo - 1, hi + 1), ellipse(*bridge_radii), SemanticLabel.CORPUS, k)
            continue
        if not layout.has_disc_below(k):
            continue
        _paint(semantic, owner, (lo, hi), ellipse(*bridge_radii), SemanticLabel.IVD, k)
        _paint(semantic, owner, (lo - 1, lo), ellipse(*(radii[k - 1] * flat)), SemanticLabel.ENDPLATE, k)
        if k < n_vert:
            _paint(semantic, owner, (hi, hi + 1), ellipse(*(radii[k] * flat)), SemanticLabel.ENDPLATE, k)

    for k in range(1, n_vert + 1):
        start, stop = layout.corpus_rows(k)
        centre, half = (start + stop - 1) / 2.0, max(1.0, (stop - 1 - start) / 2.0)
        for row in range(start, stop):
            t = (row - centre) / half
            factor = math.sqrt(max(0.0, 1.0 - 0.5 * t * t))
            _paint(semantic, owner, (row, row + 1), ellipse(*(radii[k - 1] * factor)), SemanticLabel.CORPUS, k)

    instance = _instance_from_owner(semantic, owner, n_vert, layout.fused)

    intensity = np.zeros(spec.shape, dtype=np.float32)
    lookup = np.array([BASE_INTENSITY[label] for label in SemanticLabel], dtype=np.float32)
    intensity[...] = lookup[semantic] + rng.normal(0.0, 8.0, size=spec.shape).astype(np.float32)

    affine_source = Volume.from_array(semantic, spacing=spec.spacing, kind=VolumeKind.SEMANTIC)
    logger.info(
        f"Generated phantom: {n_vert} vertebrae, {len(spec.fuse_pairs)} fused pairs, "
        f"sacrum={'yes' if spec.include_sacrum else 'no'}, shape {spec.shape}"
    )
    return (
        affine_source.with_data(intensity, kind=VolumeKind.INTENSITY),
        affine_source,
        affine_source.with_data(instance, kind=VolumeKind.INSTANCE),
    )


def _instance_from_owner(semantic, owner, n_vertebrae, fused):
    block = np.zeros(n_vertebrae + 1, dtype=np.uint16)
    current = 0
    for k in range(1, n_vertebrae + 1):
        if (k - 1) not in fused:
            current += 1
        block[k] = current

    ids = block[owner]
    instance = np.zeros(semantic.shape, dtype=np.uint16)
    body = (semantic >= SemanticLabel.CORPUS) & (semantic < SemanticLabel.ENDPLATE)
    instance[body] = ids[body]
    endplate = semantic == SemanticLabel.ENDPLATE
    instance[endplate] = ids[endplate] + ENDPLATE_OFFSET
    ivd = semantic == SemanticLabel.IVD
    instance[ivd] = ids[ivd] + IVD_OFFSET
    return instance


def _jitter(labels, rng):
    """Each voxel takes the label of a random 6-neighbour with probability 0.5."""
    padded = np.pad(labels, 1, mode="edge")
    neighbours = [
        padded[2:, 1:-1, 1:-1], padded[:-2, 1:-1, 1:-1],
        padded[1:-1, 2:, 1:-1], padded[1:-1, :-2, 1:-1],
        padded[1:-1, 1:-1, 2:], padded[1:-1, 1:-1, :-2],
    ]
    direction = rng.integers(0, 6, size=labels.shape)
    swap = rng.random(labels.shape) < 0.5
    return np.where(swap, np.choose(direction, neighbours), labels)


def _rescale(mask, factor):
    centre = np.array(ndimage.center_of_mass(mask))
    scaled = ndimage.affine_transform(
        mask.astype(np.uint8),
        matrix=np.diag(np.full(3, 1.0 / factor)),
        offset=centre - centre / factor,
        order=0,
        mode="constant",
        cval=0,
    )
    return scaled.astype(bool)


def corrupt_labels(labels, noise, rng, spacing=(1.0, 1.0, 1.0)):
    """
    Apply the seeded corruption model to a label array.

    Per present structure (ascending code) the draw order is: label drop,
    rescale, erosion. Then one down/up-sampling draw and the boundary
    jitter iterations follow. No corruption introduces a new label.

    Args:
        labels (np.ndarray): Integer label array
        noise (NoiseSpec): Corruption probabilities
        rng (np.random.Generator): Source of randomness
        spacing: Voxel size used to turn the jitter distance into iterations

    Returns:
        np.ndarray: Corrupted copy (or the input itself for zero noise)
    """
    if noise.is_zero:
        return labels

    out = np.array(labels, copy=True)
    codes = [int(c) for c in np.unique(out) if c != 0]
    footprint = ball(noise.erosion_radius) if noise.erosion_radius > 0 else None

    for code in codes:
        mask = out == code
        if rng.random() < noise.drop_probability(code):
            out[mask] = 0
            continue

        if rng.random() < noise.p_scale:
            factor = 1.0 + rng.uniform(-noise.scale_range, noise.scale_range)
            scaled = _rescale(mask, factor)
            out[mask & ~scaled] = 0
            out[scaled & (out == 0)] = code
            mask = out == code

        if rng.random() < noise.p_erosion and footprint is not None:
            eroded = ndimage.binary_erosion(mask, structure=footprint)
            out[mask & ~eroded] = 0

    if rng.random() < noise.p_downup:
        shape = out.shape
        small = out[::2, ::2, ::2]
        out = small.repeat(2, axis=0).repeat(2, axis=1).repeat(2, axis=2)[: shape[0], : shape[1], : shape[2]]
        out = np.ascontiguousarray(out)

    if noise.boundary_jitter_mm > 0:
        iterations = max(1, int(round(noise.boundary_jitter_mm / min(spacing))))
        for _ in range(iterations):
            out = _jitter(out, rng)

    return out


def corrupt_semantic(gt, noise):
    """
    Corrupt a semantic ground-truth volume.

    Args:
        gt (Volume): Semantic ground truth
        noise (NoiseSpec): Corruption probabilities and seed

    Returns:
        Volume: The corrupted mask on the same grid
    """
    if noise.is_zero:
        return gt
    rng = np.random.default_rng(noise.seed)
    return gt.with_data(corrupt_labels(gt.data, noise, rng, gt.spacing))


def _check_positioned(gt, window):
    if not np.allclose(gt.affine[:3, :3], window.affine[:3, :3], atol=1e-4):
        raise PredictorError(
            f"oracle ground truth grid (spacing {gt.spacing}) does not match the query grid (spacing {window.spacing})"
        )


class OracleSemanticPredictor(SemanticPredictor):
    """Returns the (optionally corrupted) ground truth under each patch."""

    def __init__(self, gt_semantic, noise):
        self.gt = gt_semantic
        self.noise = noise

    def predict_patch(self, patch):
        _check_positioned(self.gt, patch)
        origin = locate_window(self.gt, patch.affine)
        labels = crop_window(self.gt.data, origin, patch.shape)
        if not self.noise.is_zero:
            rng = np.random.default_rng([self.noise.seed, *[max(0, o) for o in origin]])
            labels = corrupt_labels(labels, self.noise, rng, patch.spacing)
        return PatchPrediction(labels=labels)


class OracleInstancePredictor(InstancePredictor):
    """
    Emits above (1), center (2) and below (3) vertebra masks inside a cutout.

    The center vertebra is the ground-truth vertebra whose centroid is
    closest along axis 1 to the cutout center.
    """

    def __init__(self, gt_instance, noise):
        self.gt = gt_instance
        self.noise = noise
        data = gt_instance.data
        vertebra_mask = (data > 0) & (data < IVD_OFFSET)
        self.vertebra_ids = [int(v) for v in np.unique(data[vertebra_mask])]
        centers = ndimage.center_of_mass(vertebra_mask, data, self.vertebra_ids) if self.vertebra_ids else []
        self.rows = np.array([c[1] for c in centers], dtype=np.float64)

    def _neighbours(self, center_row):
        position = int(np.argmin(np.abs(self.rows - center_row)))
        above = self.vertebra_ids[position - 1] if position > 0 else None
        below = self.vertebra_ids[position + 1] if position + 1 < len(self.vertebra_ids) else None
        return above, self.vertebra_ids[position], below

    def predict_cutout(self, window, local_center):
        _check_positioned(self.gt, window)
        origin = locate_window(self.gt, window.affine)
        crop = crop_window(self.gt.data, origin, window.shape)
        labels = np.zeros(window.shape, dtype=np.uint8)

        in_window = (crop > 0) & (crop < IVD_OFFSET)
        if not self.vertebra_ids or not in_window.any():
            return labels

        center = tuple(int(o) + int(c) for o, c in zip(origin, local_center))
        above, middle, below = self._neighbours(center[1])
        for value, vertebra in ((1, above), (2, middle), (3, below)):
            if vertebra is not None:
                labels[crop == vertebra] = value

        if not self.noise.is_zero:
            rng = np.random.default_rng([self.noise.seed, *[max(0, c) for c in center]])
            labels = corrupt_labels(labels, self.noise, rng, window.spacing).astype(np.uint8)
        logger.debug(f"Oracle cutout at {center}: above={above} center={middle} below={below}")
        return labels


def oracle_instance_predictor(gt_instance, noise):
    """Factory for the cutout oracle."""
    return OracleInstancePredictor(gt_instance, noise)


@handle_exceptions
def write_phantom(intensity, semantic, instance, out_dir, spec=None):
    """
    Write a phantom as a NIfTI triple plus labels.json (and the spec, when given).

    Returns:
        dict: Written file paths keyed by role
    """
    if not os.path.exists(out_dir):
        os.makedirs(out_dir)

    paths = {role: os.path.join(out_dir, name) for role, name in PHANTOM_FILES.items()}
    write_nifti(intensity, paths["image"])
    write_nifti(semantic, paths["semantic"])
    write_nifti(instance, paths["instance"])

    paths["labels"] = os.path.join(out_dir, "labels.json")
    write_label_map(paths["labels"])

    if spec is not None:
        paths["spec"] = os.path.join(out_dir, "phantom_spec.json")
        with open(paths["spec"], "w", encoding="utf-8") as f:
            json.dump(json.loads(spec.model_dump_json()), f, indent=4)

    logger.info(f"Wrote phantom to {out_dir}")
    return paths
