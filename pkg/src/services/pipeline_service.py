"""
Pipeline service module

This module runs the two-phase segmentation: tiled semantic prediction
with window-weighted blending, instance assembly from the semantic mask,
and consistency post-processing. It also builds predictors from handles.
"""
import itertools
import logging
import time
from contextlib import contextmanager
from functools import lru_cache

import numpy as np
from scipy import ndimage

from src.models.report_models import RunReport
from src.models.spec_models import BlendMode, NoiseSpec, PipelineConfig, PredictorKind, TilingSpec
from src.models.volume_models import CANONICAL_ORIENTATION, VolumeKind
from src.services.assembly_service import assemble
from src.services.label_service import N_CLASSES, SemanticLabel
from src.services.phantom_service import OracleSemanticPredictor, oracle_instance_predictor
from src.services.postproc_service import enforce_consistency
from src.services.predictor_service import ExternalPredictor, positioned_patch
from src.services.volume_service import read_nifti, reorient, resample
from src.utils.error_handlers import PipelineError, SpinekitError, handle_exceptions, load_json_model
from src.utils.thread_manager import WorkerPool

# Set up logging
logger = logging.getLogger(__name__)

# Rows of axis 0 blended at once
BLEND_CHUNK = 16


def _axis_origins(dim, patch, overlap):
    if dim <= patch:
        return [0]
    stride = max(1, int(patch * (1.0 - overlap)))
    return list(range(0, dim - patch, stride)) + [dim - patch]


def tile_volume(dims, spec=None):
    """
    Patch origins covering a volume.

    Along each axis the stride is floor(patch * (1 - overlap)) and the last
    patch is aligned with the far edge. A volume smaller than the patch
    yields a single patch clamped to the volume.

    Args:
        dims: Volume dims
        spec (TilingSpec): Patch size and overlap

    Returns:
        list: Origins in C order
    """
    spec = spec or TilingSpec()
    per_axis = [_axis_origins(int(n), int(p), spec.overlap) for n, p in zip(dims, spec.patch_size)]
    return [tuple(origin) for origin in itertools.product(*per_axis)]


def patch_shape(dims, spec):
    """Effective patch dims (clamped to the volume)."""
    return tuple(min(int(n), int(p)) for n, p in zip(dims, spec.patch_size))


@lru_cache(maxsize=8)
def importance_map(shape, blend=BlendMode.GAUSSIAN):
    """
    Blending window of a patch.

    The gaussian window peaks at the patch center with sigma = shape / 8
    per axis, scaled to a maximum of 1; zeros are raised to the smallest
    positive value so every voxel keeps some weight.
    """
    if BlendMode(blend) is BlendMode.UNIFORM:
        window = np.ones(shape, dtype=np.float32)
    else:
        impulse = np.zeros(shape, dtype=np.float64)
        impulse[tuple(s // 2 for s in shape)] = 1.0
        window = ndimage.gaussian_filter(impulse, sigma=[s / 8.0 for s in shape], mode="constant", cval=0.0)
        window = window / window.max()
        positive = window[window > 0]
        window[window == 0] = positive.min()
        window = window.astype(np.float32)
    window.setflags(write=False)
    return window


class _Blender:
    """
    Accumulates patch contributions in a fixed order.

    Score patches are added into a dense per-class accumulator; label
    patches are kept as uint8 votes and expanded chunk by chunk when the
    result is read out.
    """

    def __init__(self, dims):
        self.dims = tuple(dims)
        self.scores = None
        self.weights = np.zeros(self.dims, dtype=np.float32)
        self.votes = []

    def add(self, origin, prediction, window):
        region = tuple(slice(o, o + s) for o, s in zip(origin, window.shape))
        self.weights[region] += window
        if prediction.scores is not None:
            if self.scores is None:
                self.scores = np.zeros((N_CLASSES,) + self.dims, dtype=np.float32)
            self.scores[(slice(None),) + region] += prediction.scores.astype(np.float32) * window
        else:
            self.votes.append((origin, prediction.labels.astype(np.uint8), window))

    def _chunk(self, start, stop):
        acc = np.zeros((N_CLASSES, stop - start) + self.dims[1:], dtype=np.float32)
        if self.scores is not None:
            acc += self.scores[:, start:stop]
        for origin, labels, window in self.votes:
            lo, hi = max(start, origin[0]), min(stop, origin[0] + labels.shape[0])
            if hi <= lo:
                continue
            local = slice(lo - origin[0], hi - origin[0])
            target = (slice(lo - start, hi - start),) + tuple(
                slice(o, o + s) for o, s in zip(origin[1:], labels.shape[1:])
            )
            lab, weight = labels[local], window[local]
            for code in np.unique(lab):
                acc[(int(code),) + target] += np.where(lab == code, weight, 0.0)
        return acc

    def result(self, return_scores=False):
        labels = np.zeros(self.dims, dtype=np.uint16)
        scores = np.zeros((N_CLASSES,) + self.dims, dtype=np.float32) if return_scores else None
        for start in range(0, self.dims[0], BLEND_CHUNK):
            stop = min(self.dims[0], start + BLEND_CHUNK)
            acc = self._chunk(start, stop)
            # argmax keeps the lowest code on ties
            labels[start:stop] = np.argmax(acc, axis=0)
            if return_scores:
                scores[:, start:stop] = acc / np.maximum(self.weights[start:stop], 1e-12)
        return labels, scores


@handle_exceptions
def predict_semantic(vol, predictors, spec=None, workers=1, return_scores=False):
    """
    Tiled semantic prediction.

    Every predictor sees every patch; all contributions are weighted by
    the blending window and summed (label patches as one-hot votes)
    before the argmax.

    Args:
        vol (Volume): Intensity volume
        predictors: One SemanticPredictor or a list (ensemble)
        spec (TilingSpec): Tiling parameters
        workers: Parallel patch predictions
        return_scores: Also return blended per-class scores

    Returns:
        Volume, or (Volume, np.ndarray) with return_scores
    """
    spec = spec or TilingSpec()
    if not isinstance(predictors, (list, tuple)):
        predictors = [predictors]
    origins = tile_volume(vol.shape, spec)
    shape = patch_shape(vol.shape, spec)
    window = importance_map(shape, spec.blend)
    logger.info(f"Predicting {len(origins)} patches of {shape} with {len(predictors)} predictor(s)")

    def predict(task):
        origin, predictor = task
        region = tuple(slice(o, o + s) for o, s in zip(origin, shape))
        patch = positioned_patch(vol, vol.data[region], origin)
        prediction = predictor.predict_patch(patch).validate_for(shape)
        logger.debug(f"Patch at {origin} predicted")
        return prediction

    blender = _Blender(vol.shape)
    tasks = [(origin, predictor) for origin in origins for predictor in predictors]
    pool = WorkerPool(workers)
    batch = max(1, int(workers))
    for start in range(0, len(tasks), batch):
        chunk = tasks[start:start + batch]
        for (origin, _), prediction in zip(chunk, pool.map(predict, chunk, desc="patches")):
            blender.add(origin, prediction, window)

    labels, scores = blender.result(return_scores)
    semantic = vol.with_data(labels, kind=VolumeKind.SEMANTIC)
    if return_scores:
        return semantic, scores
    return semantic


def _load_oracle_gt(path, kind, target_spacing=None):
    gt = reorient(read_nifti(path, kind=kind), CANONICAL_ORIENTATION)
    if target_spacing is not None:
        gt = resample(gt, target_spacing, mode="nearest")
    return gt


def _load_noise(handle):
    if handle.noise_path:
        return load_json_model(handle.noise_path, NoiseSpec)
    return NoiseSpec.zero()


def build_semantic_predictor(handle, target_spacing=None):
    """Create a semantic predictor from a PredictorHandle."""
    if handle.kind is PredictorKind.ORACLE:
        gt = _load_oracle_gt(handle.gt_path, VolumeKind.SEMANTIC, target_spacing)
        return OracleSemanticPredictor(gt, _load_noise(handle))
    return ExternalPredictor(handle)


def build_instance_predictor(handle, target_spacing=None):
    """Create a cutout predictor from a PredictorHandle."""
    if handle.kind is PredictorKind.ORACLE:
        gt = _load_oracle_gt(handle.gt_path, VolumeKind.INSTANCE, target_spacing)
        return oracle_instance_predictor(gt, _load_noise(handle))
    return ExternalPredictor(handle)


@contextmanager
def _stage(name, report):
    start = time.perf_counter()
    try:
        yield
    except SpinekitError:
        raise
    except Exception as e:
        raise PipelineError(name, str(e)) from e
    finally:
        report.timings[name] = round(time.perf_counter() - start, 4)


def _to_input_grid(result, working, original):
    """Map a label volume from the working grid back onto the input grid."""
    if result.same_grid(original):
        return original.with_data(result.data, kind=result.kind)
    canonical_input = reorient(original, CANONICAL_ORIENTATION)
    mapped = resample(result, canonical_input.spacing, mode="nearest", shape=canonical_input.shape)
    mapped = canonical_input.with_data(mapped.data, kind=result.kind)
    return original.with_data(reorient(mapped, original.orientation).data, kind=result.kind)


@handle_exceptions
def run_pipeline(vol, semantic_predictors, instance_predictor, config=None, return_raw=False):
    """
    Segment a scan: semantic phase, instance assembly, post-processing.

    Args:
        vol (Volume): Intensity scan
        semantic_predictors: One or more SemanticPredictors (ensemble)
        instance_predictor (InstancePredictor): Cutout predictor
        config (PipelineConfig): Run parameters
        return_raw: Also return the instance mask before post-processing

    Returns:
        tuple: (semantic Volume, instance Volume, RunReport[, raw instance Volume])
    """
    config = config or PipelineConfig()
    report = RunReport()

    with _stage("preprocess", report):
        working = reorient(vol, CANONICAL_ORIENTATION)
        if config.target_spacing is not None:
            working = resample(working, config.target_spacing, mode="trilinear")
        report.n_patches = len(tile_volume(working.shape, config.tiling))

    with _stage("semantic", report):
        semantic = predict_semantic(working, semantic_predictors, config.tiling, config.workers)

    if not np.any(semantic.data == SemanticLabel.CORPUS):
        message = "semantic mask has no corpus voxels; instance mask will hold no vertebrae"
        report.warnings.append(message)
        logger.warning(message)

    with _stage("assembly", report):
        instance, assembly = assemble(
            semantic,
            instance_predictor,
            cutout_size=config.cutout_size,
            min_volume_fraction=config.min_volume_fraction,
            workers=config.workers,
        )
    report.cutouts = assembly.cutouts
    report.groups = assembly.groups
    report.n_vertebrae = assembly.n_vertebrae
    report.flags.extend(assembly.flags)
    report.raw_instance_voxels = int(np.count_nonzero(instance.data))
    raw_instance = instance

    if config.postprocess:
        with _stage("postprocess", report):
            semantic, instance, report.consistency = enforce_consistency(semantic, instance, report.flags)

    with _stage("export", report):
        semantic_out = _to_input_grid(semantic, working, vol)
        instance_out = _to_input_grid(instance, working, vol)
        raw_out = _to_input_grid(raw_instance, working, vol) if return_raw else None

    logger.info(
        f"Pipeline finished: {len(report.cutouts)} cutouts, {report.n_vertebrae} vertebrae, "
        f"{len(report.flags)} flags"
    )
    if return_raw:
        return semantic_out, instance_out, report, raw_out
    return semantic_out, instance_out, report
