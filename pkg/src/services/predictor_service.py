"""
Predictor service module

This module defines the predictor protocol used by both pipeline phases and
the external-process predictor that exchanges NIfTI files with a command.
"""
import glob
import logging
import os
import shlex
import subprocess
import tempfile
import threading
import uuid
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.models.spec_models import PredictorHandle, PredictorKind
from src.models.volume_models import Volume, VolumeKind
from src.services.label_service import N_CLASSES
from src.services.volume_service import read_nifti, write_nifti
from src.utils.error_handlers import ConfigError, PredictorError, VolumeIOError

# Set up logging
logger = logging.getLogger(__name__)


class PatchPrediction(BaseModel):
    """
    Output of a semantic predictor for one patch: either a label patch
    or per-class scores of shape (N_CLASSES, *patch_shape).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    labels: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None

    def validate_for(self, shape):
        """
        Check the prediction against the patch it answers.

        Raises:
            PredictorError: On missing, misshaped or out-of-range output
        """
        shape = tuple(shape)
        if self.scores is not None:
            if self.scores.shape != (N_CLASSES,) + shape:
                raise PredictorError(f"score output has shape {self.scores.shape}, expected {(N_CLASSES,) + shape}")
            return self
        if self.labels is None:
            raise PredictorError("predictor returned neither labels nor scores")
        if self.labels.shape != shape:
            raise PredictorError(f"label output has shape {self.labels.shape}, expected {shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise PredictorError(f"label output holds codes outside 0..{N_CLASSES - 1}")
        return self


class SemanticPredictor(ABC):
    """Predicts semantic labels (or scores) for a positioned intensity patch."""

    @abstractmethod
    def predict_patch(self, patch):
        """
        Args:
            patch (Volume): Intensity patch whose affine locates it in the scan

        Returns:
            PatchPrediction
        """


class InstancePredictor(ABC):
    """Predicts above/center/below vertebra labels (1/2/3) inside a cutout."""

    @abstractmethod
    def predict_cutout(self, window, local_center):
        """
        Args:
            window (Volume): Semantic cutout whose affine locates it in the scan
            local_center: Voxel of the anchoring corpus centroid inside the window

        Returns:
            np.ndarray: uint8 labels in {0, 1, 2, 3} with the window's shape
        """


class ExternalPredictor(SemanticPredictor, InstancePredictor):
    """
    Predictor running a command per patch or cutout.

    The input is written as in_<uuid>.nii.gz into the exchange directory.
    The command writes out_<uuid>.nii.gz (labels) or out_<uuid>_c<k>.nii.gz
    (one score volume per class k). The template may use the {input},
    {output} and {center} placeholders; without {input} and {output} both
    paths are appended as arguments.
    """

    def __init__(self, handle):
        self.handle = handle
        self.exchange_dir = handle.exchange_dir or tempfile.gettempdir()
        self._lock = None if handle.reentrant else threading.Lock()
        if not os.path.exists(self.exchange_dir):
            os.makedirs(self.exchange_dir)

    def build_command(self, in_path, out_path, center=None):
        template = self.handle.command
        center_text = ",".join(str(int(c)) for c in center) if center is not None else ""
        if "{input}" in template or "{output}" in template:
            text = template.format(input=in_path, output=out_path, center=center_text)
            return shlex.split(text)
        return shlex.split(template) + [in_path, out_path]

    def _run(self, volume, center=None):
        uid = uuid.uuid4().hex
        in_path = os.path.join(self.exchange_dir, f"in_{uid}.nii.gz")
        out_path = os.path.join(self.exchange_dir, f"out_{uid}.nii.gz")
        command = self.build_command(in_path, out_path, center)

        write_nifti(volume, in_path)
        try:
            if self._lock is not None:
                with self._lock:
                    completed = self._invoke(command)
            else:
                completed = self._invoke(command)

            if completed.returncode != 0:
                raise PredictorError(
                    "external predictor failed",
                    command=" ".join(command),
                    returncode=completed.returncode,
                    stderr=completed.stderr,
                )
            return self._collect(uid, out_path, volume, command, completed.stderr)
        finally:
            for path in [in_path, out_path] + glob.glob(os.path.join(self.exchange_dir, f"out_{uid}_c*.nii.gz")):
                if os.path.exists(path):
                    os.remove(path)

    def _invoke(self, command):
        logger.debug(f"Running external predictor: {' '.join(command)}")
        try:
            return subprocess.run(
                command,
                capture_output=True,
                text=True,
                timeout=self.handle.timeout,
            )
        except subprocess.TimeoutExpired as e:
            raise PredictorError(
                f"external predictor timed out after {self.handle.timeout}s",
                command=" ".join(command),
                stderr=e.stderr if isinstance(e.stderr, str) else None,
            ) from e
        except OSError as e:
            raise PredictorError(f"cannot start external predictor: {e}", command=" ".join(command)) from e

    def _collect(self, uid, out_path, volume, command, stderr):
        try:
            if os.path.exists(out_path):
                labels = read_nifti(out_path, kind=VolumeKind.SEMANTIC)
                return PatchPrediction(labels=np.asarray(labels.data))

            score_paths = [
                os.path.join(self.exchange_dir, f"out_{uid}_c{k}.nii.gz") for k in range(N_CLASSES)
            ]
            if all(os.path.exists(p) for p in score_paths):
                scores = np.stack([read_nifti(p).data.astype(np.float32) for p in score_paths])
                return PatchPrediction(scores=scores)
        except VolumeIOError as e:
            raise PredictorError(f"malformed predictor output: {e}", command=" ".join(command), stderr=stderr) from e

        raise PredictorError(
            f"predictor wrote no out_{uid}.nii.gz and no complete set of score files",
            command=" ".join(command),
            stderr=stderr,
        )

    def predict_patch(self, patch):
        return self._run(patch).validate_for(patch.shape)

    def predict_cutout(self, window, local_center):
        prediction = self._run(window, center=local_center)
        if prediction.labels is None:
            raise PredictorError("instance predictors must return a label volume")
        labels = prediction.labels
        if labels.shape != window.shape or labels.max(initial=0) > 3:
            raise PredictorError(f"cutout output must be {window.shape} with labels 0..3")
        return labels.astype(np.uint8)


def parse_predictor_uri(uri, exchange_dir=None, timeout=600.0):
    """
    Parse `oracle:<gt path>[,<noise path>]` or `exec:<command template>`.

    Returns:
        PredictorHandle

    Raises:
        ConfigError: For unknown schemes or missing parts
    """
    scheme, _, rest = uri.partition(":")
    rest = rest.strip()
    if not rest:
        raise ConfigError(f"predictor URI {uri!r} has no target")
    if scheme == "oracle":
        parts = [p.strip() for p in rest.split(",")]
        if len(parts) > 2:
            raise ConfigError(f"oracle URI takes a ground-truth path and an optional noise path: {uri!r}")
        return PredictorHandle(
            kind=PredictorKind.ORACLE,
            gt_path=parts[0],
            noise_path=parts[1] if len(parts) == 2 else None,
        )
    if scheme == "exec":
        return PredictorHandle(kind=PredictorKind.EXTERNAL, command=rest, exchange_dir=exchange_dir, timeout=timeout)
    raise ConfigError(f"unknown predictor scheme {scheme!r} in {uri!r}; use oracle: or exec:")


def positioned_patch(parent, data, origin, kind=None):
    """Wrap a sub-array as a Volume located at `origin` inside `parent`."""
    return Volume(data=data, affine=parent.shifted(origin), kind=kind or parent.kind)
