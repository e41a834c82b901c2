"""
Annotation service module

This module merges three annotation sources (base structures, translated
vertebra substructures and a spinal cord mask) into one 14-label semantic
mask and synthesizes endplates between corpus and disc.
"""
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import ndimage

from src.models.report_models import FusionSummary
from src.models.volume_models import Volume, VolumeKind
from src.services.label_service import SemanticLabel, vertebra_body_codes
from src.services.volume_service import STRUCTURE_6, STRUCTURE_26, fill_holes, require_same_grid
from src.utils.error_handlers import LabelError, handle_exceptions

# Set up logging
logger = logging.getLogger(__name__)

BASE_CODES = frozenset({SemanticLabel.CORPUS, SemanticLabel.IVD, SemanticLabel.SPINAL_CANAL, SemanticLabel.SACRUM})


class AnnotationSources(BaseModel):
    """The three aligned inputs of annotation fusion."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    base: Volume
    substructures: Volume
    cord: Volume

    @model_validator(mode="after")
    def _aligned(self):
        require_same_grid(self.base, self.substructures, self.cord)
        return self


def _check_codes(name, data, allowed):
    present = set(int(v) for v in np.unique(data)) - {0}
    unexpected = present - set(int(c) for c in allowed)
    if unexpected:
        raise LabelError(f"{name} source holds unexpected codes {sorted(unexpected)}")


def merge_sources(sources, summary=None):
    """
    Overlay the sources with fixed priority.

    Base labels are copied first. Substructure labels only land on
    background. Cord lands on background or canal, the single permitted
    overwrite.

    Args:
        sources (AnnotationSources): Aligned inputs
        summary (FusionSummary): Optional summary receiving overwrite counts

    Returns:
        Volume: Merged semantic mask
    """
    _check_codes("base", sources.base.data, BASE_CODES)
    _check_codes("substructure", sources.substructures.data, vertebra_body_codes())

    merged = np.array(sources.base.data, dtype=np.uint16, copy=True)

    sub = sources.substructures.data
    sub_fg = sub != 0
    placeable = sub_fg & (merged == 0)
    merged[placeable] = sub[placeable]

    cord = sources.cord.data != 0
    on_canal = cord & (merged == SemanticLabel.SPINAL_CANAL)
    cord_ok = cord & ((merged == 0) | on_canal)
    merged[cord_ok] = SemanticLabel.SPINAL_CORD

    if summary is not None:
        summary.substructure_blocked = int(np.count_nonzero(sub_fg & ~placeable))
        summary.cord_blocked = int(np.count_nonzero(cord & ~cord_ok))
        summary.canal_to_cord = int(np.count_nonzero(on_canal))

    return sources.base.with_data(merged, kind=VolumeKind.SEMANTIC)


def _closed_region(labels):
    """Corpus and disc voxels after a 3x3x3 closing and hole filling."""
    region = (labels == SemanticLabel.CORPUS) | (labels == SemanticLabel.IVD)
    closed = ndimage.binary_closing(region, structure=STRUCTURE_26)
    return fill_holes(closed | region)


def transition_zone(labels):
    """Background voxels enclosed by the closed corpus/disc region."""
    return _closed_region(labels) & (labels == 0)


def synthesize_endplates(mask, summary=None):
    """
    Relabel corpus/disc transition voxels as endplate.

    A background voxel inside the filled corpus/disc region becomes
    endplate when it is 6-adjacent to both a corpus and a disc voxel.

    Args:
        mask (Volume): Semantic mask
        summary (FusionSummary): Optional summary receiving counts

    Returns:
        Volume: The mask with endplates added
    """
    labels = np.array(mask.data, copy=True)
    zone = transition_zone(labels)
    near_corpus = ndimage.binary_dilation(labels == SemanticLabel.CORPUS, structure=STRUCTURE_6)
    near_ivd = ndimage.binary_dilation(labels == SemanticLabel.IVD, structure=STRUCTURE_6)
    endplate = zone & near_corpus & near_ivd
    labels[endplate] = SemanticLabel.ENDPLATE

    if summary is not None:
        summary.endplates_synthesized += int(np.count_nonzero(endplate))
        summary.cord_in_transition = int(np.count_nonzero(
            _closed_region(labels) & (labels == SemanticLabel.SPINAL_CORD)
        ))
    logger.info(f"Synthesized {int(np.count_nonzero(endplate))} endplate voxels")
    return mask.with_data(labels)


@handle_exceptions
def fuse_annotations(sources):
    """
    Merge the sources, then synthesize endplates.

    Endplates are synthesized after cord insertion; cord voxels inside a
    transition zone are counted in the summary.

    Returns:
        tuple: (semantic Volume, FusionSummary)
    """
    summary = FusionSummary()
    merged = merge_sources(sources, summary)
    fused = synthesize_endplates(merged, summary)

    values, counts = np.unique(fused.data, return_counts=True)
    summary.label_counts = {
        SemanticLabel(int(v)).label_name: int(c) for v, c in zip(values, counts) if v
    }
    return fused, summary
