"""Label class-agnostic masks and compose them into a segmentation map.

Each mask is superimposed on the image (background filled, no crop by
default), the masked image is embedded, and the nearest class over the full
dataset vocabulary is taken. The label sticks only if that nearest class is
in the caption-derived candidate set, otherwise the region stays unlabeled.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .backbones.clients import Backend, embed_image, embed_text
from .backbones.features import ImageRecord
from .clustering import BinaryMask
from .errors import EmptyMask, PartitionViolation, ShapeMismatch
from .vocabulary import DEFAULT_PROMPT, CandidateClassSet


@dataclass
class MaskLabel:
    mask_id: int
    class_index: int  # 0 when the candidate gate rejected the nearest class
    nearest_class: int
    distance: float


@dataclass
class SegmentationMap:
    """Per-pixel class indices at image resolution; index 0 is unlabeled."""

    labels: np.ndarray  # H x W, int
    palette: list[str] | None = None  # class index -> name

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])


def apply_mask(image: ImageRecord, mask: BinaryMask, fill: str = "black") -> ImageRecord:
    """Keep pixels under the mask, fill the rest.

    ``black`` zeroes the background at full frame; ``mean`` fills with the
    masked region's mean color; ``crop`` additionally crops to the mask's
    bounding box (padded to the 8px minimum).
    """
    if mask.grid.shape != image.pixels.shape[:2]:
        raise ShapeMismatch(
            f"mask {mask.grid.shape} does not match image {image.pixels.shape[:2]}"
        )
    if not mask.grid.any():
        raise EmptyMask(f"all-false mask for image {image.id!r}")
    if fill == "mean":
        background = image.pixels[mask.grid].mean(axis=0).round().astype(np.uint8)
    else:
        background = np.zeros(3, dtype=np.uint8)
    pixels = np.where(mask.grid[:, :, None], image.pixels, background[None, None, :])
    if fill == "crop":
        rows = np.flatnonzero(mask.grid.any(axis=1))
        cols = np.flatnonzero(mask.grid.any(axis=0))
        r0, r1 = int(rows[0]), int(rows[-1]) + 1
        c0, c1 = int(cols[0]), int(cols[-1]) + 1
        r0, r1 = _pad_span(r0, r1, image.height)
        c0, c1 = _pad_span(c0, c1, image.width)
        pixels = pixels[r0:r1, c0:c1]
    return ImageRecord(id=f"{image.id}+mask", pixels=pixels.astype(np.uint8))


def _pad_span(lo: int, hi: int, limit: int, minimum: int = 8) -> tuple[int, int]:
    while hi - lo < minimum:
        if lo > 0:
            lo -= 1
        elif hi < limit:
            hi += 1
        else:
            break
    return lo, hi


def class_text_vectors(
    backend: Backend,
    classes: CandidateClassSet,
    prompt_template: str = DEFAULT_PROMPT,
) -> np.ndarray:
    """Embeddings for every non-unlabeled class, computed once per run."""
    return np.stack(
        [
            embed_text(backend, prompt_template.format(name)).values
            for name in classes.dataset_classes[1:]
        ]
    )


def classify_mask(
    masked: ImageRecord,
    classes: CandidateClassSet,
    backend: Backend,
    mask_id: int = 0,
    class_vectors: np.ndarray | None = None,
    prompt_template: str = DEFAULT_PROMPT,
) -> MaskLabel:
    """Nearest text embedding over ALL dataset classes, then the candidate gate.

    The nearest class is searched over the full vocabulary (the gate has to
    compare it against the candidate set, so a candidates-only search would
    change semantics). Ties go to the lowest class index.
    """
    if len(classes.dataset_classes) < 2:
        raise ValueError("need at least one class besides the unlabeled slot")
    if class_vectors is None:
        class_vectors = class_text_vectors(backend, classes, prompt_template)
    image_vec = embed_image(backend, masked).values
    distances = 1.0 - class_vectors @ image_vec
    nearest = int(np.argmin(distances)) + 1  # +1: class_vectors skip the unlabeled slot
    accepted = nearest in classes.candidates
    return MaskLabel(
        mask_id=mask_id,
        class_index=nearest if accepted else 0,
        nearest_class=nearest,
        distance=float(distances[nearest - 1]),
    )


def compose(
    labeled_masks: list[tuple[BinaryMask, MaskLabel]],
    height: int,
    width: int,
    palette: list[str] | None = None,
) -> SegmentationMap:
    """Merge per-mask labels into one map; masks must partition the image."""
    coverage = np.zeros((height, width), dtype=np.int32)
    labels = np.zeros((height, width), dtype=np.int32)
    for mask, label in labeled_masks:
        if mask.grid.shape != (height, width):
            raise ShapeMismatch(
                f"mask {mask.grid.shape} does not match target {height}x{width}"
            )
        coverage += mask.grid
        labels[mask.grid] = label.class_index
    if (coverage != 1).any():
        overlaps = int((coverage > 1).sum())
        gaps = int((coverage == 0).sum())
        raise PartitionViolation(
            f"masks do not partition the image: {overlaps} overlapping, {gaps} uncovered pixels"
        )
    return SegmentationMap(labels=labels, palette=palette)
