"""Refine a coarse segmentation against image evidence.

Two refiners over a shared soft-label field:

* ``dense_crf`` - mean-field inference for a fully connected pairwise field
  with a Gaussian smoothness kernel and a bilateral appearance kernel under a
  Potts compatibility. Message passing is exact O(N^2) up to 4096 pixels;
  larger images run the same updates on a block-downsampled lattice (kernel
  widths rescaled) and the final distribution is upsampled before the argmax.
* ``pamr`` - pixel-adaptive propagation: per-pixel affinities over dilated
  8-neighborhoods, softmax of negative RGB distance, applied iteratively.

Both are deterministic and single-threaded per image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .assignment import SegmentationMap
from .backbones.features import ImageRecord, resize_bilinear
from .errors import NonFinite, ShapeMismatch, UnknownLabel

EXACT_PIXEL_LIMIT = 4096

_NEIGHBOR_DIRS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass
class UnaryField:
    """Soft labels: probs is L x H x W, each pixel's column a distribution."""

    probs: np.ndarray
    label_list: list[int]

    @property
    def n_labels(self) -> int:
        return int(self.probs.shape[0])


@dataclass
class CrfParams:
    iterations: int = 5
    w_smooth: float = 3.0
    w_bilateral: float = 10.0
    theta_xy_smooth: float = 3.0
    theta_xy_bilateral: float = 60.0
    theta_rgb: float = 10.0
    unary_confidence: float = 0.8

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("theta_xy_smooth", "theta_xy_bilateral", "theta_rgb"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.w_smooth < 0 or self.w_bilateral < 0:
            raise ValueError("kernel weights must be nonnegative")


@dataclass
class PamrParams:
    iterations: int = 10
    dilations: tuple[int, ...] = (1, 2, 4, 8, 12, 24)


def labels_to_unary(
    seg: SegmentationMap, active_labels: list[int], confidence: float
) -> UnaryField:
    """Hard labels -> soft field: ``confidence`` on the assigned label, the
    remaining mass split uniformly over the other active labels."""
    labels = sorted(active_labels)
    n = len(labels)
    if n < 2:
        raise ValueError("need at least two active labels")
    if not (1.0 / n <= confidence < 1.0):
        raise ValueError(f"confidence must be in [1/{n}, 1), got {confidence}")
    present = np.unique(seg.labels)
    missing = [int(v) for v in present if int(v) not in set(labels)]
    if missing:
        raise UnknownLabel(f"labels {missing} in the map but not in active_labels")
    index_of = {lab: i for i, lab in enumerate(labels)}
    off = (1.0 - confidence) / (n - 1)
    probs = np.full((n, seg.height, seg.width), off, dtype=np.float64)
    channel = np.vectorize(index_of.get, otypes=[np.int64])(seg.labels)
    rows, cols = np.indices(seg.labels.shape)
    probs[channel, rows, cols] = confidence
    return UnaryField(probs=probs, label_list=labels)


def _combined_kernel(pixels: np.ndarray, params: CrfParams) -> np.ndarray:
    """w_s * smoothness + w_b * bilateral, as one dense N x N matrix, zero diagonal."""
    h, w = pixels.shape[:2]
    n = h * w
    ys, xs = np.mgrid[0:h, 0:w]
    pos = np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.float64)
    rgb = pixels.reshape(n, 3).astype(np.float64)
    kernel = np.empty((n, n), dtype=np.float64)
    inv_s = 1.0 / (2.0 * params.theta_xy_smooth**2)
    inv_b = 1.0 / (2.0 * params.theta_xy_bilateral**2)
    inv_r = 1.0 / (2.0 * params.theta_rgb**2)
    for start in range(0, n, 512):
        rows = slice(start, min(start + 512, n))
        dpos2 = ((pos[rows, None, :] - pos[None, :, :]) ** 2).sum(axis=-1)
        drgb2 = ((rgb[rows, None, :] - rgb[None, :, :]) ** 2).sum(axis=-1)
        kernel[rows] = params.w_smooth * np.exp(-dpos2 * inv_s) + params.w_bilateral * np.exp(
            -dpos2 * inv_b - drgb2 * inv_r
        )
    np.fill_diagonal(kernel, 0.0)
    return kernel


def _mean_field(
    unary_probs: np.ndarray,  # L x N
    kernel: np.ndarray,  # N x N, symmetric, zero diagonal
    iterations: int,
    q_hook: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Potts mean-field updates: Q ∝ exp(-U - sum over other labels' messages)."""
    u = -np.log(unary_probs)
    q = unary_probs.copy()
    for it in range(iterations):
        messages = q @ kernel  # zero diagonal makes this self-excluded
        pairwise = messages.sum(axis=0, keepdims=True) - messages
        logits = -u - pairwise
        logits -= logits.max(axis=0, keepdims=True)
        q = np.exp(logits)
        q /= q.sum(axis=0, keepdims=True)
        if not np.all(np.isfinite(q)):
            raise NonFinite(f"mean-field distribution diverged at iteration {it}")
        if q_hook is not None:
            q_hook(it, q)
    return q


def _block_reduce_mean(arr: np.ndarray, factor: int) -> np.ndarray:
    """Mean-pool the trailing 2 dims by ``factor`` with edge padding to a multiple."""
    *lead, h, w = arr.shape
    pad_h = (-h) % factor
    pad_w = (-w) % factor
    if pad_h or pad_w:
        pad = [(0, 0)] * len(lead) + [(0, pad_h), (0, pad_w)]
        arr = np.pad(arr, pad, mode="edge")
    nh, nw = arr.shape[-2] // factor, arr.shape[-1] // factor
    return arr.reshape(*lead, nh, factor, nw, factor).mean(axis=(-3, -1))


def _crf_probs(
    image: ImageRecord,
    unary: UnaryField,
    params: CrfParams,
    q_hook: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Final L x H x W distribution after mean-field refinement."""
    h, w = image.height, image.width
    if unary.probs.shape[1:] != (h, w):
        raise ShapeMismatch(f"unary {unary.probs.shape[1:]} does not match image {h}x{w}")
    if params.iterations == 0:
        return unary.probs.copy()

    n = h * w
    if n <= EXACT_PIXEL_LIMIT:
        kernel = _combined_kernel(image.pixels, params)
        q = _mean_field(unary.probs.reshape(unary.n_labels, n), kernel, params.iterations, q_hook)
        return q.reshape(unary.n_labels, h, w)

    # Coarse lattice: pool pixels and unaries, shrink spatial kernel widths to
    # match, run the same updates, then upsample the final distribution.
    factor = math.ceil(math.sqrt(n / EXACT_PIXEL_LIMIT))
    coarse_pixels = _block_reduce_mean(
        image.pixels.transpose(2, 0, 1).astype(np.float64), factor
    ).transpose(1, 2, 0)
    coarse_probs = _block_reduce_mean(unary.probs, factor)
    coarse_probs /= coarse_probs.sum(axis=0, keepdims=True)
    coarse_params = CrfParams(
        iterations=params.iterations,
        w_smooth=params.w_smooth,
        w_bilateral=params.w_bilateral,
        theta_xy_smooth=max(params.theta_xy_smooth / factor, 0.5),
        theta_xy_bilateral=max(params.theta_xy_bilateral / factor, 0.5),
        theta_rgb=params.theta_rgb,
        unary_confidence=params.unary_confidence,
    )
    ch, cw = coarse_probs.shape[1:]
    kernel = _combined_kernel(coarse_pixels, coarse_params)
    q = _mean_field(coarse_probs.reshape(unary.n_labels, ch * cw), kernel,
                    params.iterations, q_hook)
    return resize_bilinear(q.reshape(unary.n_labels, ch, cw), h, w)


def dense_crf(
    image: ImageRecord,
    unary: UnaryField,
    params: CrfParams,
    q_hook: Callable[[int, np.ndarray], None] | None = None,
) -> SegmentationMap:
    """Mean-field CRF refinement; returns the per-pixel argmax labels.

    ``q_hook(iteration, Q)`` receives the L x N distribution after every
    update (used by invariant checks); on the coarse path N is the pooled
    lattice size. With zero iterations or zero pairwise weights the output is
    exactly the argmax of the unary field.
    """
    probs = _crf_probs(image, unary, params, q_hook)
    label_arr = np.asarray(unary.label_list, dtype=np.int64)
    return SegmentationMap(labels=label_arr[np.argmax(probs, axis=0)])


def _neighbor_offsets(dilations: tuple[int, ...]) -> list[tuple[int, int]]:
    return [(dy * d, dx * d) for d in dilations for dy, dx in _NEIGHBOR_DIRS]


def _shifted(padded: np.ndarray, pad: int, dy: int, dx: int, h: int, w: int) -> np.ndarray:
    return padded[..., pad + dy : pad + dy + h, pad + dx : pad + dx + w]


def pamr(
    image: ImageRecord,
    unary: UnaryField,
    iterations: int = 10,
    dilations: tuple[int, ...] = (1, 2, 4, 8, 12, 24),
) -> SegmentationMap:
    """Pixel-adaptive refinement: propagate label scores along color affinities.

    Affinity from pixel p to each of its 8 neighbors per dilation is the
    softmax of the negative RGB distance (native 0..255 units) over the whole
    neighborhood, so affinity rows sum to 1 and propagation is a convex
    re-averaging; borders use edge replication.
    """
    h, w = image.height, image.width
    if unary.probs.shape[1:] != (h, w):
        raise ShapeMismatch(f"unary {unary.probs.shape[1:]} does not match image {h}x{w}")
    label_arr = np.asarray(unary.label_list, dtype=np.int64)
    if iterations == 0:
        return SegmentationMap(labels=label_arr[np.argmax(unary.probs, axis=0)])

    offsets = _neighbor_offsets(tuple(dilations))
    pad = max(max(abs(dy), abs(dx)) for dy, dx in offsets)
    img = image.pixels.astype(np.float64).transpose(2, 0, 1)
    img_padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)), mode="edge")

    dists = np.stack(
        [
            np.sqrt(((_shifted(img_padded, pad, dy, dx, h, w) - img) ** 2).sum(axis=0))
            for dy, dx in offsets
        ]
    )
    neg = -dists
    neg -= neg.max(axis=0, keepdims=True)
    affinity = np.exp(neg)
    affinity /= affinity.sum(axis=0, keepdims=True)

    scores = unary.probs.copy()
    for _ in range(iterations):
        padded = np.pad(scores, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
        acc = np.zeros_like(scores)
        for k, (dy, dx) in enumerate(offsets):
            acc += affinity[k] * _shifted(padded, pad, dy, dx, h, w)
        scores = acc
    return SegmentationMap(labels=label_arr[np.argmax(scores, axis=0)])


def refine_per_region(
    image: ImageRecord,
    seg: SegmentationMap,
    params: CrfParams,
) -> SegmentationMap:
    """Binary-per-region CRF mode: refine each labeled region against the rest
    independently, then take the strongest foreground per pixel (ablation
    alternative to the joint multi-label refinement)."""
    present = [int(v) for v in np.unique(seg.labels)]
    if len(present) < 2:
        return SegmentationMap(labels=seg.labels.copy(), palette=seg.palette)
    fg_scores = np.zeros((len(present), seg.height, seg.width))
    for i, lab in enumerate(present):
        conf = params.unary_confidence
        fg = np.where(seg.labels == lab, conf, 1.0 - conf)
        unary = UnaryField(probs=np.stack([1.0 - fg, fg]), label_list=[0, 1])
        fg_scores[i] = _crf_probs(image, unary, params)[1]
    picks = np.argmax(fg_scores, axis=0)
    labels = np.asarray(present, dtype=np.int64)[picks]
    return SegmentationMap(labels=labels, palette=seg.palette)
