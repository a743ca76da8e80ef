"""Paletted PNG dumps: label maps, cluster maps, overlays."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def color_map(n: int = 256) -> np.ndarray:
    """Deterministic n x 3 palette (the usual bit-reversal segmentation colors)."""
    cmap = np.zeros((n, 3), dtype=np.uint8)
    for i in range(n):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        cmap[i] = (r, g, b)
    return cmap


def save_label_png(labels: np.ndarray, path: str | Path) -> None:
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(color_map().ravel().tolist())
    img.save(path)


def save_cluster_png(assignments: np.ndarray, path: str | Path) -> None:
    # shift by 1 so cluster 0 is not palette black
    save_label_png(assignments.astype(np.uint8) + 1, path)


def save_overlay_png(pixels: np.ndarray, labels: np.ndarray, path: str | Path,
                     alpha: float = 0.5) -> None:
    colors = color_map()[labels.astype(np.uint8)]
    blended = pixels.astype(np.float64) * (1 - alpha) + colors.astype(np.float64) * alpha
    out = np.where(labels[..., None] > 0, blended, pixels.astype(np.float64))
    Image.fromarray(out.round().astype(np.uint8)).save(path)
