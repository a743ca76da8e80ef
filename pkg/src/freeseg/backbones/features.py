"""Spatial feature stacks: multi-resolution maps resized onto a common grid.

Every map coming out of a backbone block is square at some native resolution
(16, 32 or 64). Before clustering, all maps are resized to ``grid_size`` with
bilinear interpolation (corner-aligned, so identity when sizes match) and
concatenated along the channel axis into one row-per-cell matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from ..errors import ShapeMismatch

KNOWN_RESOLUTIONS = (16, 32, 64)
_KIND_ORDER = {"feature": 0, "attention": 1}


@dataclass
class ImageRecord:
    """An ingested RGB image: uint8 pixels of shape (H, W, 3)."""

    id: str
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeMismatch(f"image {self.id!r}: expected HxWx3, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ShapeMismatch(f"image {self.id!r}: expected uint8 pixels, got {self.pixels.dtype}")
        if self.height < 8 or self.width < 8:
            raise ShapeMismatch(f"image {self.id!r}: minimum size is 8x8, got {self.pixels.shape[:2]}")

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


def load_image(path, image_id: str | None = None) -> ImageRecord:
    """Read a PNG/JPEG from disk into an ImageRecord (id defaults to the file stem)."""
    from pathlib import Path

    path = Path(path)
    pixels = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
    return ImageRecord(id=image_id or path.stem, pixels=pixels)


@dataclass(frozen=True)
class FeatureMap:
    """One backbone map: (channels, r, r) float array tagged by origin."""

    native_resolution: int
    kind: str  # "feature" | "attention"
    block: int
    tensor: np.ndarray

    def validate(self) -> None:
        t = self.tensor
        if self.kind not in _KIND_ORDER:
            raise ShapeMismatch(f"unknown map kind {self.kind!r}")
        if t.ndim != 3:
            raise ShapeMismatch(f"map must be CxRxR, got shape {t.shape}")
        if t.shape[1] != t.shape[2]:
            raise ShapeMismatch(f"map is not square: {t.shape}")
        if t.shape[1] != self.native_resolution:
            raise ShapeMismatch(
                f"map declares resolution {self.native_resolution} but has shape {t.shape}"
            )


@dataclass
class FeatureStack:
    """All maps for one image plus the flattened per-cell concatenation.

    ``concat`` has ``grid_size**2`` rows (cells in row-major order) and one
    column per channel, channels ordered canonically: resolution ascending,
    features before attention, then block index.
    """

    image_id: str
    maps: list[FeatureMap]
    grid_size: int
    concat: np.ndarray
    timestep: int = 0

    @property
    def n_channels(self) -> int:
        return int(self.concat.shape[1])


def resize_bilinear(tensor: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a (C, h, w) or (h, w) array.

    Output corners coincide with input corners; resizing to the same size is
    the exact identity.
    """
    arr = np.asarray(tensor, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    _, h, w = arr.shape
    if (h, w) == (out_h, out_w):
        out = arr.copy()
        return out[0] if squeeze else out

    def src_coords(n_out: int, n_in: int) -> np.ndarray:
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    ys = src_coords(out_h, h)
    xs = src_coords(out_w, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]

    top = arr[:, y0][:, :, x0] * (1 - wx) + arr[:, y0][:, :, x1] * wx
    bot = arr[:, y1][:, :, x0] * (1 - wx) + arr[:, y1][:, :, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out[0] if squeeze else out


def canonical_order(maps: list[FeatureMap]) -> list[FeatureMap]:
    return sorted(maps, key=lambda m: (m.native_resolution, _KIND_ORDER[m.kind], m.block))


def build_stack(
    image_id: str,
    maps: list[FeatureMap],
    grid_size: int = 32,
    timestep: int = 0,
) -> FeatureStack:
    """Resize every map to the grid and concatenate channels into cell rows."""
    if not maps:
        raise ShapeMismatch("cannot build a feature stack from zero maps")
    ordered = canonical_order(maps)
    columns = []
    for m in ordered:
        m.validate()
        resized = resize_bilinear(m.tensor, grid_size, grid_size)
        columns.append(resized.reshape(resized.shape[0], -1).T)  # cells x channels
    concat = np.concatenate(columns, axis=1)
    return FeatureStack(
        image_id=image_id, maps=ordered, grid_size=grid_size, concat=concat, timestep=timestep
    )
