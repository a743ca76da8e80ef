"""Class-agnostic region discovery: K-means over per-cell features.

Lloyd iterations with k-means++ seeding, fully deterministic for a fixed
seed: ties break to the lowest centroid index, empty clusters are reseeded
to the point currently farthest from its assigned centroid, and the
assignment step always runs once more after the final centroid update so
returned assignments are exact nearest-centroid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, NonFinite, ShapeMismatch
from .backbones.features import FeatureStack

_ASSIGN_CHUNK = 256  # fixed chunking keeps reduction order (and results) stable


@dataclass
class ClusterResult:
    K: int
    centroids: np.ndarray  # K x C
    assignments: np.ndarray  # N, values in [0, K)
    inertia: float
    iterations: int
    seed: int
    inertia_history: list[float] = field(default_factory=list)
    reseeded: list[int] = field(default_factory=list)


@dataclass
class BinaryMask:
    grid: np.ndarray  # bool, H x W
    resolution: str  # "feature-grid" | "image"

    @property
    def size(self) -> int:
        return int(self.grid.sum())


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest-centroid assignment; ties resolve to the lowest index."""
    n = points.shape[0]
    assignments = np.empty(n, dtype=np.int64)
    dist2 = np.empty(n, dtype=np.float64)
    for start in range(0, n, _ASSIGN_CHUNK):
        chunk = points[start : start + _ASSIGN_CHUNK]
        diff = chunk[:, None, :] - centroids[None, :, :]
        d2 = np.einsum("nkc,nkc->nk", diff, diff)
        a = np.argmin(d2, axis=1)
        assignments[start : start + chunk.shape[0]] = a
        dist2[start : start + chunk.shape[0]] = d2[np.arange(chunk.shape[0]), a]
    return assignments, dist2


def _init_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))  # all remaining mass at distance 0
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 300,
    tol: float = 1e-4,
    debug: bool = False,
) -> ClusterResult:
    """Lloyd's algorithm with k-means++ initialization.

    Stops when the Frobenius norm of the centroid shift drops below ``tol``
    or after ``max_iters`` update rounds. With ``debug`` the per-round
    inertia is asserted non-increasing (up to float rounding).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ShapeMismatch(f"points must be NxC, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise NonFinite("points contain NaN or Inf")
    n = pts.shape[0]
    if k < 1 or n < k:
        raise DegenerateInput(f"need N >= K >= 1, got N={n}, K={k}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")

    rng = np.random.default_rng(seed)
    centroids = _init_plus_plus(pts, k, rng)
    history: list[float] = []
    reseeded: list[int] = []
    iterations = 0

    for _ in range(max_iters):
        assignments, dist2 = _assign(pts, centroids)
        inertia = float(dist2.sum())
        if debug and history and inertia > history[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"inertia increased: {history[-1]} -> {inertia}")
        history.append(inertia)

        new_centroids = centroids.copy()
        counts = np.bincount(assignments, minlength=k)
        for c in range(k):
            if counts[c] > 0:
                new_centroids[c] = pts[assignments == c].mean(axis=0)
        # reseed empties to the farthest-from-its-centroid point, one each
        claimable = dist2.copy()
        for c in range(k):
            if counts[c] == 0:
                far = int(np.argmax(claimable))
                new_centroids[c] = pts[far]
                claimable[far] = -1.0
                if c not in reseeded:
                    reseeded.append(c)

        shift = float(np.linalg.norm(new_centroids - centroids))
        centroids = new_centroids
        iterations += 1
        if shift < tol:
            break

    assignments, dist2 = _assign(pts, centroids)
    inertia = float(dist2.sum())
    history.append(inertia)
    return ClusterResult(
        K=k,
        centroids=centroids,
        assignments=assignments,
        inertia=inertia,
        iterations=iterations,
        seed=seed,
        inertia_history=history,
        reseeded=reseeded,
    )


def standardize_columns(matrix: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance per column; (near-)constant columns become zero."""
    x = np.asarray(matrix, dtype=np.float64)
    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    centered = x - mu
    keep = sigma > 1e-9 * (np.abs(mu) + 1.0)
    out = np.zeros_like(centered)
    out[:, keep] = centered[:, keep] / sigma[keep]
    return out


def cluster_features(
    stack: FeatureStack,
    k: int = 4,
    seed: int = 0,
    max_iters: int = 300,
    tol: float = 1e-4,
    standardize: bool = True,
) -> ClusterResult:
    """K-means over the per-cell rows of a feature stack.

    Per-channel standardization (default on) stops high-variance blocks from
    dominating the L2 metric when maps from several resolutions are mixed.
    """
    matrix = stack.concat
    if standardize:
        matrix = standardize_columns(matrix)
    return kmeans(matrix, k, seed=seed, max_iters=max_iters, tol=tol)


def binarize(result: ClusterResult, grid_size: int) -> list[BinaryMask]:
    """One boolean mask per cluster at the feature grid; masks partition the grid."""
    if result.assignments.shape[0] != grid_size * grid_size:
        raise ShapeMismatch(
            f"{result.assignments.shape[0]} assignments cannot fill a "
            f"{grid_size}x{grid_size} grid"
        )
    grid = result.assignments.reshape(grid_size, grid_size)
    return [BinaryMask(grid=(grid == c), resolution="feature-grid") for c in range(result.K)]


def upsample_nearest(mask: BinaryMask, height: int, width: int) -> BinaryMask:
    """Nearest-neighbor upsample: source index floor(i * h / H).

    Integer scale factors replicate each source cell as an exact block, and
    masks that partition the source grid still partition the target.
    """
    h, w = mask.grid.shape
    if height < h or width < w:
        raise ShapeMismatch(f"target {height}x{width} smaller than source {h}x{w}")
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return BinaryMask(grid=mask.grid[np.ix_(rows, cols)], resolution="image")
