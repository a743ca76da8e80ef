import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freeseg.backbones.clients import extract_features
from freeseg.backbones.features import FeatureMap, build_stack
from freeseg.clustering import (
    BinaryMask,
    binarize,
    cluster_features,
    kmeans,
    standardize_columns,
    upsample_nearest,
)
from freeseg.errors import DegenerateInput, NonFinite, ShapeMismatch


def brute_force_two_means(points: np.ndarray) -> float:
    """Optimal 2-cluster inertia by enumerating every nonempty bipartition."""
    n = len(points)
    best = np.inf
    for size in range(1, n // 2 + 1):
        for left in itertools.combinations(range(n), size):
            mask = np.zeros(n, dtype=bool)
            mask[list(left)] = True
            inertia = 0.0
            for side in (points[mask], points[~mask]):
                inertia += ((side - side.mean(axis=0)) ** 2).sum()
            best = min(best, inertia)
    return best


def test_two_d_toy_recovers_optimal_partition():
    points = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    result = kmeans(points, 2, seed=0)
    assert result.inertia == pytest.approx(1.0, abs=1e-9)
    assert result.inertia == pytest.approx(brute_force_two_means(points), abs=1e-9)
    got = {tuple(np.round(c, 6)) for c in result.centroids}
    assert got == {(0.0, 0.5), (10.0, 0.5)}


def test_n_equals_k_zero_inertia():
    rng = np.random.default_rng(3)
    points = rng.standard_normal((5, 3))
    result = kmeans(points, 5, seed=1)
    assert result.inertia == pytest.approx(0.0, abs=1e-12)
    assert sorted(result.assignments.tolist()) == [0, 1, 2, 3, 4]


def test_identical_points_reseeded_duplicate():
    points = np.ones((6, 2))
    result = kmeans(points, 2, seed=0)
    assert result.inertia == 0.0
    populated = set(result.assignments.tolist())
    assert len(populated) == 1
    empty = ({0, 1} - populated).pop()
    assert empty in result.reseeded


def test_degenerate_and_nonfinite_inputs():
    with pytest.raises(DegenerateInput):
        kmeans(np.zeros((2, 2)), 3, seed=0)
    bad = np.zeros((4, 2))
    bad[1, 1] = np.nan
    with pytest.raises(NonFinite):
        kmeans(bad, 2, seed=0)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10**6),
    n=st.integers(5, 80),
    c=st.integers(1, 8),
    k=st.integers(1, 5),
)
def test_lloyd_monotone_and_assignments_exact(seed, n, c, k):
    rng = np.random.default_rng(seed)
    if n < k:
        n = k
    points = rng.standard_normal((n, c))
    result = kmeans(points, k, seed=seed, debug=True)
    hist = result.inertia_history
    for a, b in zip(hist, hist[1:]):
        assert b <= a * (1 + 1e-12) + 1e-12
    # every assignment is the true argmin over centroids
    d2 = ((points[:, None, :] - result.centroids[None, :, :]) ** 2).sum(axis=-1)
    assert np.array_equal(result.assignments, np.argmin(d2, axis=1))
    assert result.inertia == pytest.approx(
        float(d2[np.arange(n), result.assignments].sum()), rel=1e-6
    )


def test_fixed_seed_bitwise_identical():
    rng = np.random.default_rng(42)
    points = rng.standard_normal((200, 6))
    a = kmeans(points, 4, seed=9)
    b = kmeans(points, 4, seed=9)
    assert np.array_equal(a.assignments, b.assignments)
    assert np.array_equal(a.centroids, b.centroids)


def test_standardize_zeroes_constant_columns():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 3))
    x[:, 1] = 7.5
    out = standardize_columns(x)
    assert np.all(out[:, 1] == 0.0)
    assert np.allclose(out[:, 0].mean(), 0, atol=1e-12)
    assert np.allclose(out[:, 0].std(), 1, atol=1e-9)


def test_constant_channel_does_not_change_clustering():
    rng = np.random.default_rng(5)
    tensor = rng.standard_normal((4, 8, 8))
    const = np.full((1, 8, 8), 3.3)
    stack_a = build_stack("a", [FeatureMap(8, "feature", 0, tensor)], grid_size=8)
    stack_b = build_stack(
        "b",
        [FeatureMap(8, "feature", 0, np.concatenate([tensor, const]))],
        grid_size=8,
    )
    ra = cluster_features(stack_a, k=3, seed=11)
    rb = cluster_features(stack_b, k=3, seed=11)
    assert np.array_equal(ra.assignments, rb.assignments)
    assert ra.inertia == pytest.approx(rb.inertia, rel=1e-9)


def test_cluster_features_deterministic(bird_image, replay_backend):
    stack = extract_features(replay_backend, bird_image, resolutions={16})
    a = cluster_features(stack, k=4, seed=0)
    b = cluster_features(stack, k=4, seed=0)
    assert np.array_equal(a.assignments, b.assignments)
    assert a.K == 4 and len(set(a.assignments.tolist())) <= 4


def test_binarize_partitions_grid():
    rng = np.random.default_rng(2)
    points = rng.standard_normal((16, 2))
    result = kmeans(points, 3, seed=0)
    masks = binarize(result, 4)
    total = sum(m.grid.sum() for m in masks)
    assert total == 16
    union = np.zeros((4, 4), dtype=int)
    for m in masks:
        union += m.grid
    assert np.all(union == 1)


def test_binarize_single_cluster_all_true():
    points = np.zeros((4, 2))
    result = kmeans(points, 1, seed=0)
    (mask,) = binarize(result, 2)
    assert mask.grid.all()


def test_binarize_checkerboard():
    checker = np.indices((4, 4)).sum(axis=0) % 2
    result = kmeans(np.arange(16, dtype=float)[:, None], 2, seed=0)
    result.assignments = checker.ravel()
    masks = binarize(result, 4)
    assert np.array_equal(masks[0].grid, checker == 0)
    assert np.array_equal(masks[1].grid, checker == 1)
    assert np.array_equal(masks[0].grid, ~masks[1].grid)


def test_upsample_integer_scale_blocks():
    mask = BinaryMask(grid=np.array([[True, False], [False, True]]), resolution="feature-grid")
    up = upsample_nearest(mask, 4, 4)
    expected = np.array(
        [
            [True, True, False, False],
            [True, True, False, False],
            [False, False, True, True],
            [False, False, True, True],
        ]
    )
    assert np.array_equal(up.grid, expected)


def test_upsample_identity():
    grid = np.random.default_rng(0).random((5, 7)) > 0.5
    mask = BinaryMask(grid=grid, resolution="feature-grid")
    assert np.array_equal(upsample_nearest(mask, 5, 7).grid, grid)


def test_upsample_rejects_downscale():
    mask = BinaryMask(grid=np.ones((4, 4), dtype=bool), resolution="feature-grid")
    with pytest.raises(ShapeMismatch):
        upsample_nearest(mask, 2, 8)


def test_upsample_voc_shape_preserves_partition():
    rng = np.random.default_rng(1)
    assignments = rng.integers(0, 4, size=32 * 32)
    masks = [
        BinaryMask(grid=(assignments.reshape(32, 32) == k), resolution="feature-grid")
        for k in range(4)
    ]
    ups = [upsample_nearest(m, 500, 375) for m in masks]
    assert sum(int(m.grid.sum()) for m in ups) == 500 * 375
    union = np.zeros((500, 375), dtype=int)
    for m in ups:
        union += m.grid
    assert np.all(union == 1)
