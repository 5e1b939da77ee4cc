#!/usr/bin/env python3
"""
Tests for k-means on proportions, connected components and small-segment clean-up
"""

from collections import deque

import numpy as np

from errors import InputError
from finalseg import _lloyd, cleanup, connected_components, kmeans, segment_proportions
from labels import compact_labels
from testkit import raises, run_tests


def _flood_fill(assignments):
    """Independent 4-connected flood fill, labels in first-encounter row-major order"""
    h, w = assignments.shape
    out = np.full((h, w), -1, dtype=np.int64)
    next_label = 0
    for r in range(h):
        for c in range(w):
            if out[r, c] >= 0:
                continue
            queue = deque([(r, c)])
            out[r, c] = next_label
            while queue:
                y, x = queue.popleft()
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and out[ny, nx] < 0 \
                            and assignments[ny, nx] == assignments[y, x]:
                        out[ny, nx] = next_label
                        queue.append((ny, nx))
            next_label += 1
    return out


def _reference_cleanup(labels, min_size):
    """Same rule written with dictionaries and explicit rescans"""
    labels = compact_labels(labels).copy()
    while True:
        sizes = {int(l): int((labels == l).sum()) for l in np.unique(labels)}
        if len(sizes) <= 1:
            return compact_labels(labels)
        small = [(s, l) for l, s in sizes.items() if s < min_size]
        if not small:
            return compact_labels(labels)
        _, label = min(small)
        mask = labels == label
        neighbors = set()
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            shifted = np.zeros_like(mask)
            if dy == 1:
                shifted[1:, :] = mask[:-1, :]
            elif dy == -1:
                shifted[:-1, :] = mask[1:, :]
            elif dx == 1:
                shifted[:, 1:] = mask[:, :-1]
            else:
                shifted[:, :-1] = mask[:, 1:]
            neighbors |= set(np.unique(labels[shifted & ~mask]).tolist())
        target = max(neighbors, key=lambda n: (sizes[n], -n))
        labels[mask] = target


def test_two_groups_split_perfectly():
    proportions = np.array([[1.0, 0.0]] * 5 + [[0.0, 1.0]] * 5).reshape(2, 5, 2)
    result = kmeans(proportions, 2, seed=0)
    assert result.objective == 0
    flat = result.assignments.ravel()
    assert len(set(flat[:5])) == 1 and len(set(flat[5:])) == 1 and flat[0] != flat[5]


def test_k_equals_distinct_vectors():
    vectors = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0.5, 0.5, 0]])
    proportions = vectors[np.array([0, 1, 2, 3, 0, 1, 2, 3])].reshape(2, 4, 3)
    assert kmeans(proportions, 4, seed=1).objective == 0
    raises(InputError, kmeans, proportions, 5)


def test_blobs_match_exhaustive_partition():
    rng = np.random.default_rng(0)
    a = rng.dirichlet([30, 1, 1], size=15)
    b = rng.dirichlet([1, 1, 30], size=15)
    X = np.vstack([a, b])
    result = kmeans(X.reshape(5, 6, 3), 2, seed=2)
    flat = result.assignments.ravel()
    assert len(set(flat[:15])) == 1 and len(set(flat[15:])) == 1 and flat[0] != flat[15]

    def objective(mask):
        return sum(((X[m] - X[m].mean(axis=0)) ** 2).sum() for m in (mask, ~mask))
    blob = np.arange(30) < 15
    assert np.isclose(result.objective, min(objective(blob), objective(~blob)))


def test_centroids_are_member_means():
    rng = np.random.default_rng(3)
    X = rng.dirichlet(np.ones(4), size=60)
    result = kmeans(X.reshape(6, 10, 4), 5, seed=3)
    flat = result.assignments.ravel()
    for k in range(5):
        members = X[flat == k]
        if len(members):
            assert np.allclose(result.centroids[k], members.mean(axis=0))
            assert np.isclose(result.centroids[k].sum(), 1.0)


def test_objective_non_increasing():
    rng = np.random.default_rng(11)
    for trial in range(50):
        n, m, k = int(rng.integers(10, 80)), int(rng.integers(2, 6)), int(rng.integers(2, 6))
        X = rng.dirichlet(np.ones(m), size=n)
        start = X[rng.choice(n, size=k, replace=False)]
        history = _lloyd(X, start, 300).history
        assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(history, history[1:])), (trial, history)
        result = kmeans(X, k, seed=trial, restarts=3)
        assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(result.history, result.history[1:]))
        assert np.isfinite(result.objective) and result.objective >= 0


def test_empty_cluster_reseeded():
    X = np.array([[0.0, 1.0]] * 4 + [[1.0, 0.0]] * 4)
    start = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    result = _lloyd(X, start, 10)
    assert np.isfinite(result.centroids).all()
    assert result.objective == 0


def test_connected_components_examples():
    assert np.all(connected_components(np.zeros(6, dtype=int), 2, 3) == 0)
    checker = connected_components(np.array([0, 1, 1, 0]), 2, 2)
    assert int(checker.max()) + 1 == 4
    l_shape = np.array([
        [0, 0, 0, 1],
        [0, 1, 1, 1],
        [0, 1, 0, 0],
        [0, 1, 0, 0],
    ])
    assert np.array_equal(connected_components(l_shape, 4, 4), _flood_fill(l_shape))
    raises(InputError, connected_components, np.zeros(5, dtype=int), 2, 3)


def test_components_match_flood_fill():
    rng = np.random.default_rng(21)
    for _ in range(100):
        h, w = int(rng.integers(1, 12)), int(rng.integers(1, 12))
        grid = rng.integers(0, int(rng.integers(1, 4)), size=(h, w))
        assert np.array_equal(connected_components(grid.ravel(), h, w), _flood_fill(grid))


def test_cleanup_identity_when_nothing_small():
    labels = np.array([[0, 0, 1, 1], [0, 0, 1, 1]])
    assert np.array_equal(cleanup(labels, 4), labels)


def test_cleanup_merges_into_largest_neighbour():
    labels = np.zeros((6, 5), dtype=int)
    labels[:, 3:] = 1
    labels[0, 2] = 2
    labels[:2, :2] = 0
    labels[2:, :3] = 3
    labels = compact_labels(labels)
    sizes = np.bincount(labels.ravel())
    single = int(np.flatnonzero(sizes == 1)[0])
    r, c = np.argwhere(labels == single)[0]
    neighbor_labels = {int(labels[rr, cc]) for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))
                       if 0 <= rr < 6 and 0 <= cc < 5} - {single}
    biggest = max(neighbor_labels, key=lambda n: (sizes[n], -n))
    cleaned = cleanup(labels, 5)
    assert cleaned[r, c] == cleaned[np.argwhere(labels == biggest)[0][0], np.argwhere(labels == biggest)[0][1]]


def test_cleanup_explicit_sizes():
    # a 1-pixel segment between neighbours of 10 and 20 pixels
    labels = np.array([[0] * 10 + [1] + [2] * 20])
    cleaned = cleanup(labels, 5)
    assert cleaned[0, 10] == cleaned[0, 11] != cleaned[0, 9]


def test_cleanup_matches_reference_rule():
    rng = np.random.default_rng(8)
    for _ in range(100):
        h, w = int(rng.integers(3, 12)), int(rng.integers(3, 12))
        grid = rng.integers(0, 4, size=(h, w))
        labels = connected_components(grid.ravel(), h, w)
        threshold = int(rng.integers(2, 8))
        cleaned = cleanup(labels, threshold)
        sizes = np.bincount(cleaned.ravel())
        assert sizes.min() >= threshold or len(sizes) == 1
        assert np.array_equal(cleaned, _reference_cleanup(labels, threshold))
        # whole-segment merging only
        for l in np.unique(labels):
            assert len(np.unique(cleaned[labels == l])) == 1


def test_cleanup_requires_compact_labels():
    raises(InputError, cleanup, np.array([[0, 2]]), 2)


def test_segment_proportions():
    proportions = np.zeros((6, 6, 2))
    proportions[:, :3, 0] = 1.0
    proportions[:, 3:, 1] = 1.0
    proportions[0, 0] = [0.0, 1.0]
    before, after, result = segment_proportions(proportions, 2, min_segment=3, seed=0, restarts=2)
    assert int(before.max()) + 1 == 3
    assert int(after.max()) + 1 == 2
    assert result.objective == 0


if __name__ == '__main__':
    run_tests(globals(), 'finalseg')
