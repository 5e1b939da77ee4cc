"""
Stage 3: k-means on proportion vectors, connected-component relabelling and
small-segment clean-up.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import kmeans_plusplus

from errors import InputError
from labels import is_compact, label_components, merge_small_segments, validate_label_map

logger = logging.getLogger(__name__)


@dataclass
class KmeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    objective: float
    history: List[float] = field(default_factory=list)
    iterations: int = 0


def _as_vectors(proportions: np.ndarray) -> Tuple[np.ndarray, tuple]:
    proportions = np.asarray(proportions, dtype=np.float64)
    if proportions.ndim == 3:
        return proportions.reshape(-1, proportions.shape[2]), proportions.shape[:2]
    if proportions.ndim == 2:
        return proportions, (proportions.shape[0],)
    raise InputError(f'proportions must be H x W x M or N x M, got shape {proportions.shape}')


def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int) -> KmeansResult:
    K = len(centroids)
    centroids = centroids.copy()
    assignments = None
    history = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d = cdist(X, centroids, 'sqeuclidean')
        nearest = np.argmin(d, axis=1)
        closest = d[np.arange(len(X)), nearest]
        history.append(float(closest.sum()))
        if assignments is not None and np.array_equal(nearest, assignments):
            break
        assignments = nearest

        counts = np.bincount(assignments, minlength=K)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assignments, X)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if len(empty):
            # re-seed empty clusters from the points farthest from their centroid
            farthest = np.argsort(-closest, kind='stable')[:len(empty)]
            centroids[empty] = X[farthest]
            logger.debug('re-seeded %d empty clusters', len(empty))

    # centroids consistent with the final assignment
    counts = np.bincount(assignments, minlength=K)
    sums = np.zeros_like(centroids)
    np.add.at(sums, assignments, X)
    filled = counts > 0
    centroids[filled] = sums[filled] / counts[filled, None]
    objective = float(((X - centroids[assignments]) ** 2).sum())
    return KmeansResult(assignments, centroids, objective, history, iterations)


def kmeans(proportions: np.ndarray, K_final: int, seed: int = 0, restarts: int = 10,
           max_iter: int = 300) -> KmeansResult:
    """Best of `restarts` Lloyd runs from k-means++ seeds, ranked by objective (ties: earliest)"""
    X, shape = _as_vectors(proportions)
    if K_final < 1 or restarts < 1:
        raise InputError(f'K_final and restarts must be >= 1, got {K_final}, {restarts}')
    n_distinct = len(np.unique(X, axis=0))
    if K_final > n_distinct:
        raise InputError(f'K_final={K_final} exceeds the number of distinct proportion vectors ({n_distinct})')

    rng = np.random.default_rng(seed)
    best = None
    for restart in range(restarts):
        seeds, _ = kmeans_plusplus(X, n_clusters=K_final, random_state=int(rng.integers(2 ** 31 - 1)))
        result = _lloyd(X, seeds, max_iter)
        logger.debug('k-means restart %d: objective %.6g after %d iterations',
                     restart, result.objective, result.iterations)
        if best is None or result.objective < best.objective:
            best = result

    best.assignments = best.assignments.reshape(shape)
    logger.info('k-means: K_final=%d, best objective %.6g', K_final, best.objective)
    return best


def connected_components(assignments: np.ndarray, height: int, width: int,
                         connectivity: int = 4) -> np.ndarray:
    assignments = np.asarray(assignments)
    if assignments.size != height * width:
        raise InputError(f'{assignments.size} assignments for a {height} x {width} image')
    return label_components(assignments.reshape(height, width), connectivity)


def cleanup(labels: np.ndarray, min_segment: int, connectivity: int = 4) -> np.ndarray:
    labels = validate_label_map(labels)
    if not is_compact(labels):
        raise InputError('cleanup expects a compacted label map')
    if min_segment <= 1:
        return labels
    cleaned = merge_small_segments(labels, min_segment, connectivity)
    logger.info('clean-up: %d -> %d segments (threshold %d px)',
                int(labels.max()) + 1, int(cleaned.max()) + 1, min_segment)
    return cleaned


def segment_proportions(proportions: np.ndarray, K_final: int, min_segment: int, seed: int = 0,
                        restarts: int = 10, connectivity: int = 4
                        ) -> Tuple[np.ndarray, np.ndarray, KmeansResult]:
    """Full Stage 3. Returns (labels before clean-up, final labels, k-means result)"""
    height, width = proportions.shape[:2]
    result = kmeans(proportions, K_final, seed, restarts)
    components = connected_components(result.assignments, height, width, connectivity)
    return components, cleanup(components, min_segment, connectivity), result
