"""
Label map utilities shared by the superpixel stages.

A label map is a 2-D integer array with one non-negative label per pixel.
Compacted maps use exactly the labels 0..K'-1, numbered in the order they
are first met in a row-major scan.
"""

import heapq
import logging
from typing import Dict, Set

import numpy as np
from scipy import ndimage

from errors import InputError

logger = logging.getLogger(__name__)


def validate_label_map(labels: np.ndarray, name: str = 'labels') -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.size == 0:
        raise InputError(f'{name} must be a non-empty 2-D array, got shape {labels.shape}')
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError(f'{name} must hold integers, got {labels.dtype}')
    if labels.min() < 0:
        raise InputError(f'{name} contains negative labels')
    return labels.astype(np.int64, copy=False)


def compact_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber labels to 0..K'-1 in first-encounter row-major order"""
    labels = np.asarray(labels)
    _, first_index, inverse = np.unique(labels.ravel(), return_index=True, return_inverse=True)
    rank = np.empty(len(first_index), dtype=np.int64)
    rank[np.argsort(first_index, kind='stable')] = np.arange(len(first_index))
    return rank[inverse.ravel()].reshape(labels.shape)


def is_compact(labels: np.ndarray) -> bool:
    present = np.unique(labels)
    return bool(present[0] == 0 and present[-1] == len(present) - 1)


def connectivity_structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    if connectivity == 8:
        return ndimage.generate_binary_structure(2, 2)
    raise InputError(f'connectivity must be 4 or 8, got {connectivity}')


def label_components(labels: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Split every label into its connected components; output is compacted"""
    structure = connectivity_structure(connectivity)
    out = np.zeros(labels.shape, dtype=np.int64)
    offset = 0
    for value in np.unique(labels):
        mask = labels == value
        components, count = ndimage.label(mask, structure=structure)
        out[mask] = components[mask] + offset - 1
        offset += count
    return compact_labels(out)


def adjacent_pairs(labels: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Unique unordered (a, b) pairs, a < b, of labels that touch"""
    shifts = [(labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])]
    if connectivity == 8:
        shifts.append((labels[:-1, :-1], labels[1:, 1:]))
        shifts.append((labels[:-1, 1:], labels[1:, :-1]))
    elif connectivity != 4:
        raise InputError(f'connectivity must be 4 or 8, got {connectivity}')

    pairs = [np.stack([a.ravel(), b.ravel()], axis=1) for a, b in shifts]
    pairs = np.concatenate(pairs, axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)


class SegmentGraph:
    """Region adjacency graph over a compacted label map supporting whole-segment merges"""

    def __init__(self, labels: np.ndarray, connectivity: int = 4):
        self.labels = labels
        self.sizes = np.bincount(labels.ravel()).astype(np.int64)
        self.parent = np.arange(len(self.sizes))
        self.adjacency: Dict[int, Set[int]] = {int(l): set() for l in range(len(self.sizes))}
        for a, b in adjacent_pairs(labels, connectivity):
            self.adjacency[int(a)].add(int(b))
            self.adjacency[int(b)].add(int(a))

    @property
    def alive(self) -> int:
        return len(self.adjacency)

    def size(self, label: int) -> int:
        return int(self.sizes[label])

    def largest_neighbor(self, label: int) -> int:
        """Largest adjacent segment by pixel count; ties go to the lowest label. -1 if isolated"""
        neighbors = self.adjacency[label]
        if not neighbors:
            return -1
        return max(neighbors, key=lambda n: (self.sizes[n], -n))

    def merge(self, src: int, dst: int) -> None:
        self.sizes[dst] += self.sizes[src]
        self.sizes[src] = 0
        for n in self.adjacency.pop(src):
            self.adjacency[n].discard(src)
            if n != dst:
                self.adjacency[n].add(dst)
                self.adjacency[dst].add(n)
        self.parent[src] = dst

    def find(self, label: int) -> int:
        root = label
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[label] != root:
            self.parent[label], label = root, self.parent[label]
        return root

    def relabel(self) -> np.ndarray:
        roots = np.array([self.find(l) for l in range(len(self.parent))], dtype=np.int64)
        return compact_labels(roots[self.labels])


def merge_small_segments(labels: np.ndarray, min_size: int, connectivity: int = 4) -> np.ndarray:
    """
    Repeatedly merge the smallest segment under min_size into its largest
    neighbour (ties: lowest label) until none is under threshold or one remains.
    """
    labels = compact_labels(labels)
    graph = SegmentGraph(labels, connectivity)
    heap = [(graph.size(l), l) for l in graph.adjacency if graph.size(l) < min_size]
    heapq.heapify(heap)

    while heap and graph.alive > 1:
        size, label = heapq.heappop(heap)
        if label not in graph.adjacency or graph.size(label) != size:
            continue
        target = graph.largest_neighbor(label)
        if target < 0:
            continue
        graph.merge(label, target)
        if graph.size(target) < min_size:
            heapq.heappush(heap, (graph.size(target), target))

    return graph.relabel()


def absorb_fragments(components: np.ndarray, keep: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """
    Absorb every component not flagged in `keep`, smallest first, into its
    largest adjacent segment. Components must be compacted.
    """
    graph = SegmentGraph(components, connectivity)
    pending = {int(l) for l in np.flatnonzero(~keep)}
    heap = [(graph.size(l), l) for l in sorted(pending)]
    heapq.heapify(heap)

    while heap:
        size, label = heapq.heappop(heap)
        if label not in pending or graph.size(label) != size:
            continue
        pending.discard(label)
        target = graph.largest_neighbor(label)
        if target < 0:
            continue
        graph.merge(label, target)
        if target in pending:
            heapq.heappush(heap, (graph.size(target), target))

    logger.debug('absorbed %d fragments', int((~keep).sum()))
    return graph.relabel()
