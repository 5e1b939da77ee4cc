"""
Hyperspectral SLIC: local k-means over the full spectrum plus pixel
coordinates, with a windowed 2S x 2S search and no dimensionality reduction.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from errors import InputError
from hsio import HsiCube
from labels import absorb_fragments, compact_labels, label_components

logger = logging.getLogger(__name__)


@dataclass
class ClusterCenter:
    spectrum: np.ndarray
    a: float
    b: float
    member_count: int = 0


@dataclass(frozen=True)
class HslicParams:
    K: int
    m: float = 20.0
    n: int = 3
    max_iters: int = 10
    residual_tol: float = 1.0
    enforce_connectivity: bool = True
    normalize_spectral: bool = False
    connectivity: int = 4

    def __post_init__(self):
        if self.K < 1:
            raise InputError(f'K must be >= 1, got {self.K}')
        if self.m < 0:
            raise InputError(f'm must be >= 0, got {self.m}')
        if self.n < 1 or self.n % 2 == 0:
            raise InputError(f'perturbation window n must be odd and >= 1, got {self.n}')
        if self.max_iters < 1:
            raise InputError(f'max_iters must be >= 1, got {self.max_iters}')

    def S(self, height: int, width: int) -> int:
        return grid_interval(height, width, self.K)


def grid_interval(height: int, width: int, K: int) -> int:
    """S = round(sqrt(H*W / K)), at least 1"""
    return max(1, int(np.floor(np.sqrt(height * width / K) + 0.5)))


def _cell_centers(extent: int, S: int) -> List[int]:
    return [(start + min(start + S, extent)) // 2 for start in range(0, extent, S)]


def init_centers(cube: HsiCube, params: HslicParams) -> List[ClusterCenter]:
    """One center at the middle of every S x S grid cell"""
    if params.K > cube.height * cube.width:
        raise InputError(f'K={params.K} exceeds the pixel count {cube.height * cube.width}')
    S = params.S(cube.height, cube.width)
    return [ClusterCenter(cube.data[r, c].copy(), float(r), float(c))
            for r in _cell_centers(cube.height, S)
            for c in _cell_centers(cube.width, S)]


def gradient_magnitude(data: np.ndarray) -> np.ndarray:
    """Central-difference gradient summed over bands; border pixels are +inf"""
    height, width = data.shape[:2]
    G = np.full((height, width), np.inf)
    if height >= 3 and width >= 3:
        dx = data[1:-1, 2:, :] - data[1:-1, :-2, :]
        dy = data[2:, 1:-1, :] - data[:-2, 1:-1, :]
        G[1:-1, 1:-1] = (dx ** 2).sum(axis=2) + (dy ** 2).sum(axis=2)
    return G


def perturb_centers(cube: HsiCube, centers: Sequence[ClusterCenter], n: int) -> List[ClusterCenter]:
    """Move each center to the lowest-gradient pixel of its n x n neighbourhood"""
    if n < 1 or n % 2 == 0:
        raise InputError(f'perturbation window n must be odd and >= 1, got {n}')
    G = gradient_magnitude(cube.data)
    half = n // 2
    moved = []
    for center in centers:
        r, c = int(round(center.a)), int(round(center.b))
        r0, r1 = max(0, r - half), min(cube.height, r + half + 1)
        c0, c1 = max(0, c - half), min(cube.width, c + half + 1)
        window = G[r0:r1, c0:c1]
        best = window.min()
        if not np.isfinite(best) or G[r, c] == best:
            moved.append(ClusterCenter(center.spectrum.copy(), center.a, center.b, center.member_count))
            continue
        dr, dc = np.unravel_index(np.argmin(window), window.shape)
        r, c = r0 + int(dr), c0 + int(dc)
        moved.append(ClusterCenter(cube.data[r, c].copy(), float(r), float(c), center.member_count))
    return moved


def spectral_distance(x: np.ndarray, c: np.ndarray) -> float:
    x, c = np.asarray(x, dtype=np.float64), np.asarray(c, dtype=np.float64)
    if x.shape != c.shape:
        raise InputError(f'spectra differ in length: {x.shape} vs {c.shape}')
    return float(np.sum((x - c) ** 2))


def spatial_distance(p: Tuple[float, float], q: Tuple[float, float]) -> float:
    return float(np.hypot(p[0] - q[0], p[1] - q[1]))


def combined_distance(d_spec: float, d_spat: float, m: float, S: float) -> float:
    if S <= 0:
        raise InputError(f'grid interval S must be positive, got {S}')
    return d_spec + (m / S) * d_spat


class HyperspectralSLIC:
    """Windowed SLIC iteration on a hyperspectral cube"""

    def __init__(self, params: HslicParams):
        self.params = params
        self.objective_history: List[float] = []
        self.iterations = 0
        self.converged = False

    def _assign(self, data: np.ndarray, spectra: np.ndarray, positions: np.ndarray,
                S: int) -> Tuple[np.ndarray, np.ndarray]:
        height, width, bands = data.shape
        ratio = self.params.m / S
        scale = 1.0 / bands if self.params.normalize_spectral else 1.0
        dist = np.full((height, width), np.inf)
        labels = np.full((height, width), -1, dtype=np.int64)

        # strict improvement keeps the lowest center index on ties
        for k in range(len(spectra)):
            a, b = positions[k]
            r0, r1 = max(0, int(np.floor(a)) - S), min(height, int(np.floor(a)) + S + 1)
            c0, c1 = max(0, int(np.floor(b)) - S), min(width, int(np.floor(b)) + S + 1)
            if r0 >= r1 or c0 >= c1:
                continue
            d_spec = ((data[r0:r1, c0:c1] - spectra[k]) ** 2).sum(axis=2) * scale
            rows, cols = np.ogrid[r0:r1, c0:c1]
            d = d_spec + ratio * np.sqrt((rows - a) ** 2 + (cols - b) ** 2)
            window = dist[r0:r1, c0:c1]
            better = d < window
            window[better] = d[better]
            labels[r0:r1, c0:c1][better] = k

        uncovered = labels < 0
        if uncovered.any():
            rows, cols = np.nonzero(uncovered)
            d = (cdist(data[uncovered], spectra, 'sqeuclidean') * scale
                 + ratio * cdist(np.column_stack([rows, cols]).astype(np.float64), positions))
            nearest = np.argmin(d, axis=1)
            labels[uncovered] = nearest
            dist[uncovered] = d[np.arange(len(nearest)), nearest]
            logger.debug('%d pixels outside every search window', len(nearest))
        return labels, dist

    @staticmethod
    def _means(data: np.ndarray, labels: np.ndarray, K: int):
        height, width, bands = data.shape
        flat = labels.ravel()
        onehot = sparse.csr_matrix((np.ones(flat.size), (flat, np.arange(flat.size))),
                                   shape=(K, flat.size))
        counts = np.asarray(onehot.sum(axis=1)).ravel()
        rows, cols = np.indices((height, width))
        spectra = onehot @ data.reshape(-1, bands)
        coords = onehot @ np.column_stack([rows.ravel(), cols.ravel()]).astype(np.float64)
        filled = counts > 0
        spectra[filled] /= counts[filled, None]
        coords[filled] /= counts[filled, None]
        return spectra, coords, counts.astype(np.int64)

    def fit(self, cube: HsiCube, centers: Sequence[ClusterCenter] = None
            ) -> Tuple[np.ndarray, List[ClusterCenter]]:
        params = self.params
        S = params.S(cube.height, cube.width)
        if centers is None:
            centers = perturb_centers(cube, init_centers(cube, params), params.n)
        spectra = np.array([c.spectrum for c in centers], dtype=np.float64)
        positions = np.array([[c.a, c.b] for c in centers], dtype=np.float64)
        logger.info('HSLIC: %d centers, S=%d, m=%g', len(centers), S, params.m)

        self.objective_history = []
        self.converged = False
        labels = None
        for iteration in range(params.max_iters):
            labels, dist = self._assign(cube.data, spectra, positions, S)
            self.objective_history.append(float(dist.sum()))
            new_spectra, new_positions, counts = self._means(cube.data, labels, len(spectra))
            filled = counts > 0
            displacement = float(np.sqrt(((new_positions[filled] - positions[filled]) ** 2).sum(axis=1)).sum())
            spectra[filled] = new_spectra[filled]
            positions[filled] = new_positions[filled]
            self.iterations = iteration + 1
            logger.debug('HSLIC iteration %d: objective %.6g, displacement %.4f',
                         self.iterations, self.objective_history[-1], displacement)
            if displacement < params.residual_tol:
                self.converged = True
                break

        if params.enforce_connectivity:
            labels = enforce_connectivity(labels, params.connectivity)
        else:
            labels = compact_labels(labels)

        spectra, coords, counts = self._means(cube.data, labels, int(labels.max()) + 1)
        final = [ClusterCenter(spectra[k], float(coords[k, 0]), float(coords[k, 1]), int(counts[k]))
                 for k in range(len(counts))]
        logger.info('HSLIC: %d superpixels after %d iterations', len(final), self.iterations)
        return labels, final


def enforce_connectivity(labels: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Keep each label's largest component; fold every other fragment into its largest neighbour"""
    components = label_components(labels, connectivity)
    n_components = int(components.max()) + 1
    owner = np.zeros(n_components, dtype=np.int64)
    owner[components.ravel()] = labels.ravel()
    sizes = np.bincount(components.ravel(), minlength=n_components)

    order = np.lexsort((np.arange(n_components), -sizes, owner))
    keep = np.zeros(n_components, dtype=bool)
    first = np.ones(n_components, dtype=bool)
    first[1:] = owner[order][1:] != owner[order][:-1]
    keep[order[first]] = True
    return absorb_fragments(components, keep, connectivity)


def run_hslic(cube: HsiCube, params: HslicParams, seed: int = 0
              ) -> Tuple[np.ndarray, List[ClusterCenter]]:
    """
    HSLIC segmentation. Centers start on a fixed grid and the iteration is
    deterministic, so every seed gives the same labels.
    """
    return HyperspectralSLIC(params).fit(cube)
