"""
Synthetic scenes with known structure, used by the tests and the demo command
"""

import os
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from hsio import ControlPoints, HsiCube, write_control_points, write_cube, write_polygons
from labels import compact_labels


def quadrant_spectra(bands: int = 4) -> np.ndarray:
    ramp = np.linspace(0.0, 1.0, bands)
    return np.stack([np.full(bands, 1.0 + q) + 0.25 * q * ramp for q in range(4)])


def quadrant_truth(size: int) -> np.ndarray:
    half = size // 2
    truth = np.zeros((size, size), dtype=np.int64)
    truth[:half, half:] = 1
    truth[half:, :half] = 2
    truth[half:, half:] = 3
    return truth


def quadrant_cube(size: int = 60, values: Optional[Sequence[Sequence[float]]] = None, bands: int = 4,
                  noise: float = 0.0, seed: int = 0) -> HsiCube:
    """Four constant quadrants (top-left, top-right, bottom-left, bottom-right)"""
    spectra = quadrant_spectra(bands) if values is None else np.asarray(values, dtype=np.float64)
    data = spectra[quadrant_truth(size)]
    if noise > 0:
        data = data + np.random.default_rng(seed).normal(0.0, noise, data.shape)
    return HsiCube(data)


def two_region_cube(height: int, width: int, spectra: Sequence[Sequence[float]]) -> HsiCube:
    """Left half holds spectra[0], right half spectra[1]"""
    spectra = np.asarray(spectra, dtype=np.float64)
    data = np.empty((height, width, spectra.shape[1]))
    data[:, :width // 2] = spectra[0]
    data[:, width // 2:] = spectra[1]
    return HsiCube(data)


def two_region_truth(height: int, width: int) -> np.ndarray:
    """One-hot proportions matching two_region_cube"""
    truth = np.zeros((height, width, 2))
    truth[:, :width // 2, 0] = 1.0
    truth[:, width // 2:, 1] = 1.0
    return truth


def two_region_superpixels(height: int, width: int, block: int = 4) -> np.ndarray:
    """Square blocks that never straddle the region boundary"""
    rows, cols = np.indices((height, width))
    half = width // 2
    side = (cols >= half).astype(np.int64)
    local = np.where(side == 1, cols - half, cols)
    key = (side * (height // block + 1) + rows // block) * (width // block + 2) + local // block
    return compact_labels(key)


def planted_scene(height: int = 40, width: int = 40, bands: int = 6, n_regions: int = 5,
                  noise: float = 0.02, seed: int = 0) -> Tuple[HsiCube, np.ndarray]:
    """Random rectangles of distinct spectra painted over a background; returns (cube, truth labels)"""
    rng = np.random.default_rng(seed)
    truth = np.zeros((height, width), dtype=np.int64)
    for region in range(1, n_regions):
        h = int(rng.integers(height // 4, height // 2 + 1))
        w = int(rng.integers(width // 4, width // 2 + 1))
        r = int(rng.integers(0, height - h + 1))
        c = int(rng.integers(0, width - w + 1))
        truth[r:r + h, c:c + w] = region
    truth = compact_labels(truth)
    n = int(truth.max()) + 1
    spectra = rng.uniform(0.0, 1.0, (n, bands)) + np.arange(n)[:, None]
    data = spectra[truth] + rng.normal(0.0, noise, (height, width, bands))
    return HsiCube(data), truth


def building_polygon(size: int) -> list:
    """A rectangle straddling the boundary between the two top quadrants"""
    half = size // 2
    r0, r1 = half // 2, half - 3
    c0, c1 = half - half // 4, half + half // 4 - 1
    return [[(c0 - 0.5, r0 - 0.5), (c1 + 0.5, r0 - 0.5), (c1 + 0.5, r1 + 0.5), (c0 - 0.5, r1 + 0.5)]]


def identity_points(height: int, width: int) -> ControlPoints:
    corners = np.array([[0, 0], [width - 1, 0], [0, height - 1], [width - 1, height - 1]], dtype=np.float64)
    return ControlPoints(corners, corners)


def write_demo_inputs(out_dir: str, seed: int = 0, size: int = 40, noise: float = 0.05) -> Dict[str, str]:
    """Noisy four-quadrant cube, one 'building' polygon and identity control points"""
    os.makedirs(out_dir, exist_ok=True)
    cube = quadrant_cube(size, bands=4, noise=noise, seed=seed)
    header = os.path.join(out_dir, 'demo_cube.hdr')
    paths = {'cube': header, 'cube_data': write_cube(cube, header)}
    paths['polygons'] = write_polygons([{'rings': building_polygon(size), 'class': 'building', 'id': 1}],
                                       os.path.join(out_dir, 'demo_polygons.geojson'))
    paths['control_points'] = write_control_points(identity_points(size, size),
                                                   os.path.join(out_dir, 'demo_points.csv'))
    return paths
