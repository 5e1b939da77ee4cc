"""
PNG renderings of label maps, proportion maps and superpixel boundaries
"""

import os
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from skimage.segmentation import mark_boundaries


def label_colors(n: int, seed: int = 0) -> np.ndarray:
    """Deterministic seed-derived RGB palette, one row per label"""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(n, 3), dtype=np.uint8)


def render_label_map(labels: np.ndarray, path: str, seed: int = 0) -> str:
    colors = label_colors(int(labels.max()) + 1, seed)
    Image.fromarray(colors[labels]).save(path, format='PNG')
    return path


def render_proportions(proportions: np.ndarray, out_dir: str,
                       tags: Optional[Sequence[Optional[str]]] = None) -> list:
    """One grayscale PNG per endmember: proportion 0 is black, 1 is white"""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for k in range(proportions.shape[2]):
        suffix = f'_{tags[k]}' if tags and tags[k] else ''
        path = os.path.join(out_dir, f'proportion_{k}{suffix}.png')
        gray = np.clip(np.round(proportions[:, :, k] * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(gray).save(path, format='PNG')
        paths.append(path)
    return paths


def false_color(data: np.ndarray, bands: Optional[Tuple[int, int, int]] = None) -> np.ndarray:
    """Three-band composite stretched between the 2nd and 98th percentiles, in [0, 1]"""
    n_bands = data.shape[2]
    if bands is None:
        bands = (n_bands - 1, n_bands // 2, 0) if n_bands >= 3 else (0, 0, 0)
    rgb = np.stack([data[:, :, b] for b in bands], axis=2).astype(np.float64)
    for c in range(3):
        low, high = np.percentile(rgb[:, :, c], [2, 98])
        span = high - low if high > low else 1.0
        rgb[:, :, c] = np.clip((rgb[:, :, c] - low) / span, 0.0, 1.0)
    return rgb


def render_boundaries(data: np.ndarray, labels: np.ndarray, path: str,
                      bands: Optional[Tuple[int, int, int]] = None) -> str:
    overlay = mark_boundaries(false_color(data, bands), labels, color=(1, 1, 0))
    Image.fromarray(np.round(overlay * 255).astype(np.uint8)).save(path, format='PNG')
    return path
