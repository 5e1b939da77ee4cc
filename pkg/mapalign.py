"""
Map alignment: fit the map -> image affine transform from control points,
rasterize polygons onto the pixel grid and merge superpixels that share a
polygon.

Pixel (row r, col c) has its center at image coordinates x = c, y = r.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from shapely.affinity import affine_transform

from errors import DegenerateError, InputError
from hsio import ControlPoints, PolygonSet
from labels import compact_labels, validate_label_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AffineTransform:
    """2 x 3 matrix taking (map x, map y, 1) to (pixel col, pixel row)"""
    matrix: np.ndarray
    rms_residual: float = 0.0

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.shape != (2, 3) or not np.isfinite(matrix).all():
            raise InputError('affine matrix must be a finite 2 x 3 array')
        if abs(np.linalg.det(matrix[:, :2])) <= 1e-12:
            raise DegenerateError('affine transform is singular')
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def identity(cls) -> 'AffineTransform':
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def apply(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return xy @ self.matrix[:, :2].T + self.matrix[:, 2]

    @property
    def shapely_params(self):
        (a, b, xoff), (d, e, yoff) = self.matrix
        return [a, b, d, e, xoff, yoff]


@dataclass
class PolygonMask:
    ids: np.ndarray
    tags: Dict[int, str] = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    def present_ids(self):
        return [int(i) for i in np.unique(self.ids) if i >= 0]


def fit_affine(points: ControlPoints) -> AffineTransform:
    """Least-squares affine fit of pixel (col, row) on map (x, y)"""
    if len(points) < 3:
        raise InputError(f'affine fitting needs >= 3 control point pairs, got {len(points)}')
    design = np.column_stack([points.map_xy, np.ones(len(points))])
    coef, _, rank, _ = np.linalg.lstsq(design, points.pixel_cr, rcond=None)
    if rank < 3:
        raise DegenerateError('control points are collinear; the affine fit is singular')
    residual = design @ coef - points.pixel_cr
    rms = float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))
    transform = AffineTransform(coef.T, rms)
    logger.info('affine fit on %d pairs, RMS residual %.4g px', len(points), rms)
    return transform


def even_odd_inside(x: np.ndarray, y: np.ndarray, rings) -> np.ndarray:
    """Crossing-number test over all rings together"""
    inside = np.zeros(x.shape, dtype=bool)
    for ring in rings:
        x1, y1 = ring[:, 0], ring[:, 1]
        x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
        for xa, ya, xb, yb in zip(x1, y1, x2, y2):
            if ya == yb:
                continue
            straddles = (ya > y) != (yb > y)
            x_cross = xa + (y - ya) * (xb - xa) / (yb - ya)
            inside ^= straddles & (x < x_cross)
    return inside


def rasterize(polygons: PolygonSet, transform: AffineTransform, height: int, width: int) -> PolygonMask:
    ids = np.full((height, width), -1, dtype=np.int64)
    tags = {}
    for polygon in sorted(polygons, key=lambda p: p.polygon_id):
        pixel_geometry = affine_transform(polygon.geometry, transform.shapely_params)
        min_x, min_y, max_x, max_y = pixel_geometry.bounds
        c0, c1 = max(0, int(np.ceil(min_x))), min(width - 1, int(np.floor(max_x)))
        r0, r1 = max(0, int(np.ceil(min_y))), min(height - 1, int(np.floor(max_y)))
        if c0 > c1 or r0 > r1:
            continue
        rings = [transform.apply(ring) for ring in polygon.rings]
        rows, cols = np.mgrid[r0:r1 + 1, c0:c1 + 1]
        inside = even_odd_inside(cols.astype(np.float64), rows.astype(np.float64), rings)
        window = ids[r0:r1 + 1, c0:c1 + 1]
        claim = inside & (window < 0)
        window[claim] = polygon.polygon_id
        if inside.any():
            tags[polygon.polygon_id] = polygon.tag
    logger.info('rasterized %d of %d polygons onto %d x %d grid', len(tags), len(polygons), height, width)
    return PolygonMask(ids, tags)


def merge_by_polygon(labels: np.ndarray, mask: PolygonMask,
                     min_overlap: Optional[float] = None) -> Tuple[np.ndarray, Dict[int, str]]:
    """
    Union-merge every superpixel overlapping a common polygon. Overlap is
    |superpixel & polygon| / |superpixel|; None means any shared pixel.
    Returns the compacted labels and a merged label -> class tag map.
    """
    labels = validate_label_map(labels)
    if labels.shape != mask.ids.shape:
        raise InputError(f'label map {labels.shape} and polygon mask {mask.ids.shape} differ in shape')
    labels = compact_labels(labels)
    n_labels = int(labels.max()) + 1
    sizes = np.bincount(labels.ravel(), minlength=n_labels)

    polygon_ids = mask.present_ids()
    covered = mask.ids >= 0
    if not covered.any():
        return labels, {}
    pairs, shared = np.unique(np.column_stack([labels[covered], mask.ids[covered]]),
                              axis=0, return_counts=True)
    edges = []
    for (superpixel, polygon_id), count in zip(pairs, shared):
        overlap = count / sizes[superpixel]
        if min_overlap is None or overlap >= min_overlap:
            edges.append((int(superpixel), n_labels + polygon_ids.index(int(polygon_id))))

    if not edges:
        return labels, {}

    n_nodes = n_labels + len(polygon_ids)
    edges = np.array(edges)
    graph = sparse.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n_nodes, n_nodes))
    _, group = connected_components(graph, directed=False)
    merged = compact_labels(group[:n_labels][labels])

    new_of_old = np.zeros(n_labels, dtype=np.int64)
    new_of_old[labels.ravel()] = merged.ravel()
    tag_map = {}
    # lowest polygon id wins when differently tagged polygons chain together
    for superpixel, node in sorted(edges.tolist(), key=lambda e: e[1]):
        tag_map.setdefault(int(new_of_old[superpixel]), mask.tags[polygon_ids[node - n_labels]])
    logger.info('polygon merge: %d -> %d superpixels, %d tagged',
                n_labels, int(merged.max()) + 1, len(tag_map))
    return merged, tag_map
