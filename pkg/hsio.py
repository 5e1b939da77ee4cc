"""
Ingest hyperspectral cubes, map polygons, control points and configuration;
serialize every pipeline output.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd
from shapely.geometry import shape
from shapely.geometry.base import BaseGeometry
from spectral.io import envi

from errors import InputError
from labels import validate_label_map
from render import render_label_map

logger = logging.getLogger(__name__)

REQUIRED_HEADER_KEYS = ('samples', 'lines', 'bands', 'interleave', 'data type')
CONTROL_POINT_COLUMNS = ['map_x', 'map_y', 'pixel_col', 'pixel_row']


@dataclass(frozen=True)
class HsiCube:
    """H x W x B cube in canonical (row, col, band) addressing; values are read-only and finite"""
    data: np.ndarray
    wavelengths: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, np.newaxis]
        if data.ndim != 3 or min(data.shape) < 1:
            raise InputError(f'cube must be H x W x B with every extent >= 1, got shape {data.shape}')
        bad = np.argwhere(~np.isfinite(data))
        if len(bad):
            raise InputError(f'non-finite value at (row, col, band) = {tuple(int(i) for i in bad[0])}')
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)
        if self.wavelengths is not None:
            wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
            if wavelengths.shape != (data.shape[2],):
                raise InputError(f'{len(wavelengths)} wavelengths given for {data.shape[2]} bands')
            object.__setattr__(self, 'wavelengths', wavelengths)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> np.ndarray:
        """(H*W) x B view, row-major"""
        return self.data.reshape(-1, self.bands)


@dataclass(frozen=True)
class PolygonRecord:
    polygon_id: int
    tag: str
    geometry: BaseGeometry

    @property
    def rings(self) -> List[np.ndarray]:
        """All rings (exteriors and holes of every part) as open vertex arrays in map coordinates"""
        parts = getattr(self.geometry, 'geoms', [self.geometry])
        rings = []
        for part in parts:
            for ring in [part.exterior, *part.interiors]:
                rings.append(np.asarray(ring.coords, dtype=np.float64)[:-1, :2])
        return rings


@dataclass
class PolygonSet:
    polygons: List[PolygonRecord] = field(default_factory=list)

    def __post_init__(self):
        ids = [p.polygon_id for p in self.polygons]
        if len(ids) != len(set(ids)):
            raise InputError('polygon ids must be unique')

    def __len__(self) -> int:
        return len(self.polygons)

    def __iter__(self) -> Iterator[PolygonRecord]:
        return iter(self.polygons)

    @property
    def tags(self) -> Dict[int, str]:
        return {p.polygon_id: p.tag for p in self.polygons}


@dataclass(frozen=True)
class ControlPoints:
    map_xy: np.ndarray
    pixel_cr: np.ndarray

    def __post_init__(self):
        map_xy = np.asarray(self.map_xy, dtype=np.float64).reshape(-1, 2)
        pixel_cr = np.asarray(self.pixel_cr, dtype=np.float64).reshape(-1, 2)
        if map_xy.shape != pixel_cr.shape:
            raise InputError('control point lists differ in length')
        if not (np.isfinite(map_xy).all() and np.isfinite(pixel_cr).all()):
            raise InputError('control points must be finite')
        object.__setattr__(self, 'map_xy', map_xy)
        object.__setattr__(self, 'pixel_cr', pixel_cr)

    def __len__(self) -> int:
        return len(self.map_xy)


@dataclass(frozen=True)
class PipelineConfig:
    K: int = 500
    m: float = 20.0
    n: int = 3
    M: int = 6
    alpha: float = 0.3
    lambda_pm: float = 1.0
    epsilon: float = 0.05
    T: int = 200
    K_final: int = 6
    min_segment: int = 25
    runs: int = 10
    seed: int = 0
    max_iters: int = 10
    residual_tol: float = 1.0
    enforce_connectivity: bool = True
    normalize_spectral: bool = False
    min_overlap: Optional[float] = None
    burn_in: Optional[int] = None
    kmeans_restarts: int = 10
    subsample: int = 20000
    exact_metrics: bool = False
    connectivity: int = 4
    class_endmembers: Dict[str, List[int]] = field(default_factory=dict)
    render_seed: int = 0

    def validate(self) -> 'PipelineConfig':
        checks = [
            ('K', self.K >= 1), ('m', self.m > 0), ('n', self.n >= 1 and self.n % 2 == 1),
            ('M', self.M >= 1), ('alpha', self.alpha > 0), ('lambda_pm', self.lambda_pm > 0),
            ('epsilon', 0 <= self.epsilon <= 1), ('T', self.T >= 1), ('K_final', self.K_final >= 1),
            ('min_segment', self.min_segment >= 0), ('runs', self.runs >= 1),
            ('max_iters', self.max_iters >= 1), ('residual_tol', self.residual_tol >= 0),
            ('min_overlap', self.min_overlap is None or 0 < self.min_overlap <= 1),
            ('burn_in', self.burn_in is None or 0 <= self.burn_in < self.T),
            ('kmeans_restarts', self.kmeans_restarts >= 1), ('subsample', self.subsample >= 2),
            ('connectivity', self.connectivity in (4, 8)),
        ]
        for name, ok in checks:
            if not ok:
                raise InputError(f'invalid configuration value {name}={getattr(self, name)!r}')
        for tag, indices in self.class_endmembers.items():
            if not indices or any(not 0 <= int(k) < self.M for k in indices):
                raise InputError(f'class_endmembers[{tag!r}] must list endmember indices below M={self.M}')
        return self

    @property
    def effective_burn_in(self) -> int:
        return self.T // 2 if self.burn_in is None else self.burn_in

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> 'PipelineConfig':
        return cls().with_overrides(**values)

    def with_overrides(self, **values) -> 'PipelineConfig':
        known = {f.name for f in fields(self)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InputError(f'unknown configuration keys: {", ".join(unknown)}')
        return replace(self, **values).validate()


PRESETS = {
    'pavia': {'K': 500, 'm': 20.0, 'M': 6, 'alpha': 0.3, 'lambda_pm': 1.0, 'epsilon': 0.05,
              'T': 200, 'K_final': 6},
    'gulfport': {'K': 500, 'm': 20.0, 'M': 7, 'alpha': 0.3, 'lambda_pm': 1.0, 'epsilon': 0.10,
                 'T': 200, 'K_final': 7},
}

ENV_OVERRIDES = {'HSSEG_SEED': ('seed', int), 'HSSEG_RUNS': ('runs', int)}


def load_config(path: Optional[str] = None, preset: Optional[str] = None,
                overrides: Optional[dict] = None) -> PipelineConfig:
    """defaults < preset < config file < environment < explicit overrides"""
    config = PipelineConfig()
    if preset:
        if preset not in PRESETS:
            raise InputError(f'unknown preset {preset!r}; choose from {", ".join(sorted(PRESETS))}')
        config = config.with_overrides(**PRESETS[preset])
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                values = json.load(f)
        except OSError as e:
            raise InputError(f'cannot read config file {path}: {e}') from e
        except json.JSONDecodeError as e:
            raise InputError(f'config file {path} is not valid JSON: {e}') from e
        if not isinstance(values, dict):
            raise InputError(f'config file {path} must hold a JSON object')
        config = config.with_overrides(**values)
    env_values = {}
    for var, (key, cast) in ENV_OVERRIDES.items():
        if os.getenv(var):
            try:
                env_values[key] = cast(os.getenv(var))
            except ValueError as e:
                raise InputError(f'{var} must be {cast.__name__}: {e}') from e
    if env_values:
        config = config.with_overrides(**env_values)
    if overrides:
        config = config.with_overrides(**{k: v for k, v in overrides.items() if v is not None})
    return config.validate()


def write_config(config: PipelineConfig, path: str) -> str:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
    return path


def _header_int(header: dict, key: str, default: Optional[int] = None) -> int:
    if key not in header:
        if default is None:
            raise InputError(f'malformed header: missing key {key!r}')
        return default
    try:
        return int(header[key])
    except (TypeError, ValueError) as e:
        raise InputError(f'malformed header: {key!r} is not an integer ({header[key]!r})') from e


def read_cube(header_path: str, data_path: Optional[str] = None) -> HsiCube:
    """Read an ENVI header + flat binary pair into canonical (row, col, band) order"""
    if data_path is None:
        data_path = os.path.splitext(header_path)[0] + '.img'
    try:
        header = envi.read_envi_header(header_path)
    except OSError as e:
        raise InputError(f'cannot read header {header_path}: {e}') from e
    except Exception as e:
        raise InputError(f'malformed header {header_path}: {e}') from e

    missing = [k for k in REQUIRED_HEADER_KEYS if k not in header]
    if missing:
        raise InputError(f'malformed header {header_path}: missing {", ".join(missing)}')

    lines = _header_int(header, 'lines')
    samples = _header_int(header, 'samples')
    bands = _header_int(header, 'bands')
    offset = _header_int(header, 'header offset', 0)
    byte_order = _header_int(header, 'byte order', 0)
    interleave = str(header['interleave']).strip().lower()
    code = str(header['data type']).strip()
    if min(lines, samples, bands) < 1:
        raise InputError(f'malformed header {header_path}: dimensions must be >= 1')
    if interleave not in ('bsq', 'bil', 'bip'):
        raise InputError(f'malformed header {header_path}: unknown interleave {interleave!r}')
    if code not in envi.envi_to_dtype:
        raise InputError(f'malformed header {header_path}: unsupported data type {code}')

    dtype = np.dtype(envi.envi_to_dtype[code]).newbyteorder('>' if byte_order == 1 else '<')
    expected = offset + lines * samples * bands * dtype.itemsize
    try:
        actual = os.path.getsize(data_path)
    except OSError as e:
        raise InputError(f'cannot read data file {data_path}: {e}') from e
    if actual != expected:
        raise InputError(f'size mismatch: {data_path} holds {actual} bytes, header implies {expected}')

    try:
        image = envi.open(header_path, image=data_path)
        data = image.load(dtype=np.float64)
    except OSError as e:
        raise InputError(f'cannot read data file {data_path}: {e}') from e
    except Exception as e:
        raise InputError(f'cannot decode cube {header_path}: {e}') from e

    wavelengths = header.get('wavelength')
    if wavelengths is not None:
        try:
            wavelengths = np.asarray([float(w) for w in wavelengths])
        except (TypeError, ValueError) as e:
            raise InputError(f'malformed header {header_path}: bad wavelength list') from e

    cube = HsiCube(data, wavelengths)
    logger.info('read cube %s: %d x %d x %d (%s)', header_path, lines, samples, bands, interleave)
    return cube


def write_cube(cube: HsiCube, header_path: str, interleave: str = 'bsq',
               dtype=np.float64) -> str:
    """Write an ENVI header + binary pair; float64 keeps round trips value-exact. Returns the data path"""
    metadata = {}
    if cube.wavelengths is not None:
        metadata['wavelength'] = [repr(float(w)) for w in cube.wavelengths]
    _save_envi(header_path, cube.data, interleave, dtype, metadata)
    return os.path.splitext(header_path)[0] + '.img'


def _save_envi(header_path: str, data: np.ndarray, interleave: str, dtype, metadata: dict) -> None:
    try:
        envi.save_image(header_path, np.asarray(data), dtype=dtype, interleave=interleave,
                        byteorder=0, ext='.img', force=True, metadata=metadata)
    except OSError as e:
        raise InputError(f'cannot write {header_path}: {e}') from e


def read_polygons(path: str) -> PolygonSet:
    """Read a GeoJSON FeatureCollection of tagged Polygon/MultiPolygon features"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            collection = json.load(f)
    except OSError as e:
        raise InputError(f'cannot read polygons {path}: {e}') from e
    except json.JSONDecodeError as e:
        raise InputError(f'polygon file {path} is not valid JSON: {e}') from e

    if not isinstance(collection, dict) or collection.get('type') != 'FeatureCollection':
        raise InputError(f'{path} is not a GeoJSON FeatureCollection')

    records = []
    for index, feature in enumerate(collection.get('features') or []):
        properties = feature.get('properties') or {}
        tag = properties.get('class')
        if not isinstance(tag, str) or not tag:
            raise InputError(f'feature {index}: missing class tag')
        geometry = feature.get('geometry') or {}
        kind = geometry.get('type')
        if kind not in ('Polygon', 'MultiPolygon'):
            raise InputError(f'feature {index}: unsupported geometry {kind!r}; only polygons are accepted')
        polygons = [geometry.get('coordinates')] if kind == 'Polygon' else geometry.get('coordinates')
        for rings in polygons or [[]]:
            if not rings:
                raise InputError(f'feature {index}: polygon without rings')
            for ring in rings:
                try:
                    vertices = [(float(v[0]), float(v[1])) for v in ring]
                except (TypeError, ValueError, IndexError) as e:
                    raise InputError(f'feature {index}: malformed coordinates ({e})') from e
                if len(vertices) > 1 and vertices[0] == vertices[-1]:
                    vertices = vertices[:-1]
                if len(vertices) < 3:
                    raise InputError(f'feature {index}: ring with {len(vertices)} vertices (need >= 3)')

        raw_id = properties.get('id', feature.get('id', index))
        try:
            polygon_id = int(raw_id)
        except (TypeError, ValueError) as e:
            raise InputError(f'feature {index}: polygon id {raw_id!r} is not an integer') from e
        try:
            geometry = shape(geometry)
        except Exception as e:
            raise InputError(f'feature {index}: invalid geometry ({e})') from e
        records.append(PolygonRecord(polygon_id, tag, geometry))

    polygons = PolygonSet(records)
    logger.info('read %d polygons from %s', len(polygons), path)
    return polygons


def write_polygons(polygons: Sequence[dict], path: str) -> str:
    """Write plain {'rings': [...], 'class': tag, 'id': n} dicts as a GeoJSON FeatureCollection"""
    features = []
    for p in polygons:
        rings = [[list(map(float, v)) for v in ring] + [list(map(float, ring[0]))] for ring in p['rings']]
        features.append({
            'type': 'Feature',
            'properties': {'class': p['class'], 'id': int(p['id'])},
            'geometry': {'type': 'Polygon', 'coordinates': rings},
        })
    with open(path, 'w', encoding='utf-8') as f:
        json.dump({'type': 'FeatureCollection', 'features': features}, f, indent=2)
    return path


def read_control_points(path: str) -> ControlPoints:
    try:
        table = pd.read_csv(path)
    except OSError as e:
        raise InputError(f'cannot read control points {path}: {e}') from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f'malformed control point file {path}: {e}') from e
    missing = [c for c in CONTROL_POINT_COLUMNS if c not in table.columns]
    if missing:
        raise InputError(f'{path}: missing control point columns {", ".join(missing)}')
    return ControlPoints(table[['map_x', 'map_y']].to_numpy(dtype=np.float64),
                         table[['pixel_col', 'pixel_row']].to_numpy(dtype=np.float64))


def write_control_points(points: ControlPoints, path: str) -> str:
    table = pd.DataFrame(np.hstack([points.map_xy, points.pixel_cr]), columns=CONTROL_POINT_COLUMNS)
    table.to_csv(path, index=False)
    return path


def write_label_map(labels: np.ndarray, raw_path: str, render_path: Optional[str] = None,
                    seed: int = 0) -> None:
    """Raw little-endian u32 labels, row-major, plus a PNG with one seed-derived color per label"""
    labels = validate_label_map(labels)
    try:
        labels.astype('<u4').tofile(raw_path)
        if render_path:
            render_label_map(labels, render_path, seed)
    except OSError as e:
        raise InputError(f'cannot write label map: {e}') from e


def read_label_map(raw_path: str, height: int, width: int) -> np.ndarray:
    try:
        flat = np.fromfile(raw_path, dtype='<u4')
    except OSError as e:
        raise InputError(f'cannot read label map {raw_path}: {e}') from e
    if flat.size != height * width:
        raise InputError(f'label map {raw_path} holds {flat.size} labels, expected {height * width}')
    return flat.reshape(height, width).astype(np.int64)


def write_proportions(proportions: np.ndarray, header_path: str,
                      tags: Optional[Sequence[Optional[str]]] = None) -> str:
    """Planar (band-sequential) float32 proportion map with an ENVI text header"""
    metadata = {'description': 'endmember proportion map'}
    if tags:
        metadata['band names'] = [t or f'endmember_{k}' for k, t in enumerate(tags)]
    _save_envi(header_path, proportions, 'bsq', np.float32, metadata)
    return os.path.splitext(header_path)[0] + '.img'


def read_proportions(header_path: str) -> np.ndarray:
    return np.array(read_cube(header_path).data)


def write_endmembers(endmembers: Sequence, path: str) -> str:
    """CSV, one row per endmember: tag, mu..., sigma2..."""
    rows = []
    for e in endmembers:
        mu = np.asarray(e.mu)
        row = {'tag': e.tag or ''}
        row.update({f'mu_{b}': v for b, v in enumerate(mu)})
        row.update({f'sigma2_{b}': v for b, v in enumerate(np.asarray(e.sigma2))})
        rows.append(row)
    pd.DataFrame(rows).to_csv(path, index=False, float_format='%.17g')
    return path
