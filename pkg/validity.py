"""
Cluster validity indices over spectral signatures, with every superpixel
treated as one cluster, and their aggregation over repeated pipeline runs.

Larger Dunn and Silhouette values and a smaller Davies-Bouldin value
indicate a better partition.
"""

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import sparse
from scipy.spatial.distance import cdist
from tqdm import tqdm

from errors import DegenerateError, InputError

logger = logging.getLogger(__name__)

METRICS = ('dunn', 'db', 'silhouette')
METHODS = ('HSLIC', 'HSLIC+OSM', 'PM-LDA', 'Proposed')
CHUNK_ELEMENTS = 20_000_000


def _prepare(features: np.ndarray, labels: np.ndarray):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise InputError(f'{len(y)} labels for features of shape {X.shape}')
    _, y = np.unique(y, return_inverse=True)
    y = y.ravel()
    n_clusters = int(y.max()) + 1 if len(y) else 0
    if n_clusters < 2:
        raise DegenerateError(f'validity indices need >= 2 clusters, got {n_clusters}')
    return X, y, n_clusters


def _chunk_rows(n: int) -> int:
    return max(1, CHUNK_ELEMENTS // max(n, 1))


def dunn_index(features: np.ndarray, labels: np.ndarray) -> float:
    """Smallest single-linkage gap between clusters over the largest cluster diameter"""
    X, y, _ = _prepare(features, labels)
    min_gap, max_diameter = np.inf, 0.0
    step = _chunk_rows(len(X))
    for start in range(0, len(X), step):
        d = cdist(X[start:start + step], X)
        same = y[start:start + step, None] == y[None, :]
        max_diameter = max(max_diameter, float(d[same].max()))
        if (~same).any():
            min_gap = min(min_gap, float(d[~same].min()))
    if max_diameter == 0:
        raise DegenerateError('Dunn index undefined: every cluster has zero diameter')
    return min_gap / max_diameter


def davies_bouldin(features: np.ndarray, labels: np.ndarray) -> float:
    X, y, K = _prepare(features, labels)
    counts = np.bincount(y, minlength=K)
    centroids = np.zeros((K, X.shape[1]))
    np.add.at(centroids, y, X)
    centroids /= counts[:, None]
    scatter = np.bincount(y, weights=np.sqrt(((X - centroids[y]) ** 2).sum(axis=1)), minlength=K) / counts

    separation = cdist(centroids, centroids)
    np.fill_diagonal(separation, np.inf)
    if (separation == 0).any():
        raise DegenerateError('Davies-Bouldin index undefined: two clusters share a centroid')
    ratio = (scatter[:, None] + scatter[None, :]) / separation
    return float(ratio.max(axis=1).mean())


def _sample(n: int, subsample: Optional[int], seed: int) -> np.ndarray:
    if subsample is None or n <= subsample:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=subsample, replace=False))


def silhouette(features: np.ndarray, labels: np.ndarray, subsample: Optional[int] = None,
               seed: int = 0) -> float:
    """
    Mean silhouette. With N > subsample only a seeded uniform sample of points
    is scored, each against the full population.
    """
    X, y, K = _prepare(features, labels)
    counts = np.bincount(y, minlength=K).astype(np.float64)
    members = sparse.csr_matrix((np.ones(len(y)), (np.arange(len(y)), y)), shape=(len(y), K))
    evaluated = _sample(len(X), subsample, seed)

    scores = np.zeros(len(evaluated))
    step = _chunk_rows(len(X))
    for start in range(0, len(evaluated), step):
        idx = evaluated[start:start + step]
        totals = np.asarray((members.T @ cdist(X[idx], X).T).T)
        own = y[idx]
        rows = np.arange(len(idx))
        own_count = counts[own]
        a = np.where(own_count > 1, totals[rows, own] / np.maximum(own_count - 1, 1), 0.0)
        means = totals / counts[None, :]
        means[rows, own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        scores[start:start + len(idx)] = np.where(own_count > 1, s, 0.0)
    return float(scores.mean())


def score_labels(features: np.ndarray, labels: np.ndarray, subsample: int = 20000,
                 seed: int = 0, exact: bool = False) -> Dict[str, float]:
    """All three indices; above `subsample` points Dunn and Silhouette use a seeded sample"""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).ravel()
    limit = None if exact else subsample
    sample = _sample(len(y), limit, seed)
    return {
        'dunn': dunn_index(X[sample], y[sample]),
        'db': davies_bouldin(X, y),
        'silhouette': silhouette(X, y, limit, seed),
    }


@dataclass
class ValidityReport:
    dunn: List[float] = field(default_factory=list)
    db: List[float] = field(default_factory=list)
    silhouette: List[float] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    subsample: Optional[int] = None
    method: str = 'Proposed'

    @classmethod
    def from_scores(cls, scores: Sequence[Dict[str, float]], seeds: Sequence[int],
                    subsample: Optional[int], method: str = 'Proposed') -> 'ValidityReport':
        return cls([s['dunn'] for s in scores], [s['db'] for s in scores],
                   [s['silhouette'] for s in scores], [int(s) for s in seeds], subsample, method)

    @property
    def runs(self) -> int:
        return len(self.dunn)

    @property
    def single_run(self) -> bool:
        return self.runs == 1

    def values(self, metric: str) -> List[float]:
        if metric not in METRICS:
            raise InputError(f'unknown metric {metric!r}')
        return getattr(self, metric)

    def mean(self, metric: str) -> float:
        return float(np.mean(self.values(metric)))

    def std(self, metric: str) -> float:
        values = self.values(metric)
        # identical runs report exactly 0
        if len(values) < 2 or len(set(values)) == 1:
            return 0.0
        return float(np.std(values, ddof=1))

    def summary(self) -> dict:
        return {
            'method': self.method,
            'runs': self.runs,
            'single_run': self.single_run,
            'subsample': self.subsample,
            'seeds': self.seeds,
            'per_run': {metric: self.values(metric) for metric in METRICS},
            'mean': {metric: self.mean(metric) for metric in METRICS},
            'std': {metric: self.std(metric) for metric in METRICS},
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            'metric': metric, 'mean': self.mean(metric), 'std': self.std(metric), 'runs': self.runs,
            'subsample': self.subsample if self.subsample is not None else '',
            'seed': self.seeds[0] if self.seeds else '',
        } for metric in METRICS])

    def write(self, json_path: str, csv_path: Optional[str] = None) -> None:
        with open(json_path, 'w', encoding='utf-8') as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)
        if csv_path:
            self.to_frame().to_csv(csv_path, index=False, float_format='%.17g')

    @classmethod
    def load(cls, json_path: str) -> 'ValidityReport':
        try:
            with open(json_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f'cannot read validity report {json_path}: {e}') from e
        per_run = data.get('per_run', {})
        return cls(per_run.get('dunn', []), per_run.get('db', []), per_run.get('silhouette', []),
                   data.get('seeds', []), data.get('subsample'), data.get('method', 'Proposed'))


def _score_run(segmenter, cube, polygons, points, seed: int, methods: Sequence[str],
               result=None) -> Dict[str, Dict[str, float]]:
    config = segmenter.config
    if result is None:
        result = segmenter.with_seed(seed).run(cube, polygons, points)
    available = result.method_labels()
    features = cube.pixels()
    return {method: score_labels(features, available[method], config.subsample, seed, config.exact_metrics)
            for method in methods if method in available}


def _run_all(segmenter, cube, polygons, points, seeds, methods, jobs, precomputed, progress):
    precomputed = precomputed or {}
    todo = [s for s in seeds if s not in precomputed]
    scored = {s: _score_run(segmenter, cube, polygons, points, s, methods, precomputed[s])
              for s in seeds if s in precomputed}
    if jobs != 1 and len(todo) > 1:
        results = Parallel(n_jobs=jobs)(
            delayed(_score_run)(segmenter, cube, polygons, points, s, methods) for s in todo)
        scored.update(zip(todo, results))
    else:
        for s in tqdm(todo, desc='evaluation runs', disable=not progress):
            scored[s] = _score_run(segmenter, cube, polygons, points, s, methods)
    return [scored[s] for s in seeds]


def _seeds_for(segmenter, runs: int, seeds: Optional[Sequence[int]]) -> List[int]:
    if seeds is None:
        seeds = [segmenter.config.seed + r for r in range(runs)]
    seeds = [int(s) for s in seeds]
    if len(seeds) != runs or runs < 1:
        raise InputError(f'need {runs} distinct seeds, got {seeds}')
    return seeds


def evaluate_runs(segmenter, cube, polygons=None, points=None, runs: int = 10,
                  seeds: Optional[Sequence[int]] = None, jobs: int = 1, precomputed: Optional[dict] = None,
                  method: str = 'Proposed', progress: bool = False) -> ValidityReport:
    """Run the configured pipeline once per seed and aggregate the indices of one method's labels"""
    seeds = _seeds_for(segmenter, runs, seeds)
    per_seed = _run_all(segmenter, cube, polygons, points, seeds, [method], jobs, precomputed, progress)
    subsample = None if segmenter.config.exact_metrics else segmenter.config.subsample
    report = ValidityReport.from_scores([s[method] for s in per_seed], seeds, subsample, method)
    logger.info('%s over %d runs: Dunn %.4g, DB %.4g, Silhouette %.4g', method, report.runs,
                report.mean('dunn'), report.mean('db'), report.mean('silhouette'))
    return report


def compare_methods(segmenter, cube, polygons=None, points=None, runs: int = 10,
                    seeds: Optional[Sequence[int]] = None, jobs: int = 1,
                    progress: bool = False) -> 'OrderedDict[str, ValidityReport]':
    """Reports for HSLIC, HSLIC+OSM (guided runs only), PM-LDA and the full pipeline from shared runs"""
    seeds = _seeds_for(segmenter, runs, seeds)
    per_seed = _run_all(segmenter, cube, polygons, points, seeds, METHODS, jobs, None, progress)
    subsample = None if segmenter.config.exact_metrics else segmenter.config.subsample
    reports = OrderedDict()
    for method in METHODS:
        if all(method in s for s in per_seed):
            reports[method] = ValidityReport.from_scores([s[method] for s in per_seed], seeds, subsample, method)
    return reports


def write_comparison(reports: Dict[str, ValidityReport], json_path: str, csv_path: str) -> None:
    with open(json_path, 'w', encoding='utf-8') as f:
        json.dump({method: report.summary() for method, report in reports.items()}, f, indent=2, sort_keys=True)
    frames = []
    for method, report in reports.items():
        frame = report.to_frame()
        frame.insert(0, 'method', method)
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(csv_path, index=False, float_format='%.17g')
