"""
Map-guided superpixel segmentation: the three pipeline stages wired together,
their on-disk outputs and the run manifest that makes a run replayable.
"""

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import InputError
from finalseg import KmeansResult, segment_proportions
from hsio import (ControlPoints, HsiCube, PipelineConfig, PolygonSet, write_endmembers,
                  write_label_map, write_proportions)
from hslic import HslicParams, run_hslic
from mapalign import AffineTransform, fit_affine, merge_by_polygon, rasterize
from render import render_boundaries, render_proportions
from spmlda import SPMLDA, Endmember, SamplerParams, SpmldaResult, partial_labels_from_tags

logger = logging.getLogger(__name__)

TOOL_VERSION = '1.0.0'


@dataclass
class PipelineResult:
    hslic: np.ndarray
    merged: Optional[np.ndarray]
    tag_map: Dict[int, str]
    transform: Optional[AffineTransform]
    proportions: np.ndarray
    endmembers: List[Endmember]
    pmlda: np.ndarray
    final: np.ndarray
    sampler: Optional[SpmldaResult] = None
    kmeans: Optional[KmeansResult] = None
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def guided(self) -> bool:
        return self.merged is not None

    def method_labels(self) -> Dict[str, np.ndarray]:
        """Label map of every comparison method this run produced"""
        methods = {'HSLIC': self.hslic}
        if self.guided:
            methods['HSLIC+OSM'] = self.merged
        methods['PM-LDA'] = self.pmlda
        methods['Proposed'] = self.final
        return methods


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: Dict[str, str] = field(default_factory=dict)
    input_hashes: Dict[str, str] = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    seed: int = 0
    timings: Dict[str, float] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    version: str = TOOL_VERSION

    @classmethod
    def start(cls, command: str, config: PipelineConfig, inputs: Dict[str, Optional[str]],
              options: Optional[dict] = None) -> 'RunManifest':
        present = {role: os.path.abspath(path) for role, path in inputs.items() if path}
        # progress display does not affect outputs
        recorded = {k: v for k, v in (options or {}).items() if k != 'progress'}
        return cls(command, config.to_dict(), present,
                   {role: file_sha256(path) for role, path in present.items()},
                   recorded, config.seed)

    def write(self, path: str) -> str:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
        return path

    @classmethod
    def load(cls, path: str) -> 'RunManifest':
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except OSError as e:
            raise InputError(f'cannot read manifest {path}: {e}') from e
        except json.JSONDecodeError as e:
            raise InputError(f'manifest {path} is not valid JSON: {e}') from e
        try:
            return cls(**data)
        except TypeError as e:
            raise InputError(f'manifest {path} has unexpected fields: {e}') from e


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, 'rb') as f:
            for block in iter(lambda: f.read(1 << 20), b''):
                digest.update(block)
    except OSError as e:
        raise InputError(f'cannot hash input {path}: {e}') from e
    return digest.hexdigest()


def replay_manifest(manifest_path: str) -> RunManifest:
    """Load a manifest and check that every recorded input is unchanged"""
    manifest = RunManifest.load(manifest_path)
    for role, path in manifest.inputs.items():
        if not os.path.exists(path):
            raise InputError(f'replay: input {role} ({path}) no longer exists')
        if file_sha256(path) != manifest.input_hashes.get(role):
            raise InputError(f'replay: input {role} ({path}) changed since the recorded run')
    return manifest


class MapGuidedSegmenter:
    def __init__(self, config: PipelineConfig, progress: bool = False):
        self.config = config.validate()
        self.progress = progress

    def with_seed(self, seed: int) -> 'MapGuidedSegmenter':
        return MapGuidedSegmenter(self.config.with_overrides(seed=int(seed)), self.progress)

    def hslic_params(self) -> HslicParams:
        c = self.config
        return HslicParams(c.K, c.m, c.n, c.max_iters, c.residual_tol, c.enforce_connectivity,
                           c.normalize_spectral, c.connectivity)

    def sampler_params(self) -> SamplerParams:
        c = self.config
        return SamplerParams(c.M, c.alpha, c.lambda_pm, c.epsilon, c.T, c.seed, c.burn_in,
                             progress=self.progress)

    def run_stage1(self, cube: HsiCube, polygons: Optional[PolygonSet] = None,
                   points: Optional[ControlPoints] = None):
        """HSLIC, then the polygon merge when map data is supplied. Returns (hslic, merged, tags, transform)"""
        guided = polygons is not None and len(polygons) > 0
        if guided and points is None:
            raise InputError('polygons need control points to align them with the image (--control-points)')
        labels, _ = run_hslic(cube, self.hslic_params(), self.config.seed)
        if not guided:
            if polygons is not None:
                logger.warning('empty polygon set: continuing unguided')
            return labels, None, {}, None

        transform = fit_affine(points)
        mask = rasterize(polygons, transform, cube.height, cube.width)
        merged, tag_map = merge_by_polygon(labels, mask, self.config.min_overlap)
        return labels, merged, tag_map, transform

    def run_stage2(self, cube: HsiCube, superpixels: np.ndarray,
                   tag_map: Optional[Dict[int, str]] = None) -> SpmldaResult:
        partial = partial_labels_from_tags(tag_map or {}, self.config.M, self.config.class_endmembers)
        return SPMLDA(self.sampler_params()).run(cube, superpixels, partial)

    def run_stage3(self, proportions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, KmeansResult]:
        c = self.config
        return segment_proportions(proportions, c.K_final, c.min_segment, c.seed,
                                   c.kmeans_restarts, c.connectivity)

    def run(self, cube: HsiCube, polygons: Optional[PolygonSet] = None,
            points: Optional[ControlPoints] = None) -> PipelineResult:
        timings = {}
        started = time.perf_counter()
        hslic_labels, merged, tag_map, transform = self.run_stage1(cube, polygons, points)
        timings['stage1'] = time.perf_counter() - started

        started = time.perf_counter()
        superpixels = merged if merged is not None else hslic_labels
        sampler = self.run_stage2(cube, superpixels, tag_map)
        timings['stage2'] = time.perf_counter() - started

        started = time.perf_counter()
        pmlda, final, clusters = self.run_stage3(sampler.proportions)
        timings['stage3'] = time.perf_counter() - started

        logger.info('pipeline: %d HSLIC superpixels -> %d final segments in %.1fs',
                    int(hslic_labels.max()) + 1, int(final.max()) + 1, sum(timings.values()))
        return PipelineResult(hslic_labels, merged, tag_map, transform, sampler.proportions,
                              sampler.endmembers, pmlda, final, sampler, clusters, timings)

    def write_outputs(self, result: PipelineResult, cube: HsiCube, out_dir: str) -> Dict[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        seed = self.config.render_seed
        outputs = {}

        def label_output(name: str, labels: np.ndarray):
            raw, png = os.path.join(out_dir, f'{name}.raw'), os.path.join(out_dir, f'{name}.png')
            write_label_map(labels, raw, png, seed)
            outputs[name] = raw
            outputs[f'{name}_png'] = png

        label_output('hslic', result.hslic)
        if result.guided:
            label_output('hslic_osm', result.merged)
            with open(os.path.join(out_dir, 'tags.json'), 'w', encoding='utf-8') as f:
                json.dump({str(k): v for k, v in sorted(result.tag_map.items())}, f, indent=2)
            outputs['tags'] = os.path.join(out_dir, 'tags.json')
        label_output('pmlda', result.pmlda)
        label_output('final', result.final)

        tags = [e.tag for e in result.endmembers]
        outputs['proportions'] = write_proportions(result.proportions, os.path.join(out_dir, 'proportions.hdr'), tags)
        for k, path in enumerate(render_proportions(result.proportions, out_dir, tags)):
            outputs[f'proportion_{k}'] = path
        outputs['endmembers'] = write_endmembers(result.endmembers, os.path.join(out_dir, 'endmembers.csv'))
        outputs['boundaries'] = render_boundaries(cube.data, result.final, os.path.join(out_dir, 'boundaries.png'))
        logger.info('wrote %d output files to %s', len(outputs), out_dir)
        return outputs
