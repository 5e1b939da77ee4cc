"""
Command-line interface for map-guided hyperspectral superpixel segmentation.

Subcommands
-----------
hslic     HSLIC superpixels; with --polygons and --control-points also the
          polygon-merged (HSLIC+OSM) map
pipeline  all three stages, output files, validity report and manifest
evaluate  validity indices of an existing label map
compare   HSLIC, HSLIC+OSM, PM-LDA and the full pipeline over repeated runs
render    PNG renderings of a label map (and optionally a proportion map)
demo      writes a synthetic scene and runs the pipeline on it
replay    re-executes the run recorded in a manifest.json

Examples
--------
    python main.py pipeline --cube paviaU.hdr --polygons osm.geojson \
        --control-points gcp.csv --preset pavia --out-dir results/pavia
    python main.py evaluate --cube paviaU.hdr --labels results/pavia/final.raw
    python main.py replay results/pavia/manifest.json --out-dir results/replay
"""

import argparse
import logging
import os
import sys
import time
from typing import Dict, Optional

from dotenv import load_dotenv

from errors import DegenerateError, InputError
from hsio import (PRESETS, PipelineConfig, load_config, read_control_points, read_cube, read_label_map,
                  read_polygons, read_proportions, write_config, write_label_map)
from render import render_boundaries, render_proportions
from report_generator import PDFReportGenerator
from segmenter import MapGuidedSegmenter, RunManifest, replay_manifest
from synthetic import write_demo_inputs
from validity import ValidityReport, compare_methods, evaluate_runs, score_labels, write_comparison

logger = logging.getLogger(__name__)

DEMO_OVERRIDES = {'K': 16, 'M': 4, 'K_final': 4, 'T': 60, 'runs': 1, 'min_segment': 10}


def _cube_paths(inputs: Dict[str, Optional[str]]):
    header = inputs['cube']
    return header, inputs.get('cube_data') or os.path.splitext(header)[0] + '.img'


def _load_scene(inputs: Dict[str, Optional[str]]):
    cube = read_cube(*_cube_paths(inputs))
    polygons = read_polygons(inputs['polygons']) if inputs.get('polygons') else None
    points = read_control_points(inputs['control_points']) if inputs.get('control_points') else None
    if points is not None and polygons is None:
        print("⚠️  Control points given without polygons; running unguided")
    return cube, polygons, points


def _finish(manifest: RunManifest, out_dir: str, started: float) -> RunManifest:
    manifest.timings['total'] = time.perf_counter() - started
    manifest.outputs['manifest'] = manifest.write(os.path.join(out_dir, 'manifest.json'))
    return manifest


def cmd_hslic(config: PipelineConfig, inputs: Dict[str, Optional[str]], out_dir: str,
              options: dict) -> RunManifest:
    started = time.perf_counter()
    manifest = RunManifest.start('hslic', config, inputs, options)
    cube, polygons, points = _load_scene(inputs)
    os.makedirs(out_dir, exist_ok=True)

    segmenter = MapGuidedSegmenter(config, options.get('progress', False))
    stage_started = time.perf_counter()
    labels, merged, tag_map, _ = segmenter.run_stage1(cube, polygons, points)
    manifest.timings['stage1'] = time.perf_counter() - stage_started

    for name, values in (('hslic', labels), ('hslic_osm', merged)):
        if values is None:
            continue
        raw, png = os.path.join(out_dir, f'{name}.raw'), os.path.join(out_dir, f'{name}.png')
        write_label_map(values, raw, png, config.render_seed)
        manifest.outputs[name] = raw
    print(f"✅ HSLIC: {int(labels.max()) + 1} superpixels"
          + (f", {int(merged.max()) + 1} after polygon merge ({len(tag_map)} tagged)" if merged is not None else ''))
    return _finish(manifest, out_dir, started)


def cmd_pipeline(config: PipelineConfig, inputs: Dict[str, Optional[str]], out_dir: str,
                 options: dict) -> RunManifest:
    started = time.perf_counter()
    manifest = RunManifest.start('pipeline', config, inputs, options)
    cube, polygons, points = _load_scene(inputs)
    progress = options.get('progress', False)

    segmenter = MapGuidedSegmenter(config, progress)
    result = segmenter.run(cube, polygons, points)
    manifest.timings.update(result.timings)
    manifest.outputs.update(segmenter.write_outputs(result, cube, out_dir))
    print(f"✅ Segmentation: {int(result.final.max()) + 1} final segments written to {out_dir}")

    stage_started = time.perf_counter()
    report = evaluate_runs(segmenter, cube, polygons, points, runs=config.runs,
                           jobs=options.get('jobs', 1), precomputed={config.seed: result}, progress=progress)
    manifest.timings['validity'] = time.perf_counter() - stage_started
    json_path, csv_path = os.path.join(out_dir, 'validity.json'), os.path.join(out_dir, 'validity.csv')
    report.write(json_path, csv_path)
    manifest.outputs.update({'validity': json_path, 'validity_csv': csv_path})
    manifest.outputs['config'] = write_config(config, os.path.join(out_dir, 'config.json'))
    _print_report(report)
    return _finish(manifest, out_dir, started)


def cmd_evaluate(config: PipelineConfig, inputs: Dict[str, Optional[str]], out_dir: str,
                 options: dict) -> RunManifest:
    started = time.perf_counter()
    manifest = RunManifest.start('evaluate', config, inputs, options)
    cube = read_cube(*_cube_paths(inputs))
    labels = read_label_map(inputs['labels'], cube.height, cube.width)
    os.makedirs(out_dir, exist_ok=True)

    scores = score_labels(cube.pixels(), labels, config.subsample, config.seed, config.exact_metrics)
    subsample = None if config.exact_metrics else config.subsample
    report = ValidityReport.from_scores([scores], [config.seed], subsample,
                                        method=os.path.basename(inputs['labels']))
    json_path, csv_path = os.path.join(out_dir, 'validity.json'), os.path.join(out_dir, 'validity.csv')
    report.write(json_path, csv_path)
    manifest.outputs.update({'validity': json_path, 'validity_csv': csv_path})
    _print_report(report)
    return _finish(manifest, out_dir, started)


def cmd_compare(config: PipelineConfig, inputs: Dict[str, Optional[str]], out_dir: str,
                options: dict) -> RunManifest:
    started = time.perf_counter()
    manifest = RunManifest.start('compare', config, inputs, options)
    cube, polygons, points = _load_scene(inputs)
    os.makedirs(out_dir, exist_ok=True)

    segmenter = MapGuidedSegmenter(config, options.get('progress', False))
    reports = compare_methods(segmenter, cube, polygons, points, runs=config.runs,
                              jobs=options.get('jobs', 1), progress=options.get('progress', False))
    json_path, csv_path = os.path.join(out_dir, 'comparison.json'), os.path.join(out_dir, 'comparison.csv')
    write_comparison(reports, json_path, csv_path)
    manifest.outputs.update({'comparison': json_path, 'comparison_csv': csv_path})
    if options.get('pdf'):
        pdf_path = os.path.join(out_dir, 'comparison.pdf')
        PDFReportGenerator().create_pdf_report(reports, pdf_path, config.to_dict())
        manifest.outputs['comparison_pdf'] = pdf_path
        print(f"📄 PDF report: {pdf_path}")
    for report in reports.values():
        _print_report(report)
    return _finish(manifest, out_dir, started)


def cmd_render(config: PipelineConfig, inputs: Dict[str, Optional[str]], out_dir: str,
               options: dict) -> RunManifest:
    started = time.perf_counter()
    manifest = RunManifest.start('render', config, inputs, options)
    cube = read_cube(*_cube_paths(inputs))
    os.makedirs(out_dir, exist_ok=True)
    if inputs.get('labels'):
        labels = read_label_map(inputs['labels'], cube.height, cube.width)
        stem = os.path.splitext(os.path.basename(inputs['labels']))[0]
        png = os.path.join(out_dir, f'{stem}.png')
        write_label_map(labels, os.path.join(out_dir, f'{stem}.raw'), png, config.render_seed)
        manifest.outputs['labels_png'] = png
        manifest.outputs['boundaries'] = render_boundaries(cube.data, labels,
                                                           os.path.join(out_dir, f'{stem}_boundaries.png'))
    if inputs.get('proportions'):
        for k, path in enumerate(render_proportions(read_proportions(inputs['proportions']), out_dir)):
            manifest.outputs[f'proportion_{k}'] = path
    if len(manifest.outputs) == 0:
        raise InputError('render needs --labels and/or --proportions')
    print(f"🖼️  Rendered {len(manifest.outputs)} image(s) to {out_dir}")
    return _finish(manifest, out_dir, started)


COMMANDS = {
    'hslic': cmd_hslic,
    'pipeline': cmd_pipeline,
    'evaluate': cmd_evaluate,
    'compare': cmd_compare,
    'render': cmd_render,
}


def _print_report(report: ValidityReport) -> None:
    flag = ' (single run)' if report.single_run else ''
    print(f"📊 {report.method}{flag}: "
          f"Dunn {report.mean('dunn'):.4f} ± {report.std('dunn'):.4f}, "
          f"DB {report.mean('db'):.4f} ± {report.std('db'):.4f}, "
          f"Silhouette {report.mean('silhouette'):.4f} ± {report.std('silhouette'):.4f}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON file of configuration overrides')
    common.add_argument('--preset', choices=sorted(PRESETS), help='named parameter set')
    common.add_argument('--out-dir', default=os.getenv('HSSEG_OUT_DIR', 'outputs'))
    common.add_argument('--seed', type=int)
    common.add_argument('--runs', type=int)
    common.add_argument('--exact-metrics', action='store_true', help='validity indices on every pixel')
    common.add_argument('--min-overlap', type=float, help='superpixel/polygon overlap fraction needed to merge')
    common.add_argument('--min-segment', type=int, help='clean-up threshold in pixels')
    common.add_argument('--log-level', default=os.getenv('HSSEG_LOG_LEVEL', 'INFO'))
    common.add_argument('--no-progress', action='store_true')

    scene = argparse.ArgumentParser(add_help=False)
    scene.add_argument('--cube', required=True, help='ENVI header (.hdr)')
    scene.add_argument('--data', help='binary data file (default: header name with .img)')

    guidance = argparse.ArgumentParser(add_help=False)
    guidance.add_argument('--polygons', help='GeoJSON FeatureCollection of tagged polygons')
    guidance.add_argument('--control-points', help='CSV with map_x, map_y, pixel_col, pixel_row')

    parser = argparse.ArgumentParser(prog='hsseg', description='Map-guided hyperspectral superpixel segmentation')
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('hslic', parents=[common, scene, guidance], help='HSLIC (and HSLIC+OSM) superpixels')
    pipeline = sub.add_parser('pipeline', parents=[common, scene, guidance], help='full three-stage pipeline')
    pipeline.add_argument('--jobs', type=int, default=1, help='parallel evaluation replicas')
    evaluate = sub.add_parser('evaluate', parents=[common, scene], help='score an existing label map')
    evaluate.add_argument('--labels', required=True, help='raw little-endian u32 label map')
    compare = sub.add_parser('compare', parents=[common, scene, guidance], help='compare all methods')
    compare.add_argument('--jobs', type=int, default=1)
    compare.add_argument('--pdf', action='store_true', help='also write comparison.pdf')
    render = sub.add_parser('render', parents=[common, scene], help='render label or proportion maps')
    render.add_argument('--labels')
    render.add_argument('--proportions', help='ENVI header of a proportion map')
    sub.add_parser('demo', parents=[common], help='run the pipeline on a synthetic scene')
    replay = sub.add_parser('replay', help='re-run a recorded manifest')
    replay.add_argument('manifest')
    replay.add_argument('--out-dir', help='default: the directory holding the manifest')
    replay.add_argument('--log-level', default=os.getenv('HSSEG_LOG_LEVEL', 'INFO'))
    replay.add_argument('--no-progress', action='store_true')
    return parser


def config_from_args(args, extra: Optional[dict] = None) -> PipelineConfig:
    overrides = dict(extra or {})
    overrides.update({
        'seed': args.seed,
        'runs': args.runs,
        'min_overlap': args.min_overlap,
        'min_segment': args.min_segment,
        'exact_metrics': True if args.exact_metrics else None,
    })
    return load_config(args.config, args.preset, overrides)


def _inputs_from_args(args) -> Dict[str, Optional[str]]:
    return {
        'cube': getattr(args, 'cube', None),
        'cube_data': getattr(args, 'data', None) or (
            os.path.splitext(args.cube)[0] + '.img' if getattr(args, 'cube', None) else None),
        'polygons': getattr(args, 'polygons', None),
        'control_points': getattr(args, 'control_points', None),
        'labels': getattr(args, 'labels', None),
        'proportions': getattr(args, 'proportions', None),
    }


def _dispatch(args, progress: bool) -> RunManifest:
    if args.command == 'replay':
        manifest = replay_manifest(args.manifest)
        if manifest.command not in COMMANDS:
            raise InputError(f'manifest records unknown command {manifest.command!r}')
        out_dir = args.out_dir or os.path.dirname(os.path.abspath(args.manifest))
        print(f"🔁 Replaying '{manifest.command}' into {out_dir}")
        config = PipelineConfig.from_dict(manifest.config)
        options = dict(manifest.options, progress=progress)
        return COMMANDS[manifest.command](config, manifest.inputs, out_dir, options)

    if args.command == 'demo':
        inputs = write_demo_inputs(os.path.join(args.out_dir, 'inputs'), seed=args.seed or 0)
        print(f"🧪 Demo scene written to {os.path.dirname(inputs['cube'])}")
        config = config_from_args(args, None if args.config or args.preset else DEMO_OVERRIDES)
        return cmd_pipeline(config, inputs, args.out_dir, {'progress': progress, 'jobs': 1})

    config = config_from_args(args)
    options = {'jobs': getattr(args, 'jobs', 1), 'pdf': getattr(args, 'pdf', False)}
    manifest = COMMANDS[args.command](config, _inputs_from_args(args), args.out_dir,
                                      dict(options, progress=progress))
    return manifest


def main(argv=None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    progress = not args.no_progress and sys.stderr.isatty()

    print(f"🚀 hsseg {args.command}")
    try:
        manifest = _dispatch(args, progress)
    except InputError as e:
        print(f"❌ Input error: {e}")
        return 2
    except OSError as e:
        print(f"❌ Cannot access {e.filename or 'a file'}: {e.strerror or e}")
        return 2
    except DegenerateError as e:
        print(f"❌ Numerically undefined result: {e}")
        return 3
    print(f"✅ Done in {manifest.timings.get('total', 0.0):.1f}s; manifest: {manifest.outputs.get('manifest')}")
    return 0


if __name__ == '__main__':
    sys.exit(main())
