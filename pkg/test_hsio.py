#!/usr/bin/env python3
"""
Tests for cube, polygon, control point, configuration and output I/O
"""

import json
import os
import tempfile

import numpy as np

from errors import InputError
from hsio import (ControlPoints, HsiCube, PipelineConfig, load_config, read_control_points, read_cube,
                  read_label_map, read_polygons, read_proportions, write_config, write_control_points,
                  write_cube, write_endmembers, write_label_map, write_polygons, write_proportions)
from spmlda import Endmember
from testkit import raises, run_tests


def _write_raw_cube(directory, name, values, lines, samples, bands, interleave, code=4, dtype='<f4',
                    extra=''):
    header = os.path.join(directory, f'{name}.hdr')
    with open(header, 'w') as f:
        f.write('ENVI\n'
                f'samples = {samples}\nlines = {lines}\nbands = {bands}\n'
                f'header offset = 0\nfile type = ENVI Standard\ndata type = {code}\n'
                f'interleave = {interleave}\nbyte order = 0\n{extra}')
    np.asarray(values, dtype=dtype).tofile(os.path.join(directory, f'{name}.img'))
    return header


def test_bsq_single_band():
    with tempfile.TemporaryDirectory() as tmp:
        cube = read_cube(_write_raw_cube(tmp, 'c', [1, 2, 3, 4], 2, 2, 1, 'bsq'))
        assert cube.data.shape == (2, 2, 1)
        assert cube.data[0, 0, 0] == 1 and cube.data[1, 1, 0] == 4
        bip = read_cube(_write_raw_cube(tmp, 'd', [1, 2, 3, 4], 2, 2, 1, 'bip'))
        assert np.array_equal(cube.data, bip.data)


def test_bil_layout():
    with tempfile.TemporaryDirectory() as tmp:
        cube = read_cube(_write_raw_cube(tmp, 'c', [10, 20, 30, 40], 2, 1, 2, 'bil'))
        assert cube.data[0, 0, 0] == 10 and cube.data[0, 0, 1] == 20
        assert cube.data[1, 0, 0] == 30 and cube.data[1, 0, 1] == 40


def test_interleaves_read_identically():
    rng = np.random.default_rng(3)
    expected = rng.normal(size=(3, 4, 5))
    layouts = {
        'bsq': expected.transpose(2, 0, 1),
        'bil': expected.transpose(0, 2, 1),
        'bip': expected,
    }
    with tempfile.TemporaryDirectory() as tmp:
        for interleave, raw in layouts.items():
            header = _write_raw_cube(tmp, interleave, raw.ravel(), 3, 4, 5, interleave, code=5, dtype='<f8')
            assert np.array_equal(read_cube(header).data, expected), interleave


def test_round_trip_is_value_exact():
    rng = np.random.default_rng(0)
    cube = HsiCube(rng.normal(size=(4, 3, 6)), wavelengths=np.linspace(430.0, 860.0, 6))
    with tempfile.TemporaryDirectory() as tmp:
        for interleave in ('bsq', 'bil', 'bip'):
            header = os.path.join(tmp, f'{interleave}.hdr')
            data_path = write_cube(cube, header, interleave=interleave)
            again = read_cube(header, data_path)
            assert np.array_equal(again.data, cube.data)
            assert np.allclose(again.wavelengths, cube.wavelengths)


def test_big_endian_data():
    with tempfile.TemporaryDirectory() as tmp:
        header = os.path.join(tmp, 'be.hdr')
        with open(header, 'w') as f:
            f.write('ENVI\nsamples = 2\nlines = 1\nbands = 1\ndata type = 2\ninterleave = bsq\nbyte order = 1\n')
        np.array([1, 258], dtype='>i2').tofile(os.path.join(tmp, 'be.img'))
        assert read_cube(header).data.ravel().tolist() == [1.0, 258.0]


def test_malformed_inputs():
    with tempfile.TemporaryDirectory() as tmp:
        header = _write_raw_cube(tmp, 'short', [1, 2, 3], 2, 2, 1, 'bsq')
        assert 'size mismatch' in str(raises(InputError, read_cube, header))

        missing = os.path.join(tmp, 'missing.hdr')
        with open(missing, 'w') as f:
            f.write('ENVI\nsamples = 2\nlines = 2\ndata type = 4\ninterleave = bsq\n')
        assert 'bands' in str(raises(InputError, read_cube, missing))

        bad = _write_raw_cube(tmp, 'nan', [1, 2, np.nan, 4], 2, 2, 1, 'bsq')
        assert '(1, 0, 0)' in str(raises(InputError, read_cube, bad))

        raises(InputError, read_cube, os.path.join(tmp, 'nowhere.hdr'))


def test_cube_invariants():
    cube = HsiCube(np.ones((2, 3)))
    assert (cube.height, cube.width, cube.bands) == (2, 3, 1)
    assert not cube.data.flags.writeable
    raises(InputError, HsiCube, np.zeros((0, 3, 2)))
    raises(InputError, HsiCube, np.array([[[np.inf]]]))
    raises(InputError, HsiCube, np.ones((2, 2, 3)), [1.0, 2.0])


def _feature(coordinates, properties, kind='Polygon'):
    return {'type': 'Feature', 'properties': properties, 'geometry': {'type': kind, 'coordinates': coordinates}}


def _write_collection(path, features):
    with open(path, 'w') as f:
        json.dump({'type': 'FeatureCollection', 'features': features}, f)
    return path


def test_read_polygons():
    square = [[[0, 0], [2, 0], [2, 2], [0, 2], [0, 0]]]
    with tempfile.TemporaryDirectory() as tmp:
        polygons = read_polygons(_write_collection(os.path.join(tmp, 'one.geojson'),
                                                   [_feature(square, {'class': 'building'})]))
        assert len(polygons) == 1
        record = next(iter(polygons))
        assert record.tag == 'building' and record.polygon_id == 0
        assert len(record.rings) == 1 and len(record.rings[0]) == 4

        empty = read_polygons(_write_collection(os.path.join(tmp, 'empty.geojson'), []))
        assert len(empty) == 0

        shifted = [[[1, 1], [3, 1], [3, 3], [1, 3]]]
        both = read_polygons(_write_collection(os.path.join(tmp, 'two.geojson'), [
            _feature(square, {'class': 'building', 'id': 7}),
            _feature(shifted, {'class': 'road', 'id': 3}),
        ]))
        assert both.tags == {7: 'building', 3: 'road'}


def test_polygon_with_hole():
    outer = [[0, 0], [10, 0], [10, 10], [0, 10], [0, 0]]
    hole = [[4, 4], [6, 4], [6, 6], [4, 6], [4, 4]]
    with tempfile.TemporaryDirectory() as tmp:
        polygons = read_polygons(_write_collection(os.path.join(tmp, 'hole.geojson'),
                                                   [_feature([outer, hole], {'class': 'courtyard'})]))
        assert len(next(iter(polygons)).rings) == 2


def test_rejected_polygons():
    with tempfile.TemporaryDirectory() as tmp:
        square = [[[0, 0], [2, 0], [2, 2], [0, 2]]]
        untagged = _write_collection(os.path.join(tmp, 'a.geojson'),
                                     [_feature(square, {'class': 'x'}), _feature(square, {})])
        assert 'feature 1' in str(raises(InputError, read_polygons, untagged))

        thin = _write_collection(os.path.join(tmp, 'b.geojson'),
                                 [_feature([[[0, 0], [1, 1], [0, 0]]], {'class': 'x'})])
        assert 'vertices' in str(raises(InputError, read_polygons, thin))

        line = _write_collection(os.path.join(tmp, 'c.geojson'),
                                 [_feature([[0, 0], [5, 5]], {'class': 'road'}, kind='LineString')])
        assert 'LineString' in str(raises(InputError, read_polygons, line))

        duplicate = _write_collection(os.path.join(tmp, 'd.geojson'), [
            _feature(square, {'class': 'x', 'id': 1}), _feature(square, {'class': 'y', 'id': 1})])
        raises(InputError, read_polygons, duplicate)

        lettered = _write_collection(os.path.join(tmp, 'e.geojson'), [
            _feature(square, {'class': 'x'}), _feature([[['a', 'b'], [0, 0], [4, 0], [0, 4]]], {'class': 'y'})])
        assert 'feature 1' in str(raises(InputError, read_polygons, lettered))

        short_vertex = _write_collection(os.path.join(tmp, 'f.geojson'),
                                         [_feature([[[0], [1, 0], [1, 1], [0, 1]]], {'class': 'x'})])
        raises(InputError, read_polygons, short_vertex)


def test_write_polygons_reads_back():
    with tempfile.TemporaryDirectory() as tmp:
        path = write_polygons([{'rings': [[(0, 0), (4, 0), (4, 3)]], 'class': 'building', 'id': 5}],
                              os.path.join(tmp, 'p.geojson'))
        record = next(iter(read_polygons(path)))
        assert record.polygon_id == 5 and record.tag == 'building'
        assert np.array_equal(record.rings[0], [[0, 0], [4, 0], [4, 3]])


def test_control_points():
    points = ControlPoints([[0, 0], [10, 0], [0, 10]], [[1, 2], [11, 2], [1, 12]])
    with tempfile.TemporaryDirectory() as tmp:
        again = read_control_points(write_control_points(points, os.path.join(tmp, 'gcp.csv')))
        assert np.array_equal(again.map_xy, points.map_xy)
        assert np.array_equal(again.pixel_cr, points.pixel_cr)

        partial = os.path.join(tmp, 'partial.csv')
        with open(partial, 'w') as f:
            f.write('map_x,map_y,pixel_col\n1,2,3\n')
        assert 'pixel_row' in str(raises(InputError, read_control_points, partial))


def test_label_map_bytes():
    with tempfile.TemporaryDirectory() as tmp:
        raw = os.path.join(tmp, 'one.raw')
        write_label_map(np.zeros((1, 1), dtype=np.int64), raw)
        with open(raw, 'rb') as f:
            assert f.read() == b'\x00\x00\x00\x00'

        raw = os.path.join(tmp, 'two.raw')
        write_label_map(np.array([[0, 0], [1, 1]]), raw)
        assert np.fromfile(raw, dtype='<u4').tolist() == [0, 0, 1, 1]
        assert np.array_equal(read_label_map(raw, 2, 2), [[0, 0], [1, 1]])
        raises(InputError, read_label_map, raw, 3, 3)


def test_label_render_is_deterministic():
    labels = np.array([[0, 1, 2], [2, 1, 0]])
    with tempfile.TemporaryDirectory() as tmp:
        pngs = []
        for name in ('a', 'b'):
            png = os.path.join(tmp, f'{name}.png')
            write_label_map(labels, os.path.join(tmp, f'{name}.raw'), png, seed=4)
            with open(png, 'rb') as f:
                pngs.append(f.read())
        assert pngs[0] == pngs[1]
        raises(InputError, write_label_map, labels, os.path.join(tmp, 'no', 'such', 'dir.raw'))


def test_proportions_and_endmembers():
    rng = np.random.default_rng(1)
    proportions = rng.dirichlet(np.ones(3), size=(4, 5))
    with tempfile.TemporaryDirectory() as tmp:
        header = os.path.join(tmp, 'proportions.hdr')
        data_path = write_proportions(proportions, header, ['building', None, None])
        assert os.path.getsize(data_path) == 4 * 5 * 3 * 4
        assert np.allclose(read_proportions(header), proportions, atol=1e-6)

        endmembers = [Endmember([1.0, 2.0], [0.1, 0.2], 'building'), Endmember([3.0, 4.0], [0.3, 0.4])]
        path = write_endmembers(endmembers, os.path.join(tmp, 'endmembers.csv'))
        with open(path) as f:
            lines = f.read().splitlines()
        assert lines[0] == 'tag,mu_0,mu_1,sigma2_0,sigma2_1'
        assert lines[1].startswith('building,1,2,')


def test_config_precedence():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'config.json')
        with open(path, 'w') as f:
            json.dump({'M': 5, 'seed': 3, 'min_segment': 40}, f)
        previous = os.environ.get('HSSEG_SEED')
        os.environ['HSSEG_SEED'] = '11'
        try:
            config = load_config(path, 'gulfport', {'min_segment': 12, 'runs': None})
        finally:
            if previous is None:
                del os.environ['HSSEG_SEED']
            else:
                os.environ['HSSEG_SEED'] = previous
        assert config.K_final == 7 and config.epsilon == 0.10
        assert config.M == 5
        assert config.seed == 11
        assert config.min_segment == 12
        assert config.runs == 10

        again = PipelineConfig.from_dict(json.load(open(write_config(config, os.path.join(tmp, 'out.json')))))
        assert again == config


def test_config_validation():
    raises(InputError, PipelineConfig().with_overrides, K=0)
    raises(InputError, PipelineConfig().with_overrides, epsilon=1.5)
    raises(InputError, PipelineConfig().with_overrides, n=4)
    assert 'unknown' in str(raises(InputError, PipelineConfig.from_dict, {'K': 10, 'typo': 1}))
    raises(InputError, load_config, None, 'indian_pines')
    raises(InputError, PipelineConfig().with_overrides, class_endmembers={'building': [9]})
    assert PipelineConfig().effective_burn_in == 100


if __name__ == '__main__':
    run_tests(globals(), 'hsio')
