#!/usr/bin/env python3
"""
Tests for the semi-supervised partial-membership unmixing sampler
"""

import numpy as np

from errors import InputError
from hsio import HsiCube
from spmlda import (SPMLDA, Endmember, PartialLabelSet, SamplerParams, init_endmembers, likelihood_trend_holds,
                    log_likelihood, moving_average, offset_mass, partial_labels_from_tags, project_to_allowed,
                    run_spmlda)
from synthetic import two_region_cube, two_region_superpixels, two_region_truth
from testkit import raises, run_tests

SPECTRA = [[1.0, 2.0, 3.0, 4.0, 5.0], [5.0, 4.0, 3.0, 2.0, 1.0]]


def _rmse_up_to_swap(proportions, truth):
    straight = np.sqrt(np.mean((proportions - truth) ** 2))
    swapped = np.sqrt(np.mean((proportions[:, :, ::-1] - truth) ** 2))
    return min(straight, swapped)


def _noisy_two_region(seed, noise=0.05, size=16):
    clean = two_region_cube(size, size, SPECTRA)
    rng = np.random.default_rng(100 + seed)
    return HsiCube(clean.data + rng.normal(0.0, noise, clean.data.shape))


def test_projection_caps_offset_mass():
    z = np.array([[0.5, 0.3, 0.2], [0.96, 0.02, 0.02], [0.0, 0.5, 0.5]])
    allowed = np.array([[True, False, False]] * 3)
    projected = project_to_allowed(z, allowed, 0.05)
    assert np.allclose(projected.sum(axis=1), 1.0)
    assert np.all(offset_mass(projected, allowed) <= 0.05 + 1e-12)
    # already within the cap: untouched
    assert np.array_equal(projected[1], z[1])
    # off-set entries keep their ratio
    assert np.isclose(projected[0, 1] / projected[0, 2], 1.5)
    # no in-set mass: the in-set share is spread uniformly
    assert np.isclose(projected[2, 0], 0.95)


def test_projection_leaves_unlabelled_rows():
    z = np.random.default_rng(0).dirichlet(np.ones(4), size=10)
    assert np.array_equal(project_to_allowed(z, np.ones((10, 4), dtype=bool), 0.0), z)


def test_partial_labels_from_tags():
    labels = partial_labels_from_tags({3: 'road', 0: 'building', 5: 'building'}, M=4)
    assert labels.allowed == {3: frozenset([1]), 0: frozenset([0]), 5: frozenset([0])}
    assert labels.endmember_tags == {0: 'building', 1: 'road'}

    mapped = partial_labels_from_tags({1: 'building', 2: 'grass'}, M=4, class_endmembers={'building': [2, 3]})
    assert mapped.allowed[1] == frozenset([2, 3])
    assert mapped.allowed[2] == frozenset([0])

    raises(InputError, partial_labels_from_tags, {0: 'a', 1: 'b', 2: 'c'}, 2)
    raises(InputError, PartialLabelSet({9: frozenset([0])}).validate, 2, 4)
    raises(InputError, PartialLabelSet({0: frozenset([5])}).validate, 2, 4)


def test_sampler_params_validation():
    raises(InputError, SamplerParams, M=0)
    raises(InputError, SamplerParams, M=2, epsilon=-0.1)
    raises(InputError, SamplerParams, M=2, T=10, burn_in=10)
    raises(InputError, SamplerParams, M=2, init_membership='random')
    assert SamplerParams(M=2, T=200).effective_burn_in == 100


def test_init_endmembers():
    cube = two_region_cube(8, 8, SPECTRA)
    endmembers = init_endmembers(cube, 2, seed=0)
    means = sorted(tuple(e.mu) for e in endmembers)
    assert np.allclose(means, sorted(tuple(s) for s in SPECTRA))
    assert all((e.sigma2 > 0).all() for e in endmembers)
    raises(InputError, init_endmembers, cube, 3)


def test_endmember_validation():
    raises(InputError, Endmember, [1.0, 2.0], [0.0, 1.0])
    raises(InputError, Endmember, [1.0, 2.0], [1.0])


def test_noiseless_recovery():
    cube = two_region_cube(16, 16, SPECTRA)
    superpixels = two_region_superpixels(16, 16)
    truth = two_region_truth(16, 16)
    good = 0
    for seed in range(10):
        proportions, _ = run_spmlda(cube, superpixels, None, SamplerParams(M=2, T=200, seed=seed))
        assert np.allclose(proportions.sum(axis=2), 1.0)
        if _rmse_up_to_swap(proportions, truth) <= 0.05:
            good += 1
    assert good >= 9, good


def test_partial_label_respects_epsilon():
    cube = _noisy_two_region(0)
    superpixels = two_region_superpixels(16, 16)
    left = sorted(set(superpixels[:, :8].ravel().tolist()))
    labels = PartialLabelSet({s: frozenset([1]) for s in left[:2]}, {1: 'building'})
    result = SPMLDA(SamplerParams(M=2, epsilon=0.05, T=40, seed=3)).run(cube, superpixels, labels)
    assert result.retained_samples == 20
    assert result.max_offset_mass <= 0.05 + 1e-9
    labelled = np.isin(superpixels, left[:2])
    assert np.all(result.proportions[labelled][:, 0] <= 0.05 + 1e-9)
    assert result.endmembers[1].tag == 'building'


def test_single_endmember():
    cube = _noisy_two_region(1, size=8)
    superpixels = two_region_superpixels(8, 8)
    params = SamplerParams(M=1, T=5)
    result = SPMLDA(params).run(cube, superpixels)
    assert np.all(result.proportions == 1.0)

    X = cube.pixels()
    e = result.endmembers[0]
    closed_form = float(np.sum(-0.5 * (np.log(2 * np.pi * e.sigma2) + (X - e.mu) ** 2 / e.sigma2)))
    value = log_likelihood(cube, superpixels, result.proportions, result.endmembers, params)
    assert np.isclose(value, closed_form, rtol=1e-12)


def test_log_likelihood_falls_with_inflated_variance():
    cube = _noisy_two_region(4)
    superpixels = two_region_superpixels(16, 16)
    params = SamplerParams(M=2, T=20, seed=4)
    result = SPMLDA(params).run(cube, superpixels)
    fitted = log_likelihood(cube, superpixels, result.proportions, result.endmembers, params)

    previous = fitted
    for variance in (1e3, 1e4, 1e5):
        wide = [Endmember(e.mu, np.full_like(e.sigma2, variance), e.tag) for e in result.endmembers]
        value = log_likelihood(cube, superpixels, result.proportions, wide, params)
        assert np.isfinite(value) and value < previous
        previous = value


def test_log_likelihood_ignores_endmember_order():
    cube = _noisy_two_region(5)
    superpixels = two_region_superpixels(16, 16)
    params = SamplerParams(M=3, T=20, seed=5)
    result = SPMLDA(params).run(cube, superpixels)
    order = [2, 0, 1]
    straight = log_likelihood(cube, superpixels, result.proportions, result.endmembers, params)
    permuted = log_likelihood(cube, superpixels, result.proportions[:, :, order],
                              [result.endmembers[k] for k in order], params)
    assert np.isclose(straight, permuted, rtol=1e-10)
    with_pi = log_likelihood(cube, superpixels, result.proportions, result.endmembers, params, pi=result.pi)
    permuted_pi = log_likelihood(cube, superpixels, result.proportions[:, :, order],
                                 [result.endmembers[k] for k in order], params, pi=result.pi[:, order])
    assert np.isclose(with_pi, permuted_pi, rtol=1e-10)


def test_log_likelihood_trends_upward():
    superpixels = two_region_superpixels(16, 16)
    improved = 0
    for seed in range(3):
        params = SamplerParams(M=2, T=60, seed=seed, init_membership='uniform')
        result = SPMLDA(params).run(_noisy_two_region(seed), superpixels)
        trace = result.log_likelihood
        assert len(trace) == 60 and np.all(np.isfinite(trace))
        if np.mean(trace[params.effective_burn_in:]) > np.mean(trace[:10]):
            improved += 1
    assert improved >= 2


def test_moving_average_settles_after_burn_in():
    superpixels = two_region_superpixels(16, 16)
    settled = 0
    for seed in range(3):
        params = SamplerParams(M=2, T=200, seed=seed)
        trace = SPMLDA(params).run(_noisy_two_region(seed), superpixels).log_likelihood
        assert len(moving_average(trace[params.effective_burn_in:])) == 91
        if likelihood_trend_holds(trace, params.effective_burn_in):
            settled += 1
    assert settled >= 2


def test_likelihood_trend_tolerance():
    assert np.allclose(moving_average([1.0, 2.0, 3.0, 4.0], window=2), [1.5, 2.5, 3.5])
    assert len(moving_average([1.0, 2.0], window=10)) == 0
    # noise around a level is not a decrease
    assert likelihood_trend_holds([0.0, 1.0] * 50, burn_in=0)
    assert likelihood_trend_holds(np.linspace(-50.0, 0.0, 100), burn_in=20)
    assert likelihood_trend_holds([5.0] * 8, burn_in=2)
    # a collapse well beyond the spread of the trace is
    crash = [0.0] * 10 + [-100.0] * 10
    assert not likelihood_trend_holds(crash, burn_in=0, window=2)
    assert likelihood_trend_holds(crash, burn_in=0, window=2, tolerance=1.0)


def test_determinism_and_result_fields():
    cube = _noisy_two_region(2)
    superpixels = two_region_superpixels(16, 16)
    params = SamplerParams(M=2, T=20, seed=5)
    first = SPMLDA(params).run(cube, superpixels)
    second = SPMLDA(params).run(cube, superpixels)
    assert np.array_equal(first.proportions, second.proportions)
    assert first.log_likelihood == second.log_likelihood
    assert first.pi.shape == (int(superpixels.max()) + 1, 2)
    assert np.allclose(first.pi.sum(axis=1), 1.0)
    assert len(first.acceptance) == 20
    assert all(0.0 <= a <= 1.0 for a in first.acceptance)


def test_input_errors():
    cube = _noisy_two_region(0, size=8)
    params = SamplerParams(M=2, T=2)
    raises(InputError, SPMLDA(params).run, cube, np.zeros((4, 4), dtype=int))
    gappy = two_region_superpixels(8, 8) * 2
    raises(InputError, SPMLDA(params).run, cube, gappy)
    raises(InputError, SPMLDA(params).run, cube, two_region_superpixels(8, 8),
           PartialLabelSet({99: frozenset([0])}))


if __name__ == '__main__':
    run_tests(globals(), 'spmlda')
