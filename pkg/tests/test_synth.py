import math

import numpy as np
import pytest
from scipy import stats

from eisdesign.ecm import REFERENCE, z_eq
from eisdesign.errors import DomainError
from eisdesign.noise import NoiseModel
from eisdesign.synth import (
    FrequencyGrid, ImpedanceSpectrum, VirtualInstrument, logspace_grid, logspace_n, measure, measure_sweep,
)


def test_logspace_grid_examples():
    g = logspace_grid(1e-2, 1e4, 10)
    assert len(g) == 61
    assert g.freqs[10] == 0.1
    assert g.freqs[0] == 1e-2 and g.freqs[-1] == 1e4
    g = logspace_grid(1, 10, 1)
    assert np.allclose(g.omegas, [2 * math.pi, 20 * math.pi], rtol=1e-15)
    with pytest.raises(ValueError):
        logspace_grid(1, 10.5, 1)
    assert len(logspace_n(1e-2, 1e4, 17)) == 17


def test_grid_validation():
    with pytest.raises(ValueError):
        FrequencyGrid(np.array([1.0, 100.0]), 1.0, 10.0)
    g = logspace_grid(1, 100, 2).with_adjusted(1)
    assert g.free == [0, 2, 3, 4]


def test_noiseless_measurement_is_exact(model, grid):
    spec = measure_sweep(REFERENCE, grid, model, 3, add_noise=False)
    assert np.array_equal(spec.z, z_eq(REFERENCE, grid.omegas))
    p = measure(REFERENCE, 2 * math.pi, NoiseModel.noiseless(), 1)
    assert p.z == z_eq(REFERENCE, 2 * math.pi)
    with pytest.raises(DomainError):
        measure(REFERENCE, 0.0, model, 1)


def test_determinism(model, grid):
    a = measure_sweep(REFERENCE, grid, model, 11)
    b = measure_sweep(REFERENCE, grid, model, 11)
    c = measure_sweep(REFERENCE, grid, model, 12)
    assert np.array_equal(a.z, b.z)
    assert not np.array_equal(a.z, c.z)
    assert measure(REFERENCE, 3.0, model, 5) == measure(REFERENCE, 3.0, model, 5)


def test_permuted_grid_gives_same_points(model, grid):
    perm = np.random.default_rng(0).permutation(len(grid))
    a = measure_sweep(REFERENCE, grid, model, 4)
    b = measure_sweep(REFERENCE, grid.omegas[perm], model, 4).sorted()
    assert np.array_equal(a.z, b.z)


def test_magnitude_spread(model):
    w = 2 * math.pi
    rho = abs(z_eq(REFERENCE, w))
    draws = np.array([abs(measure(REFERENCE, w, model, s).z) for s in range(100_000)])
    assert draws.std() == pytest.approx(rho * 0.01 / 3, rel=0.02)


def test_errors_independent_across_frequencies(model):
    g = logspace_grid(1, 100, 2)
    z0 = z_eq(REFERENCE, g.omegas)
    err = np.array([np.abs(measure_sweep(REFERENCE, g, model, s).z) / np.abs(z0) - 1 for s in range(10_000)])
    corr = np.corrcoef(err.T)
    off = corr[~np.eye(len(g), dtype=bool)]
    assert np.max(np.abs(off)) <= 0.03


def test_cartesian_errors_practically_normal(model, grid):
    z0 = z_eq(REFERENCE, grid.omegas)
    res = np.array([measure_sweep(REFERENCE, grid, model, s).z - z0 for s in range(2000)])
    passed = 0
    for k in range(len(grid)):
        p_re = stats.shapiro(res[:, k].real).pvalue
        p_im = stats.shapiro(res[:, k].imag).pvalue
        passed += p_re > 0.01 and p_im > 0.01
    assert passed >= 0.95 * len(grid)


def test_low_frequency_tail_slope(model):
    # the second Zarc (f_c ~ 0.7 Hz) still bends the locus in the 0.01-0.1 Hz decade
    # (slope ~ -0.80); the 45 degree Warburg line is reached one decade lower
    spec = measure_sweep(REFERENCE, logspace_grid(1e-3, 1e-2, 10), model, 0, add_noise=False)
    slope = np.polyfit(spec.re, spec.im, 1)[0]
    assert slope == pytest.approx(-1.0, rel=0.02)


def test_spectrum_views(model, grid):
    spec = measure_sweep(REFERENCE, grid, model, 0)
    assert spec.cov_polar.shape == (61, 2, 2)
    assert spec.cov_cart.shape == (61, 2, 2)
    assert np.allclose(spec.sigma_rho, spec.rho * 0.01 / 3)
    sub = spec.subset([0, 5])
    assert len(sub) == 2 and sub.z[1] == spec.z[5]
    sc = spec.scaled(2.0)
    assert np.allclose(sc.z, 2 * spec.z) and np.allclose(sc.sigma_rho, 2 * spec.sigma_rho)
    with pytest.raises(ValueError):
        ImpedanceSpectrum([1.0, 2.0], [1.0], 0.0, 0.0)


def test_instrument_repeats_draw_fresh_noise(model):
    inst = VirtualInstrument(REFERENCE, model, seed=9)
    a = inst.measure(10.0)
    b = inst.measure(10.0)
    assert a.z != b.z
    first = VirtualInstrument(REFERENCE, model, seed=9).sweep(np.array([10.0, 20.0]))
    assert first.z[0] == a.z
    spec = first.with_point(0, b)
    assert spec.z[0] == b.z and spec.z[1] == first.z[1]
