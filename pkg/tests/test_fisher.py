import math

import numpy as np
import pytest

from conftest import random_theta
from eisdesign.ecm import PARAM_NAMES, REFERENCE, EcmParams
from eisdesign.errors import DomainError
from eisdesign.fisher import (
    contribution_curves, ellipsoid_volume, fim, fim_contribution, fim_monolithic, log_ellipsoid_volume,
    relative_improvement, report_from_fim,
)
from eisdesign.noise import NoiseModel
from eisdesign.synth import logspace_grid


def test_contributions_symmetric_psd(model):
    rng = np.random.default_rng(11)
    for _ in range(100):
        th = EcmParams.from_array(random_theta(rng))
        w = 2 * math.pi * 10 ** rng.uniform(-2, 4)
        for coords in ("polar", "cartesian"):
            c = fim_contribution(th, w, model, coords)
            assert c.shape == (10, 10)
            assert np.allclose(c, c.T, rtol=1e-12, atol=0)
            ev = np.linalg.eigvalsh(c)
            assert ev[0] >= -1e-10 * ev[-1]


def test_contribution_shapes(model):
    f = np.logspace(-2, 4, 601)
    c = contribution_curves(REFERENCE, f, model)
    p = dict(zip(PARAM_NAMES, c.T))
    # grows towards low frequency; above ~30 Hz |Z| falls faster than |Z_W| and a
    # ripple of ~1e-5 of the peak appears, so the check stops at 10 Hz
    low = f <= 10
    assert np.all(np.diff(p["q_w"][low]) < 0)
    peak = {n: f[np.argmax(v)] for n, v in p.items()}
    assert peak["q_hf"] >= 1e3 and peak["phi_hf"] >= 1e3
    # R_s weighs most where |Z| is smallest (~430 Hz), still above every arc and Warburg peak
    assert peak["r_s"] > max(v for n, v in peak.items() if n not in ("r_s", "q_hf", "phi_hf"))
    assert np.allclose(c.max(axis=0), 1.0)
    raw = contribution_curves(REFERENCE, f, model, normalize=False)
    assert np.allclose(raw / raw.max(axis=0), c)


def test_block_sum_matches_monolithic(model, grid):
    for coords in ("polar", "cartesian"):
        a = fim(REFERENCE, grid, model, coords).fim
        b = fim_monolithic(REFERENCE, grid, model, coords)
        d = 1 / np.sqrt(np.diag(a))
        assert np.max(np.abs((a - b) * np.outer(d, d))) <= 1e-10


def test_doubling_sigma_quarters_jacobian_part(grid):
    a = fim(REFERENCE, grid, NoiseModel.uniform(1, 1), trace_term=False).fim
    b = fim(REFERENCE, grid, NoiseModel.uniform(2, 2), trace_term=False).fim
    assert np.allclose(b, a / 4, rtol=1e-12, atol=0)
    # the trace part depends on Q only through Q^-1 dQ and is scale free
    ta = fim(REFERENCE, grid, NoiseModel.uniform(1, 1)).fim - a
    tb = fim(REFERENCE, grid, NoiseModel.uniform(2, 2)).fim - b
    assert np.allclose(ta, tb, rtol=1e-8, atol=1e-12 * np.abs(ta).max())


def test_trace_term_is_small_but_present(model, grid):
    with_t = fim(REFERENCE, grid, model).crlb
    without = fim(REFERENCE, grid, model, trace_term=False).crlb
    rel = np.abs(with_t / without - 1)
    assert np.all(rel > 0) and np.all(rel < 0.05)


def test_report_invariants(model, grid):
    rep = fim(REFERENCE, grid, model)
    assert np.allclose(rep.fim, rep.fim.T)
    assert np.all(np.diff(rep.eigenvalues) >= 0) and rep.eigenvalues[0] > 0
    assert np.all(rep.crlb > 0)
    assert 0 < rep.ellipsoid_volume < math.inf
    assert rep.lambda_min == rep.eigenvalues[0]
    assert not rep.singular
    assert rep.a_optimal == pytest.approx(np.sum(rep.crlb))
    d = rep.to_dict()
    assert set(d["crlb"]) == set(PARAM_NAMES) and len(d["freq_hz"]) == 61


def test_inverse_accuracy(model, grid):
    rep = fim(REFERENCE, grid, model)
    d = np.sqrt(np.diag(rep.fim))
    # identity in the equilibrated frame
    I = (rep.fim / np.outer(d, d)) @ (rep.fim_inverse * np.outer(d, d))
    assert np.allclose(I, np.eye(10), atol=1e-8)


def test_ellipsoid_volume_examples():
    assert ellipsoid_volume([1.0, 1.0]) == pytest.approx(math.pi)
    assert ellipsoid_volume([1.0, 1.0, 1.0]) == pytest.approx(4 * math.pi / 3)
    assert ellipsoid_volume([4.0, 1.0]) == pytest.approx(math.pi / 2)
    assert log_ellipsoid_volume([1.0] * 4) == pytest.approx(math.log(math.pi**2 / 2))
    for bad in ([1.0, 0.0], [1.0, -2.0], []):
        with pytest.raises(DomainError):
            ellipsoid_volume(bad)


def test_adding_frequency_never_lowers_lambda_min(model):
    # raw eigenvalues span ~14 decades, below eigvalsh resolution at the bottom; the
    # Loewner argument holds under any fixed congruence, here D F D with D = diag(theta)
    D = np.diag(REFERENCE.to_array())

    def lam_min(w):
        return np.linalg.eigvalsh(D @ fim(REFERENCE, w, model).fim @ D)[0]

    rng = np.random.default_rng(2)
    base = 2 * math.pi * np.logspace(-2, 4, 15)
    lam = lam_min(base)
    for _ in range(20):
        new = lam_min(np.append(base, 2 * math.pi * 10 ** rng.uniform(-2, 4)))
        assert new >= lam - 1e-12 * abs(lam)


def test_polar_and_cartesian_crlb_agree(model, grid):
    a = fim(REFERENCE, grid, model, "polar").crlb
    b = fim(REFERENCE, grid, model, "cartesian").crlb
    assert np.max(np.abs(b / a - 1)) <= 0.01


def test_unidentifiable_parameter_rejected(grid):
    F = fim(REFERENCE, grid, NoiseModel.uniform()).fim.copy()
    F[3, :] = F[:, 3] = 0.0
    with pytest.raises(DomainError):
        report_from_fim(F, REFERENCE, grid)


def test_relative_improvement_sign(model):
    coarse = fim(REFERENCE, logspace_grid(1e-2, 1e4, 3), model)
    fine = fim(REFERENCE, logspace_grid(1e-2, 1e4, 10), model)
    assert np.all(relative_improvement(coarse, fine) > 0)
