import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eisdesign.ecm import REFERENCE, z_eq
from eisdesign.errors import UndefinedRegion
from eisdesign.noise import (
    ContourRegion, NoiseModel, cartesian_moments, cartesian_moments_derivatives, cov_cartesian_measured,
    cov_cartesian_true, cov_polar, is_positive_definite, sigma_polar,
)

CONTOUR = """\
# f_min f_max z_min z_max eps_rho_percent
1e-3  1e3  1e-2  1e2   1
1e3   1e6  0     inf   5
0     1e3  1e2   inf   2
eps_phi_deg = 0.5
"""


def _mc_cov(rho, phi, s_rho, s_phi, n, seed=0, chunk=2_500_000):
    rng = np.random.default_rng(seed)
    sx = sy = sxx = syy = sxy = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        r = rho + s_rho * rng.standard_normal(m)
        p = phi + s_phi * rng.standard_normal(m)
        x, y = r * np.cos(p), r * np.sin(p)
        sx += x.sum()
        sy += y.sum()
        sxx += (x * x).sum()
        syy += (y * y).sum()
        sxy += (x * y).sum()
        done += m
    mx, my = sx / n, sy / n
    return np.array([[sxx / n - mx * mx, sxy / n - mx * my], [sxy / n - mx * my, syy / n - my * my]])


def test_sigma_polar_uniform():
    m = NoiseModel.uniform(1.0, 1.0)
    s_rho, s_phi = sigma_polar(m, 10.0, 1.0)
    assert s_rho == pytest.approx(1 / 300)
    assert s_phi == pytest.approx(math.radians(1) / 3)
    assert sigma_polar(m, 10.0, 0.0)[0] == 0.0


def test_contour_lookup_and_errors():
    m = NoiseModel.from_text(CONTOUR)
    assert m.eps_phi == pytest.approx(math.radians(0.5))
    assert m.eps_rho(10.0, 1.0) == pytest.approx(0.01)
    assert m.eps_rho(1e4, 1.0) == pytest.approx(0.05)
    assert sigma_polar(m, 1e4, 2.0)[0] == pytest.approx(2.0 * 0.05 / 3)
    assert m.eps_rho(1.0, 500.0) == pytest.approx(0.02)
    with pytest.raises(UndefinedRegion):
        m.eps_rho(1.0, 1e-4)
    with pytest.raises(UndefinedRegion):
        m.eps_rho(np.array([1.0, 1.0]), np.array([1.0, 1e-4]))
    again = NoiseModel.from_text(m.to_text())
    assert again == m and again.identifier == m.identifier


def test_contour_parse_errors(tmp_path):
    with pytest.raises(ValueError):
        NoiseModel.from_text("1 2 3\neps_phi_deg = 1\n")
    with pytest.raises(ValueError):
        NoiseModel.from_text("1 2 3 4 5\n")
    with pytest.raises(ValueError):
        ContourRegion(1.0, 1.0, 0.0, 1.0, 0.01)
    p = tmp_path / "contour.txt"
    p.write_text(CONTOUR)
    assert NoiseModel.load(p) == NoiseModel.from_text(CONTOUR)


def test_cov_polar_block():
    q = cov_polar(NoiseModel.uniform(), 10.0, 1.0)
    assert q[0, 0] == pytest.approx((1 / 300) ** 2)
    assert q[1, 1] == pytest.approx((math.radians(1) / 3) ** 2)
    assert q[0, 1] == 0.0 and q[1, 0] == 0.0
    assert is_positive_definite(q)


def test_measured_small_phase_limit():
    phi = 0.7
    q = cov_cartesian_measured(2.0, phi, 0.01, 1e-7)
    assert q[0, 0] == pytest.approx(1e-4 * math.cos(phi) ** 2, rel=1e-6)
    assert q[0, 1] == pytest.approx(1e-4 * math.sin(phi) * math.cos(phi), rel=1e-6)
    assert cov_cartesian_measured(2.0, 0.0, 0.01, 0.01)[0, 1] == 0.0


def test_measured_and_true_forms_vs_monte_carlo():
    rho, phi, s_rho, s_phi = 1.0, -math.pi / 4, 1 / 300, math.pi / 540
    mc = _mc_cov(rho, phi, s_rho, s_phi, 10**7)
    for q in (cov_cartesian_measured(rho, phi, s_rho, s_phi), cartesian_moments(rho, phi, s_rho, s_phi)):
        assert np.allclose(q, mc, rtol=0.01, atol=0)


def test_true_covariance_reference_vs_monte_carlo():
    m = NoiseModel.uniform()
    w = 2 * math.pi
    z = z_eq(REFERENCE, w)
    s_rho, s_phi = sigma_polar(m, 1.0, abs(z))
    mc = _mc_cov(abs(z), np.angle(z), s_rho, s_phi, 10**7, seed=1)
    assert np.allclose(cov_cartesian_true(REFERENCE, w, m), mc, rtol=0.01, atol=0)


def test_true_covariance_vanishes_without_noise():
    q = cov_cartesian_true(REFERENCE, 2 * math.pi, NoiseModel.noiseless())
    assert np.all(q == 0.0)


def test_radial_variance_limit():
    q = cartesian_moments(3.0, 1.1, 0.02, 1e-9)
    vals, vecs = np.linalg.eigh(q)
    radial = np.array([math.cos(1.1), math.sin(1.1)])
    k = np.argmax(np.abs(vecs.T @ radial))
    assert vals[k] == pytest.approx(0.02**2, rel=1e-6)


@settings(max_examples=300, deadline=None)
@given(lrho=st.floats(-4, 4), phi=st.floats(-math.pi, math.pi), rel=st.floats(1e-4, 0.1),
       sphi=st.floats(1e-5, 0.1))
def test_blocks_positive_definite(lrho, phi, rel, sphi):
    rho = 10**lrho
    for q in (cartesian_moments(rho, phi, rho * rel, sphi), cov_cartesian_measured(rho, phi, rho * rel, sphi)):
        assert np.allclose(q, q.T)
        np.linalg.cholesky(q)


def test_positive_definite_vectorized():
    rng = np.random.default_rng(5)
    rho = 10 ** rng.uniform(-3, 3, 10**4)
    phi = rng.uniform(-math.pi, math.pi, 10**4)
    s_rho = rho * rng.uniform(1e-4, 0.05, 10**4)
    s_phi = rng.uniform(1e-5, 0.05, 10**4)
    assert np.all(is_positive_definite(cartesian_moments(rho, phi, s_rho, s_phi)))
    assert np.all(is_positive_definite(cov_cartesian_measured(rho, phi, s_rho, s_phi)))


def test_moment_derivatives_match_differences():
    eps, s_phi = 0.02, 0.01
    for rho, phi in ((0.5, -0.3), (2.0, 1.2), (1e-2, -1.5)):
        d_rho, d_phi = cartesian_moments_derivatives(rho, phi, eps, s_phi)
        q = lambda r, p: cartesian_moments(r, p, r * eps / 3, s_phi)  # noqa: E731
        h = 1e-6
        fd_rho = (q(rho * (1 + h), phi) - q(rho * (1 - h), phi)) / (2 * rho * h)
        fd_phi = (q(rho, phi + h) - q(rho, phi - h)) / (2 * h)
        assert np.allclose(d_rho, fd_rho, rtol=1e-5, atol=1e-9 * np.abs(fd_rho).max())
        assert np.allclose(d_phi, fd_phi, rtol=1e-5, atol=1e-9 * np.abs(fd_phi).max())
