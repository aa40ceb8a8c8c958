"""Gaussian Fisher information, Cramer-Rao bounds and confidence-ellipsoid volume.

For independent Gaussian measurements ``z_i ~ N(m_i(theta), Q_i(theta))`` the
Fisher information is a sum of per-frequency contributions

    dF_i[k, l] = dm_i/dk^T Q_i^-1 dm_i/dl + 1/2 tr(Q_i^-1 dQ_i/dk Q_i^-1 dQ_i/dl)

evaluated with the covariance implied by the model impedance (not the
measured one). Polar blocks are ``diag(sigma_rho^2, sigma_phi^2)`` with
``sigma_rho = rho*eps_rho/3``; Cartesian blocks are the exact moments of the
polar noise projected on (R, X). ``eps_rho`` is treated as locally constant.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .ecm import PARAM_NAMES, EcmParams, polar_derivatives, z_eq, z_eq_complex_jacobian
from .errors import DomainError
from .noise import NoiseModel, cartesian_moments, cartesian_moments_derivatives, sigma_polar
from .synth import FrequencyGrid

log = logging.getLogger(__name__)

COORDINATES = ("polar", "cartesian")
SINGULAR_CONDITION = 1e14


def _check_coords(coordinates):
    if coordinates not in COORDINATES:
        raise ValueError(f"coordinates must be one of {COORDINATES}")


def _blocks(theta: EcmParams, omegas, model: NoiseModel, coordinates: str):
    """Per-frequency (J, Q, dQ): shapes (N, 2, 10), (N, 2, 2), (N, 2, 2, 10)."""
    _check_coords(coordinates)
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    z = np.asarray(z_eq(theta, w))
    dz = z_eq_complex_jacobian(theta, w)
    rho, phi = np.abs(z), np.angle(z)
    d_rho, d_phi = polar_derivatives(z, dz)
    freqs = w / (2 * math.pi)
    eps_rho = np.asarray(model.eps_rho(freqs, rho), dtype=float)
    s_rho, s_phi = sigma_polar(model, freqs, rho)
    if coordinates == "polar":
        J = np.stack([d_rho, d_phi], axis=1)
        Q = np.zeros((w.size, 2, 2))
        Q[:, 0, 0] = s_rho**2
        Q[:, 1, 1] = s_phi**2
        dQ = np.zeros((w.size, 2, 2, d_rho.shape[-1]))
        # d(sigma_rho^2) = 2 * sigma_rho^2 * drho / rho
        dQ[:, 0, 0, :] = (2.0 * s_rho**2 / rho)[:, None] * d_rho
    else:
        J = np.stack([dz.real, dz.imag], axis=1)
        Q = cartesian_moments(rho, phi, s_rho, s_phi)
        q_rho, q_phi = cartesian_moments_derivatives(rho, phi, eps_rho, model.eps_phi / 3.0)
        dQ = q_rho[..., None] * d_rho[:, None, None, :] + q_phi[..., None] * d_phi[:, None, None, :]
    return J, Q, dQ


def _contributions(theta, omegas, model, coordinates, trace_term=True) -> np.ndarray:
    J, Q, dQ = _blocks(theta, omegas, model, coordinates)
    Qi = np.linalg.inv(Q)
    F = np.einsum("iak,iab,ibl->ikl", J, Qi, J)
    if trace_term:
        A = np.einsum("iab,ibck->iack", Qi, dQ)
        F = F + 0.5 * np.einsum("iabk,ibal->ikl", A, A)
    return 0.5 * (F + np.swapaxes(F, 1, 2))


def fim_contribution(theta: EcmParams, omega, model: NoiseModel, coordinates: str = "polar",
                     trace_term: bool = True) -> np.ndarray:
    """Contribution of one frequency (or each of several) to the FIM.

    Scalar ``omega`` gives a 10 x 10 matrix; an array gives (N, 10, 10).
    """
    out = _contributions(theta, omega, model, coordinates, trace_term)
    return out[0] if np.ndim(omega) == 0 else out


def ellipsoid_volume(eigenvalues) -> float:
    """Volume of the M-dimensional ellipsoid with semi-axes ``1/sqrt(lambda_i)``."""
    return math.exp(log_ellipsoid_volume(eigenvalues))


def log_ellipsoid_volume(eigenvalues) -> float:
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size == 0 or np.any(~(lam > 0)):
        raise DomainError("ellipsoid volume needs strictly positive eigenvalues")
    m = lam.size
    return float(math.log(2.0 / m) + 0.5 * m * math.log(math.pi) - gammaln(0.5 * m) - 0.5 * np.sum(np.log(lam)))


@dataclass
class CrlbReport:
    fim: np.ndarray
    fim_inverse: np.ndarray
    eigenvalues: np.ndarray  # ascending
    crlb: np.ndarray
    ellipsoid_volume: float
    eval_point: EcmParams
    grid: FrequencyGrid
    coordinates: str = "polar"
    condition: float = 1.0
    scaled_condition: float = 1.0
    singular: bool = False
    a_optimal: float = math.nan  # trace of the inverse
    d_optimal: float = math.nan  # log-determinant of the FIM

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    def to_dict(self) -> dict:
        return {
            "coordinates": self.coordinates,
            "eval_point": self.eval_point.to_dict(),
            "crlb": dict(zip(PARAM_NAMES, self.crlb.tolist())),
            "eigenvalues": self.eigenvalues.tolist(),
            "ellipsoid_volume": self.ellipsoid_volume,
            "condition": self.condition,
            "scaled_condition": self.scaled_condition,
            "singular": self.singular,
            "a_optimal": self.a_optimal,
            "d_optimal": self.d_optimal,
            "fim": self.fim.tolist(),
            "fim_inverse": self.fim_inverse.tolist(),
            "freq_hz": self.grid.freqs.tolist(),
        }


def _as_grid(grid) -> FrequencyGrid:
    if isinstance(grid, FrequencyGrid):
        return grid
    w = np.asarray(grid, dtype=float)
    return FrequencyGrid(w, w.min() / (2 * math.pi), w.max() / (2 * math.pi))


def report_from_fim(F: np.ndarray, theta: EcmParams, grid, coordinates: str = "polar") -> CrlbReport:
    """Inverse, eigen-data and scalar criteria of an assembled FIM.

    Parameter scales span about twelve decades, so the inverse is taken of
    the diagonally equilibrated matrix ``D F D`` (``D = diag(F)^-1/2``); its
    condition number decides the pseudo-inverse fallback.
    """
    grid = _as_grid(grid)
    F = 0.5 * (F + F.T)
    evals = np.linalg.eigvalsh(F)
    cond = float(evals[-1] / evals[0]) if evals[0] > 0 else math.inf
    diag = np.diag(F)
    if np.any(~(diag > 0)):
        raise DomainError("FIM has a non-positive diagonal entry: a parameter is not identifiable")
    d = 1.0 / np.sqrt(diag)
    S = F * np.outer(d, d)
    s_evals, s_evecs = np.linalg.eigh(S)
    s_cond = float(s_evals[-1] / s_evals[0]) if s_evals[0] > 0 else math.inf
    singular = not s_cond <= SINGULAR_CONDITION
    if singular:
        log.warning("scaled FIM condition number %.3g exceeds %.0e; using pseudo-inverse", s_cond, SINGULAR_CONDITION)
        s_inv = np.linalg.pinv(S, rcond=1e-15, hermitian=True)
    else:
        s_inv = (s_evecs / s_evals) @ s_evecs.T
    inv = s_inv * np.outer(d, d)
    inv = 0.5 * (inv + inv.T)
    volume = ellipsoid_volume(evals) if evals[0] > 0 else math.inf
    d_opt = float(np.sum(np.log(evals))) if evals[0] > 0 else -math.inf
    return CrlbReport(
        fim=F, fim_inverse=inv, eigenvalues=evals, crlb=np.diag(inv).copy(),
        ellipsoid_volume=volume, eval_point=theta, grid=grid, coordinates=coordinates,
        condition=cond, scaled_condition=s_cond, singular=singular,
        a_optimal=float(np.trace(inv)), d_optimal=d_opt,
    )


def fim(theta: EcmParams, grid, model: NoiseModel, coordinates: str = "polar",
        trace_term: bool = True) -> CrlbReport:
    """FIM as the sum of per-frequency contributions, with CRLB and eigen-data."""
    grid = _as_grid(grid)
    F = _contributions(theta, grid.omegas, model, coordinates, trace_term).sum(axis=0)
    return report_from_fim(F, theta, grid, coordinates)


def fim_monolithic(theta: EcmParams, grid, model: NoiseModel, coordinates: str = "polar",
                   trace_term: bool = True) -> np.ndarray:
    """Same FIM assembled from the stacked 2N x 10 Jacobian and dense 2N x 2N covariance."""
    grid = _as_grid(grid)
    J, Q, dQ = _blocks(theta, grid.omegas, model, coordinates)
    n, m = J.shape[0], J.shape[-1]
    Jf = J.reshape(2 * n, m)
    Qf = np.zeros((2 * n, 2 * n))
    dQf = np.zeros((m, 2 * n, 2 * n))
    for i in range(n):
        s = slice(2 * i, 2 * i + 2)
        Qf[s, s] = Q[i]
        dQf[:, s, s] = np.moveaxis(dQ[i], -1, 0)
    Qinv = np.linalg.inv(Qf)
    F = Jf.T @ Qinv @ Jf
    if trace_term:
        P = np.array([Qinv @ dQf[k] for k in range(m)])
        F = F + 0.5 * np.einsum("kab,lba->kl", P, P)
    return 0.5 * (F + F.T)


def contribution_curves(theta: EcmParams, freqs, model: NoiseModel, coordinates: str = "polar",
                        normalize: bool = True) -> np.ndarray:
    """Diagonal FIM contributions over ``freqs`` (Hz), shape (N, 10).

    With ``normalize`` each column is divided by its peak over the range.
    """
    w = 2 * math.pi * np.asarray(freqs, dtype=float)
    d = np.diagonal(_contributions(theta, w, model, coordinates), axis1=1, axis2=2).copy()
    if normalize:
        d /= d.max(axis=0)
    return d


def relative_improvement(before: CrlbReport, after: CrlbReport) -> np.ndarray:
    """Per-parameter relative CRLB change ``(before - after) / before``; positive is better."""
    return (before.crlb - after.crlb) / before.crlb
