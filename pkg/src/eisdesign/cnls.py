"""Weighted complex nonlinear least squares in polar or Cartesian coordinates.

Both formulations minimise ``sum_i eps_i^T W_i eps_i`` with the weights
``W_i`` fixed at the inverse of the measured covariance blocks. Residuals are
whitened (``r = L^-1 eps`` with ``L`` the Cholesky factor), so the problem
is an ordinary least-squares problem in ``r`` and Levenberg-Marquardt applies
directly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ecm import (
    I_P1, I_P2, I_PHF, N_PARAMS, PARAM_NAMES, EcmParams,
    polar_derivatives, z_eq, z_eq_complex_hessian, z_eq_complex_jacobian,
)
from .errors import SingularNormalEquations, SingularWeight
from .synth import ImpedanceSpectrum

log = logging.getLogger(__name__)

COORDINATES = ("polar", "cartesian")
DAMPING_CEILING = 1e12


@dataclass(frozen=True)
class FitConfig:
    coordinates: str = "polar"
    max_iters: int = 200
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    cost_tol: float = 1e-12
    damping_init: float = 1e-3
    bound_nudge: float = 1e-6

    def __post_init__(self):
        if self.coordinates not in COORDINATES:
            raise ValueError(f"coordinates must be one of {COORDINATES}")
        for name in ("gradient_tol", "step_tol", "cost_tol", "damping_init", "bound_nudge"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class AccuracyReport:
    matrix: np.ndarray
    variances: np.ndarray
    positive_definite: bool


@dataclass
class FitResult:
    theta_hat: EcmParams
    cost: float
    iterations: int
    converged: bool
    accuracy_matrix: np.ndarray
    param_variances: np.ndarray
    coordinates: str = "polar"
    message: str = ""
    accuracy_pd: bool = True
    history: list = field(default_factory=list)  # cost after each accepted step

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.to_dict(),
            "cost": self.cost,
            "iterations": self.iterations,
            "converged": self.converged,
            "coordinates": self.coordinates,
            "message": self.message,
            "accuracy_pd": self.accuracy_pd,
            "accuracy_matrix": self.accuracy_matrix.tolist(),
            "param_variances": dict(zip(PARAM_NAMES, self.param_variances.tolist())),
        }


def wrap_phase(x):
    """Wrap angles to (-pi, pi]."""
    return -((-np.asarray(x) + np.pi) % (2 * np.pi) - np.pi)


def _check_coords(coordinates):
    if coordinates not in COORDINATES:
        raise ValueError(f"coordinates must be one of {COORDINATES}")


class _Weights:
    """Whitening operator built from the measured covariance blocks."""

    def __init__(self, spectrum: ImpedanceSpectrum, coordinates: str):
        _check_coords(coordinates)
        self.coordinates = coordinates
        if coordinates == "polar":
            s_rho, s_phi = spectrum.sigma_rho, spectrum.sigma_phi
            if np.any(~(s_rho > 0)) or np.any(~(s_phi > 0)):
                raise SingularWeight("polar covariance block with zero variance")
            self.inv = np.stack([1.0 / s_rho, 1.0 / s_phi], axis=-1)
        else:
            q = spectrum.cov_cart
            a, b, c = q[:, 0, 0], q[:, 0, 1], q[:, 1, 1]
            with np.errstate(invalid="ignore"):
                l11 = np.sqrt(a)
                l21 = b / l11
                l22 = np.sqrt(c - l21**2)
            if not (np.all(a > 0) and np.all(np.isfinite(l22)) and np.all(l22 > 0)):
                raise SingularWeight("Cartesian covariance block fails Cholesky")
            # rows of L^-1
            self.linv = (1.0 / l11, -l21 / (l11 * l22), 1.0 / l22)

    def whiten(self, e1, e2):
        """Apply ``L^-1`` to stacked 2-vectors; trailing axes broadcast."""
        if self.coordinates == "polar":
            s = self.inv
            shape = (-1,) + (1,) * (np.ndim(e1) - 1)
            return s[:, 0].reshape(shape) * e1, s[:, 1].reshape(shape) * e2
        i11, i21, i22 = self.linv
        shape = (-1,) + (1,) * (np.ndim(e1) - 1)
        i11, i21, i22 = (v.reshape(shape) for v in (i11, i21, i22))
        return i11 * e1, i21 * e1 + i22 * e2

    def matrix(self) -> np.ndarray:
        """Weight blocks ``W = L^-T L^-1``, shape (N, 2, 2)."""
        if self.coordinates == "polar":
            w = np.zeros((self.inv.shape[0], 2, 2))
            w[:, 0, 0] = self.inv[:, 0] ** 2
            w[:, 1, 1] = self.inv[:, 1] ** 2
            return w
        i11, i21, i22 = self.linv
        linv = np.zeros((i11.size, 2, 2))
        linv[:, 0, 0], linv[:, 1, 0], linv[:, 1, 1] = i11, i21, i22
        return np.swapaxes(linv, 1, 2) @ linv


def _mismatch(z_meas, z_model, coordinates):
    if coordinates == "polar":
        return np.abs(z_meas) - np.abs(z_model), wrap_phase(np.angle(z_meas) - np.angle(z_model))
    return z_meas.real - z_model.real, z_meas.imag - z_model.imag


def _model_derivs(z, jc, coordinates):
    """Real 2 x 10 derivative rows of the model in the chosen coordinates."""
    if coordinates == "polar":
        return polar_derivatives(z, jc)
    return jc.real, jc.imag


class _Problem:
    def __init__(self, spectrum: ImpedanceSpectrum, coordinates: str):
        self.spectrum = spectrum
        self.omega = spectrum.omega
        self.coordinates = coordinates
        self.weights = _Weights(spectrum, coordinates)

    def residuals(self, theta: EcmParams) -> np.ndarray:
        z = np.asarray(z_eq(theta, self.omega))
        e1, e2 = _mismatch(self.spectrum.z, z, self.coordinates)
        r1, r2 = self.weights.whiten(e1, e2)
        return np.concatenate([r1, r2])

    def residuals_and_jacobian(self, theta: EcmParams):
        z = np.asarray(z_eq(theta, self.omega))
        e1, e2 = _mismatch(self.spectrum.z, z, self.coordinates)
        r1, r2 = self.weights.whiten(e1, e2)
        d1, d2 = _model_derivs(z, z_eq_complex_jacobian(theta, self.omega), self.coordinates)
        j1, j2 = self.weights.whiten(d1, d2)
        # residual = measured - model, hence the sign
        return np.concatenate([r1, r2]), -np.concatenate([j1, j2])


def objective(theta: EcmParams, spectrum: ImpedanceSpectrum, coordinates: str = "polar") -> float:
    """Weighted sum of squared mismatches, ``sum eps^T Q~^-1 eps``."""
    r = _Problem(spectrum, coordinates).residuals(theta)
    return float(r @ r)


def _clamp_closed_bounds(x: np.ndarray) -> np.ndarray:
    """Project exponents that overshoot a closed end of their domain onto it."""
    x = x.copy()
    if x[I_PHF] < -1.0:
        x[I_PHF] = -1.0
    for i in (I_P1, I_P2):
        if x[i] > 1.0:
            x[i] = 1.0
    return x


def _nudge_start(x: np.ndarray, nudge: float) -> np.ndarray:
    x = _clamp_closed_bounds(x)
    if x[I_PHF] >= 0.0:
        x[I_PHF] = -nudge
    for i in (I_P1, I_P2):
        if x[i] <= 0.0:
            x[i] = nudge
    return x


def fit(spectrum: ImpedanceSpectrum, theta0: EcmParams, config: FitConfig | None = None) -> FitResult:
    """Levenberg-Marquardt on the whitened residuals.

    Columns are scaled by their running maximum norm (Marquardt scaling), so
    parameters spanning eight decades share one damping value. A trial step
    that leaves the model domain is rejected and damping raised; exponents
    overshooting a closed bound are first projected onto it.
    """
    cfg = config or FitConfig()
    prob = _Problem(spectrum, cfg.coordinates)
    x = _nudge_start(theta0.to_array(), cfg.bound_nudge)
    theta = EcmParams.from_array(x)

    r, J = prob.residuals_and_jacobian(theta)
    cost = float(r @ r)
    scale = np.linalg.norm(J, axis=0)
    scale[scale == 0] = 1.0
    lam = cfg.damping_init
    nu = 2.0
    history = [cost]
    iterations = 0
    converged = False
    message = "maximum iterations reached"
    max_trials = 20 * cfg.max_iters

    for _ in range(max_trials):
        if cost <= 1e-30:
            converged, message = True, "zero residual"
            break
        g = J.T @ r
        if np.max(np.abs(g) / (scale * math.sqrt(cost))) <= cfg.gradient_tol:
            converged, message = True, "gradient tolerance"
            break
        if iterations >= cfg.max_iters:
            break
        if lam > DAMPING_CEILING:
            raise SingularNormalEquations(f"damping exceeded {DAMPING_CEILING:g}")

        A = np.vstack([J, np.diag(math.sqrt(lam) * scale)])
        b = np.concatenate([-r, np.zeros(N_PARAMS)])
        step, *_ = np.linalg.lstsq(A, b, rcond=None)
        if not np.all(np.isfinite(step)):
            raise SingularNormalEquations("non-finite Levenberg-Marquardt step")
        x_new = _clamp_closed_bounds(x + step)
        step = x_new - x
        small_step = np.max(np.abs(step) / np.abs(x)) <= cfg.step_tol

        trial = EcmParams.from_array(x_new, validate=False)
        if not trial.is_valid():
            if small_step:
                converged, message = True, "step tolerance"
                break
            lam *= nu
            nu *= 2.0
            continue
        r_new = prob.residuals(trial)
        cost_new = float(r_new @ r_new)
        lin = r + J @ step
        predicted = cost - float(lin @ lin)
        actual = cost - cost_new

        if cost_new < cost:
            x, theta = x_new, trial
            r, J = prob.residuals_and_jacobian(theta)
            cost = cost_new
            scale = np.maximum(scale, np.linalg.norm(J, axis=0))
            iterations += 1
            history.append(cost)
            rho = actual / predicted if predicted > 0 else 0.0
            lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if small_step:
                converged, message = True, "step tolerance"
                break
            if actual <= cfg.cost_tol * cost_new and 0 <= predicted <= cfg.cost_tol * cost_new:
                converged, message = True, "cost tolerance"
                break
        else:
            if small_step:
                converged, message = True, "step tolerance"
                break
            lam *= nu
            nu *= 2.0

    acc = accuracy_matrix(theta, spectrum, cfg.coordinates)
    if not converged:
        log.warning("fit did not converge after %d iterations", iterations)
    return FitResult(
        theta_hat=theta,
        cost=cost,
        iterations=iterations,
        converged=converged,
        accuracy_matrix=acc.matrix,
        param_variances=acc.variances,
        coordinates=cfg.coordinates,
        message=message,
        accuracy_pd=acc.positive_definite,
        history=history,
    )


def _equilibrated_inverse(A: np.ndarray, cholesky: bool = False) -> np.ndarray:
    """Inverse of a symmetric matrix after scaling its diagonal to one.

    With ``cholesky`` a non positive-definite input raises LinAlgError.
    """
    diag = np.diag(A)
    if np.any(~(diag > 0)):
        if cholesky:
            raise np.linalg.LinAlgError("non-positive diagonal")
        return np.linalg.pinv(A, hermitian=True)
    d = 1.0 / np.sqrt(diag)
    S = A * np.outer(d, d)
    if cholesky:
        L = np.linalg.cholesky(S)
        Linv = np.linalg.inv(L)
        S_inv = Linv.T @ Linv
    else:
        S_inv = np.linalg.pinv(S, hermitian=True)
    return S_inv * np.outer(d, d)


def gauss_newton_matrix(theta: EcmParams, spectrum: ImpedanceSpectrum, coordinates: str = "polar") -> np.ndarray:
    _, J = _Problem(spectrum, coordinates).residuals_and_jacobian(theta)
    return J.T @ J


def accuracy_matrix(theta_hat: EcmParams, spectrum: ImpedanceSpectrum, coordinates: str = "polar") -> AccuracyReport:
    """Half the Hessian of the objective at ``theta_hat`` and its inverse diagonal.

    ``A = J^T W J - sum_i (W_i eps_i) . d2(model_i)``; when the curvature term
    makes ``A`` indefinite the Gauss-Newton part alone is used for the
    variances and the report is flagged.
    """
    prob = _Problem(spectrum, coordinates)
    omega = prob.omega
    z = np.asarray(z_eq(theta_hat, omega))
    jc = z_eq_complex_jacobian(theta_hat, omega)
    hc = z_eq_complex_hessian(theta_hat, omega)
    if coordinates == "polar":
        d1, d2, h1, h2 = polar_derivatives(z, jc, hc)
    else:
        d1, d2, h1, h2 = jc.real, jc.imag, hc.real, hc.imag
    e1, e2 = _mismatch(spectrum.z, z, coordinates)
    W = prob.weights.matrix()
    gn = (
        np.einsum("ik,i,il->kl", d1, W[:, 0, 0], d1)
        + np.einsum("ik,i,il->kl", d1, W[:, 0, 1], d2)
        + np.einsum("ik,i,il->kl", d2, W[:, 1, 0], d1)
        + np.einsum("ik,i,il->kl", d2, W[:, 1, 1], d2)
    )
    we1 = W[:, 0, 0] * e1 + W[:, 0, 1] * e2
    we2 = W[:, 1, 0] * e1 + W[:, 1, 1] * e2
    curv = np.einsum("i,ikl->kl", we1, h1) + np.einsum("i,ikl->kl", we2, h2)
    A = gn - curv
    A = 0.5 * (A + A.T)
    try:
        variances = np.diag(_equilibrated_inverse(A, cholesky=True))
        pd = True
    except np.linalg.LinAlgError:
        pd = False
        log.warning("accuracy matrix not positive definite; reporting Gauss-Newton variances")
        variances = np.diag(_equilibrated_inverse(0.5 * (gn + gn.T)))
    return AccuracyReport(A, variances, pd)


__all__ = [
    "FitConfig", "FitResult", "AccuracyReport", "objective", "fit", "accuracy_matrix",
    "gauss_newton_matrix", "wrap_phase", "COORDINATES",
]
