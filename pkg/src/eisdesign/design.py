"""E-optimal frequency-grid design by greedy hill climbing on lambda_min(FIM).

Each iteration scores every not-yet-fixed frequency by how a small relative
perturbation changes the smallest FIM eigenvalue, picks the most sensitive
one, moves it in equal steps while lambda_min keeps rising, then fixes it.
Only the moved frequency is re-measured and the fit is warm-started from the
previous estimate, as a physical instrument would be driven.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cnls import FitConfig, FitResult, fit
from .ecm import EcmParams
from .errors import DomainError
from .fisher import CrlbReport, fim
from .initializer import initialize_all
from .noise import NoiseModel
from .synth import FrequencyGrid, ImpedanceSpectrum, VirtualInstrument, logspace_n

log = logging.getLogger(__name__)

DEFAULT_MU = 100.0


def min_mu(grid: FrequencyGrid) -> float:
    """Smallest divisor keeping the second-highest upward probe inside f_max."""
    w = np.sort(grid.omegas)
    if w.size < 2:
        return 0.0
    top = 2 * math.pi * grid.f_max
    return float(w[-2] / (top - w[-2]))


@dataclass
class HistoryEntry:
    iteration: int
    index: int
    omega_old: float
    omega_new: float
    lambda_before: float
    lambda_after: float
    volume: float  # ellipsoid volume of F(theta_hat) on the grid after the climb
    sign: int = 1
    steps: int = 0

    def as_row(self) -> list:
        return [self.iteration, self.index, self.omega_old, self.omega_new,
                self.lambda_before, self.lambda_after, self.volume, self.sign, self.steps]


HISTORY_COLUMNS = ("iteration", "index", "omega_old", "omega_new", "lambda_min_before",
                   "lambda_min_after", "ellipsoid_volume", "sign", "steps")


@dataclass
class DesignState:
    k: int
    grid: FrequencyGrid
    spectrum: ImpedanceSpectrum
    theta_hat: EcmParams
    fim_report: CrlbReport
    mu: float
    model: NoiseModel
    coordinates: str = "polar"
    history: list = field(default_factory=list)
    fits: list = field(default_factory=list)  # FitResult per iteration
    reports: list = field(default_factory=list)  # CrlbReport at theta_hat per iteration
    grids: list = field(default_factory=list)  # grid at each iteration (before its climb)

    scaling: str = "relative"  # eigenvalue of the FIM in relative (theta_k / theta_hat_k) units

    @property
    def free(self) -> list[int]:
        return self.grid.free

    def lambda_min(self, omegas) -> float:
        return design_lambda_min(self.theta_hat, omegas, self.grid, self.model, self.coordinates, self.scaling)


def design_lambda_min(theta, omegas, grid, model, coordinates, scaling="relative") -> float:
    """Smallest FIM eigenvalue driving the design.

    With ``relative`` scaling the FIM is expressed for parameters measured in
    units of their current estimate, ``D F D`` with ``D = diag(theta)``. In raw
    units the smallest eigenvalue belongs almost entirely to Q_HF (four decades
    larger than any other parameter) and the design barely moves.
    """
    if scaling not in ("relative", "absolute"):
        raise ValueError("scaling must be 'relative' or 'absolute'")
    g = FrequencyGrid(omegas, grid.f_min, grid.f_max)
    F = fim(theta, g, model, coordinates).fim
    if scaling == "relative":
        d = np.abs(theta.to_array())
        F = F * np.outer(d, d)
    return float(np.linalg.eigvalsh(F)[0])


def _probe_direction(omega: float, delta: float, grid: FrequencyGrid) -> int:
    """Upward probe unless it would leave the band (the top frequency probes downward)."""
    return -1 if omega + delta >= 2 * math.pi * grid.f_max else 1


def sensitivity_scan(state: DesignState):
    """Pick the frequency whose perturbation moves lambda_min the most.

    Returns ``(m, s, d)``: chosen index, step sign that increases lambda_min
    and the sensitivities ``d_i = (lambda - lambda_probe) / delta_i`` (NaN for
    fixed indices). Ties go to the lowest index; a flat response gives s=+1.
    """
    free = state.free
    if not free:
        raise DomainError("every frequency is already fixed")
    w = state.grid.omegas
    lam0 = state.lambda_min(w)
    d = np.full(w.size, np.nan)
    gain = np.zeros(w.size)
    for i in free:
        delta = w[i] / state.mu
        p = _probe_direction(w[i], delta, state.grid)
        probe = w.copy()
        probe[i] = w[i] + p * delta
        lam = state.lambda_min(probe)
        d[i] = (lam0 - lam) / delta
        gain[i] = p * (lam - lam0)  # positive: moving upward helps
    mags = np.abs(d[free])
    m = free[int(np.argmax(mags))]  # argmax returns the first maximum: lowest index
    s = 1 if gain[m] >= 0 else -1
    return m, s, d


def hill_climb(state: DesignState, m: int, s: int) -> tuple[FrequencyGrid, HistoryEntry]:
    """Step ``omega_m`` by ``s*n*delta`` (n = 1, 2, ...) while lambda_min strictly rises.

    A step reaching a band edge is replaced by the edge itself; it is kept
    only if it still improves, and the climb stops there. ``m`` is fixed
    afterwards whatever the outcome.
    """
    grid = state.grid
    w = grid.omegas.copy()
    w0 = w[m]
    delta = w0 / state.mu
    lo, hi = 2 * math.pi * grid.f_min, 2 * math.pi * grid.f_max
    best_lam = state.lambda_min(w)
    lam_start = best_lam
    best_w = w0
    n = 1
    steps = 0
    while True:
        cand = w0 + s * n * delta
        at_edge = cand >= hi or cand <= lo
        if at_edge:
            cand = hi if cand >= hi else lo
        w[m] = cand
        lam = state.lambda_min(w)
        if lam > best_lam:
            best_lam, best_w = lam, cand
            steps = n
        else:
            break
        if at_edge:
            break
        n += 1
    w[m] = best_w
    new_grid = FrequencyGrid(w, grid.f_min, grid.f_max, grid.adjusted | {m})
    entry = HistoryEntry(
        iteration=state.k, index=m, omega_old=float(w0), omega_new=float(best_w),
        lambda_before=float(lam_start), lambda_after=float(best_lam), volume=math.nan,
        sign=int(s), steps=steps,
    )
    return new_grid, entry


def _fit(spectrum, theta0, fit_config) -> FitResult:
    res = fit(spectrum, theta0, fit_config)
    if not res.converged:
        log.warning("design fit did not converge (%s); continuing with best iterate", res.message)
    return res


def run_design(instrument: VirtualInstrument, f_min: float, f_max: float, n_points: int,
               mu: float = DEFAULT_MU, model: NoiseModel | None = None,
               fit_config: FitConfig | None = None, theta0: EcmParams | None = None,
               callback=None, scaling: str = "relative") -> DesignState:
    """Full design loop against an instrument exposing ``sweep`` and ``measure``.

    Iteration 0 sweeps a log-spaced grid, initializes from geometry and fits.
    Every iteration then fixes one frequency; the moved point alone is
    re-measured and the fit warm-started. A last re-measure and fit follows
    the final climb so the returned state matches the final grid.
    """
    if n_points < 10:
        raise DomainError("need at least 10 frequencies for 10 parameters")
    model = model or instrument.model
    fit_config = fit_config or FitConfig()
    coords = fit_config.coordinates
    grid = logspace_n(f_min, f_max, n_points)
    mu_lo = min_mu(grid)
    if not mu >= mu_lo:
        raise DomainError(f"mu={mu:g} below the feasibility bound {mu_lo:g}")

    spectrum = instrument.sweep(grid.omegas)
    start = theta0 if theta0 is not None else initialize_all(spectrum, model)
    res = _fit(spectrum, start, fit_config)
    report = fim(res.theta_hat, grid, model, coords)
    state = DesignState(0, grid, spectrum, res.theta_hat, report, float(mu), model, coords, scaling=scaling)
    state.fits.append(res)
    state.reports.append(report)
    state.grids.append(grid)

    while state.free:
        m, s, _ = sensitivity_scan(state)
        new_grid, entry = hill_climb(state, m, s)
        new_report = fim(state.theta_hat, new_grid, model, coords)
        entry.volume = new_report.ellipsoid_volume
        state.history.append(entry)
        if callback is not None:
            callback(state, entry)

        # next iteration: re-measure only the adjusted point, warm-start the fit
        spectrum = state.spectrum
        if entry.omega_new != entry.omega_old:
            point = instrument.measure(entry.omega_new)
            spectrum = spectrum.with_point(m, point)
        res = _fit(spectrum, state.theta_hat, fit_config)
        report = fim(res.theta_hat, new_grid, model, coords)
        state.k += 1
        state.grid = new_grid
        state.spectrum = spectrum
        state.theta_hat = res.theta_hat
        state.fim_report = report
        state.fits.append(res)
        state.reports.append(report)
        state.grids.append(new_grid)
    return state


def crlb_trajectory(state: DesignState, theta_true: EcmParams | None = None) -> dict:
    """CRLB per iteration at theta_hat (and at the truth when given), plus volumes."""
    out = {
        "crlb_hat": np.array([r.crlb for r in state.reports]),
        "volume_hat": np.array([r.ellipsoid_volume for r in state.reports]),
        "lambda_min_hat": np.array([r.lambda_min for r in state.reports]),
    }
    if theta_true is not None:
        true_reports = [fim(theta_true, g, state.model, state.coordinates) for g in state.grids]
        out["crlb_true"] = np.array([r.crlb for r in true_reports])
        out["volume_true"] = np.array([r.ellipsoid_volume for r in true_reports])
        out["lambda_min_true"] = np.array([r.lambda_min for r in true_reports])
    return out
