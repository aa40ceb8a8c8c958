"""Initial guess for all ten circuit parameters from spectrum geometry.

Low- and high-frequency ends are fitted to straight lines in the (R, X)
plane (slope ``k = dX/dR``): the Warburg tail approaches ``X = -R + R_sigma``
and the inductive tail approaches ``X = k_hf (R - R_s)`` with
``k_hf = -tan(pi*phi_hf/2)``. What remains after subtracting both tails is
two depressed arcs whose peaks give the Zarc parameters.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import find_peaks

from .ecm import EcmParams, jw_power
from .errors import DegenerateGeometry, EisError, InsufficientPoints, PeakDetectionFailure
from .noise import NoiseModel
from .synth import ImpedanceSpectrum

log = logging.getLogger(__name__)

EXPONENT_NUDGE = 1e-6


@dataclass
class LineFit:
    """Orthogonal line fit ``X = k*R + n`` over the ``n_points`` end points.

    The line is stored in normal form ``a*R + b*X = c`` (unit normal), which
    also covers the vertical case of a pure inductor.
    """

    a: float
    b: float
    c: float
    n_points: int
    end: str
    freq: np.ndarray  # Hz, points used, ordered from the spectrum end
    eps_rho: np.ndarray  # per-point projected relative magnitude error
    eps_phi: np.ndarray  # per-point projected phase error, rad

    @property
    def k(self) -> float:
        return math.inf if self.b == 0 else -self.a / self.b

    @property
    def n(self) -> float:
        return math.copysign(math.inf, self.c) if self.b == 0 else self.c / self.b

    @property
    def r_intercept(self) -> float:
        """Crossing of the horizontal (X = 0) axis."""
        if self.a == 0:
            raise DegenerateGeometry("horizontal line never crosses X = 0")
        return self.c / self.a

    def project(self, z):
        z = np.asarray(z, dtype=complex)
        d = self.a * z.real + self.b * z.imag - self.c
        return z - d * complex(self.a, self.b)

    def to_dict(self) -> dict:
        return {
            "k": self.k, "n": self.n, "n_points": self.n_points, "end": self.end,
            "r_intercept": self.r_intercept if self.a != 0 else None,
            "eps_rho": self.eps_rho.tolist(), "eps_phi": self.eps_phi.tolist(),
        }


def _fit_line(z: np.ndarray, end: str) -> tuple[float, float, float]:
    """Least-squares orthogonal line; returns unit normal (a, b) and offset c."""
    r, x = z.real, z.imag
    if end == "LF":
        # slope pinned at -1: normal (1, 1)/sqrt(2)
        a = b = 1.0 / math.sqrt(2.0)
        return a, b, float(np.mean(a * r + b * x))
    rc, xc = r - r.mean(), x - x.mean()
    sxx, syy, sxy = rc @ rc, xc @ xc, rc @ xc
    # unconstrained total least squares: normal = eigenvector of the smallest eigenvalue
    evals, evecs = np.linalg.eigh(np.array([[sxx, sxy], [sxy, syy]]))
    a, b = evecs[:, 0]
    if b < 0 or (b == 0 and a < 0):
        a, b = -a, -b
    if b != 0 and -a / b < 0:
        # slope constrained to [0, inf): best of the two boundary lines
        a, b = (0.0, 1.0) if syy <= sxx else (1.0, 0.0)
    c = a * r.mean() + b * x.mean()
    return float(a), float(b), float(c)


def line_errors(z: np.ndarray, a: float, b: float, c: float):
    """Projected errors of Algorithm-1 style: relative magnitude and phase."""
    proj = z - (a * z.real + b * z.imag - c) * complex(a, b)
    eps_rho = np.abs((np.abs(proj) - np.abs(z)) / np.abs(proj))
    eps_phi = np.abs(np.angle(proj) - np.angle(z))
    return proj, eps_rho, eps_phi


def _end_order(spectrum: ImpedanceSpectrum, end: str) -> np.ndarray:
    if end not in ("LF", "HF"):
        raise ValueError("end must be 'LF' or 'HF'")
    order = np.argsort(spectrum.freq, kind="stable")
    return order if end == "LF" else order[::-1]


def fit_asymptote_line(spectrum: ImpedanceSpectrum, end: str, model: NoiseModel) -> LineFit:
    """Grow the end-point set from 2 while every point stays within the error bounds.

    Returns the fit on the largest accepted set; the first point whose
    inclusion breaks a bound is left out.
    """
    if len(spectrum) < 3:
        raise InsufficientPoints("need at least 3 spectrum points")
    order = _end_order(spectrum, end)
    z_all = spectrum.z[order]
    f_all = spectrum.freq[order]
    bound_rho = np.asarray(model.eps_rho(f_all, np.abs(z_all)), dtype=float)
    best = None
    for n in range(2, len(order) + 1):
        z = z_all[:n]
        a, b, c = _fit_line(z, end)
        _, e_rho, e_phi = line_errors(z, a, b, c)
        if np.all(e_rho <= bound_rho[:n]) and np.all(e_phi <= model.eps_phi):
            best = LineFit(a, b, c, n, end, f_all[:n].copy(), e_rho, e_phi)
        else:
            break
    if best is None:
        raise InsufficientPoints(f"{end} end: two points already violate the error bounds")
    return best


@dataclass
class LfInit:
    q_w: float
    r_sigma: float
    excluded: list = field(default_factory=list)


def init_lf(spectrum: ImpedanceSpectrum, line: LineFit) -> LfInit:
    """Warburg coefficient averaged over real- and imaginary-part closed forms."""
    r_sig = line.r_intercept
    idx = np.searchsorted(np.sort(spectrum.freq), line.freq)
    sel = np.argsort(spectrum.freq, kind="stable")[idx]
    w = spectrum.omega[sel]
    dr = spectrum.re[sel] - r_sig
    x = spectrum.im[sel]
    ok = (dr > 0) & (x < 0)
    excluded = spectrum.freq[sel][~ok].tolist()
    if excluded:
        log.info("init_lf: excluded %d point(s) with non-positive denominators", len(excluded))
    if not np.any(ok):
        raise DegenerateGeometry("no low-frequency point lies on the Warburg side of R_sigma")
    s = np.sqrt(2.0 * w[ok])
    q_w = (np.sum(1.0 / (s * dr[ok])) - np.sum(1.0 / (s * x[ok]))) / (2 * np.count_nonzero(ok))
    return LfInit(float(q_w), float(r_sig), excluded)


@dataclass
class HfInit:
    r_s: float
    q_hf: float
    phi_hf: float
    fallback: bool = False


def init_hf(spectrum: ImpedanceSpectrum, line: LineFit) -> HfInit:
    """Inductive CPE and series resistance from the high-frequency line.

    ``phi_hf = -(2/pi) * arctan(k_hf)`` maps a non-negative slope onto
    [-1, 0]; ``R_s`` is the line's crossing of X = 0.
    """
    k = line.k
    if not k > 0:
        raise DegenerateGeometry(f"no inductive tail (k_hf = {k:g})")
    phi = -math.atan(k) / (math.pi / 2)
    r_s = line.r_intercept
    order = _end_order(spectrum, "HF")[: line.n_points]
    w = spectrum.omega[order]
    dr = spectrum.re[order] - r_s
    x = spectrum.im[order]
    # |Z - R_s| = w^(-phi) / Q_HF; the magnitude avoids dividing by a vanishing real part at phi = -1
    q_hf = float(np.mean(1.0 / (np.hypot(dr, x) * w**phi)))
    return HfInit(float(r_s), q_hf, float(phi))


def init_hf_fallback(spectrum: ImpedanceSpectrum, phi: float = -0.5) -> HfInit:
    """Used when no usable inductive tail is visible.

    ``phi`` defaults to -0.5; a caller holding a valid HF slope passes its exponent
    so that only ``R_s`` is re-anchored at the smallest real part.
    """
    top = int(np.argmax(spectrum.freq))
    r_s = float(np.min(spectrum.re))
    mag = abs(spectrum.z[top] - r_s)
    if not mag > 0:
        raise DegenerateGeometry("highest-frequency point coincides with R_s")
    q_hf = float(spectrum.omega[top] ** (-phi) / mag)
    return HfInit(r_s, q_hf, phi, fallback=True)


@dataclass
class MfInit:
    r_1: float
    q_1: float
    phi_1: float
    r_2: float
    q_2: float
    phi_2: float
    omega_c1: float
    omega_c2: float
    fallback: bool = False


def mf_spectrum(spectrum: ImpedanceSpectrum, lf: LfInit, hf: HfInit) -> np.ndarray:
    """Measured impedance minus Warburg, inductive CPE and series resistance."""
    w = spectrum.omega
    z_w = 1.0 / (jw_power(w, 0.5) * lf.q_w)
    z_h = 1.0 / (jw_power(w, hf.phi_hf) * hf.q_hf)
    return spectrum.z - z_w - z_h - hf.r_s


def _median3(y: np.ndarray) -> np.ndarray:
    if y.size < 3:
        return y.copy()
    out = y.copy()
    out[1:-1] = np.median(np.stack([y[:-2], y[1:-1], y[2:]]), axis=0)
    return out


def _refine_peak(logw: np.ndarray, y: np.ndarray, i: int) -> float:
    """Peak position in log-omega near sample ``i``.

    Maximum of a cubic spline through the samples, searched between the
    neighbours of ``i``; a three-point parabola vertex is biased by the
    asymmetric shape of overlapping arcs.
    """
    if i == 0 or i == y.size - 1:
        return float(logw[i])
    spline = CubicSpline(logw, y)
    lo, hi = logw[i - 1], logw[i + 1]
    roots = spline.derivative().roots(extrapolate=False)
    cand = [lo, hi, logw[i]] + [r for r in np.atleast_1d(roots) if lo <= r <= hi]
    return float(max(cand, key=lambda x: float(spline(x))))


def _interp(logw, values, at):
    """Cubic-spline interpolation of complex values at log-omega ``at``."""
    return complex(CubicSpline(logw, values.real)(at), CubicSpline(logw, values.imag)(at))


def _zarc_from_peak(z_peak: complex, omega_c: float, r_offset: float):
    r = 2.0 * (z_peak.real - r_offset)
    if not r > 0:
        raise DegenerateGeometry("non-positive resistance at arc peak")
    phi = 4.0 / math.pi * math.atan(-2.0 * z_peak.imag / r)
    q = 1.0 / (omega_c**phi * r)
    return r, q, phi


def find_arc_peaks(freq: np.ndarray, z_mf: np.ndarray):
    """Indices (ascending frequency) of the two dominant maxima of -Im(z_mf)."""
    y = _median3(-z_mf.imag)
    peaks, props = find_peaks(y, prominence=0.0)
    if peaks.size < 2:
        raise PeakDetectionFailure(f"found {peaks.size} arc peak(s)")
    top2 = peaks[np.argsort(props["prominences"])[::-1][:2]]
    lo, hi = sorted(top2.tolist())
    return lo, hi, y


def init_mf(spectrum: ImpedanceSpectrum, lf: LfInit, hf: HfInit, refine: bool = True) -> MfInit:
    """Zarc parameters from the two peaks of the cleaned mid-frequency arcs.

    The lower-frequency peak belongs to the slower Zarc (index 2); its real
    part carries R_1 in addition to R_2/2.
    """
    spec = spectrum.sorted()
    z_mf = mf_spectrum(spec, lf, hf)
    logw = np.log(spec.omega)
    i2, i1, _ = find_arc_peaks(spec.freq, z_mf)
    y = -z_mf.imag
    if refine:
        lw1, lw2 = _refine_peak(logw, y, i1), _refine_peak(logw, y, i2)
        zp1, zp2 = _interp(logw, z_mf, lw1), _interp(logw, z_mf, lw2)
    else:
        lw1, lw2 = logw[i1], logw[i2]
        zp1, zp2 = z_mf[i1], z_mf[i2]
    w1, w2 = math.exp(lw1), math.exp(lw2)
    r1, q1, p1 = _zarc_from_peak(zp1, w1, 0.0)
    r2, q2, p2 = _zarc_from_peak(zp2, w2, r1)
    return MfInit(r1, q1, p1, r2, q2, p2, w1, w2)


def init_mf_single_arc(spectrum: ImpedanceSpectrum, lf: LfInit, hf: HfInit) -> MfInit:
    """Fallback when the arcs are not resolved: split at the -Im minimum.

    With a single visible arc both halves describe the same Zarc; the
    resistance is shared equally between the two branches.
    """
    spec = spectrum.sorted()
    z_mf = mf_spectrum(spec, lf, hf)
    logw = np.log(spec.omega)
    y = -z_mf.imag
    inner = slice(1, y.size - 1)
    i_top = int(np.argmax(_median3(y)[inner])) + 1
    lw = _refine_peak(logw, y, i_top)
    r, q, phi = _zarc_from_peak(_interp(logw, z_mf, lw), math.exp(lw), 0.0)
    # split the single arc into two identical halves: each R/2 with time constant tau
    tau = (r * q) ** (1.0 / phi)
    r_half = 0.5 * r
    q_half = tau**phi / r_half
    w_c = 1.0 / tau
    return MfInit(r_half, q_half, phi, r_half, q_half, phi, w_c, w_c, fallback=True)


@dataclass
class InitResult:
    theta: EcmParams
    lf_line: LineFit | None
    hf_line: LineFit | None
    lf: LfInit | None
    hf: HfInit | None
    mf: MfInit | None
    provenance: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta0": self.theta.to_dict(),
            "N_LF": self.lf_line.n_points if self.lf_line else None,
            "N_HF": self.hf_line.n_points if self.hf_line else None,
            "k_LF": self.lf_line.k if self.lf_line else None,
            "n_LF": self.lf_line.n if self.lf_line else None,
            "k_HF": self.hf_line.k if self.hf_line else None,
            "n_HF": self.hf_line.n if self.hf_line else None,
            "omega_c1": self.mf.omega_c1 if self.mf else None,
            "omega_c2": self.mf.omega_c2 if self.mf else None,
            "provenance": list(self.provenance),
        }


def _clamp(theta: dict, provenance: list) -> dict:
    out = dict(theta)
    if not out["phi_hf"] < 0:
        provenance.append(f"phi_hf {out['phi_hf']:g} nudged into [-1, 0)")
        out["phi_hf"] = -EXPONENT_NUDGE
    if out["phi_hf"] < -1:
        provenance.append(f"phi_hf {out['phi_hf']:g} clamped to -1")
        out["phi_hf"] = -1.0
    for name in ("phi_1", "phi_2"):
        if out[name] > 1:
            provenance.append(f"{name} {out[name]:g} nudged below 1")
            out[name] = 1.0 - EXPONENT_NUDGE
        elif not out[name] > 0:
            provenance.append(f"{name} {out[name]:g} nudged above 0")
            out[name] = EXPONENT_NUDGE
    return out


def initialize(spectrum: ImpedanceSpectrum, model: NoiseModel) -> InitResult:
    """Full initialization with per-stage diagnostics and fallback log."""
    provenance: list[str] = []
    spec = spectrum.sorted()

    lf_line = fit_asymptote_line(spec, "LF", model)
    lf = init_lf(spec, lf_line)
    if lf.excluded:
        provenance.append(f"init_lf excluded {len(lf.excluded)} point(s)")

    hf_line = None
    phi_fb = -0.5
    try:
        hf_line = fit_asymptote_line(spec, "HF", model)
        hf = init_hf(spec, hf_line)
        phi_fb = hf.phi_hf
        if not (hf.q_hf > 0 and hf.r_s > 0):
            raise DegenerateGeometry("non-positive HF initial values")
    except EisError as exc:
        provenance.append(f"init_hf fallback: {exc}")
        hf = init_hf_fallback(spec, phi_fb)

    try:
        mf = init_mf(spec, lf, hf)
    except EisError as exc:
        provenance.append(f"init_mf fallback: {exc}")
        mf = init_mf_single_arc(spec, lf, hf)

    values = {
        "r_s": hf.r_s, "q_hf": hf.q_hf, "phi_hf": hf.phi_hf,
        "r_1": mf.r_1, "q_1": mf.q_1, "phi_1": mf.phi_1,
        "r_2": mf.r_2, "q_2": mf.q_2, "phi_2": mf.phi_2,
        "q_w": lf.q_w,
    }
    values = _clamp(values, provenance)
    theta = EcmParams.from_dict(values)
    for msg in provenance:
        log.info("initialize: %s", msg)
    return InitResult(theta, lf_line, hf_line, lf, hf, mf, provenance)


def initialize_all(spectrum: ImpedanceSpectrum, model: NoiseModel) -> EcmParams:
    return initialize(spectrum, model).theta
