"""Instrument accuracy model and polar/Cartesian measurement covariances.

Magnitude and phase errors are independent Gaussians whose 3-sigma bounds are
the instrument's maximum relative magnitude error ``eps_rho`` (read from an
accuracy-contour table) and maximum absolute phase error ``eps_phi``.

Covariance blocks are plain ``(..., 2, 2)`` arrays ordered ``[[a, b], [b, c]]``.
In Cartesian form ``a = Var(R)``, ``c = Var(X)`` and ``b = Cov(R, X)``.
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UndefinedRegion


@dataclass(frozen=True)
class ContourRegion:
    """One accuracy-contour area: a rectangle in (f, |Z|) with a fixed eps_rho."""

    f_min: float
    f_max: float
    z_min: float
    z_max: float
    eps_rho: float  # fraction, not percent

    def __post_init__(self):
        if not self.eps_rho > 0:
            raise ValueError("eps_rho must be positive")
        if not (self.f_min < self.f_max and self.z_min < self.z_max):
            raise ValueError("empty contour region")

    def contains(self, f, rho):
        f = np.asarray(f, dtype=float)
        rho = np.asarray(rho, dtype=float)
        return (f >= self.f_min) & (f <= self.f_max) & (rho >= self.z_min) & (rho <= self.z_max)


@dataclass(frozen=True)
class NoiseModel:
    """Piecewise-constant eps_rho lookup plus a constant phase bound (rad).

    Regions are searched in order and the first match wins, so overlapping
    rows act as a priority list.
    """

    regions: tuple[ContourRegion, ...]
    eps_phi: float

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if self.eps_phi < 0:
            raise ValueError("eps_phi must be non-negative")

    @classmethod
    def uniform(cls, eps_rho_percent: float = 1.0, eps_phi_deg: float = 1.0) -> "NoiseModel":
        """Single region covering every (f, |Z|); the desk-study setup."""
        if eps_rho_percent == 0:
            return cls(regions=(), eps_phi=math.radians(eps_phi_deg))
        region = ContourRegion(0.0, math.inf, 0.0, math.inf, eps_rho_percent / 100.0)
        return cls(regions=(region,), eps_phi=math.radians(eps_phi_deg))

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls.uniform(0.0, 0.0)

    @property
    def is_noiseless(self) -> bool:
        return not self.regions and self.eps_phi == 0.0

    def eps_rho(self, f, rho):
        """Maximum relative magnitude error at (f, |Z|)."""
        f, rho = np.broadcast_arrays(np.asarray(f, dtype=float), np.asarray(rho, dtype=float))
        if self.is_noiseless:
            return np.zeros(f.shape)[()]
        out = np.full(f.shape, np.nan)
        for region in self.regions:
            hit = np.isnan(out) & region.contains(f, rho)
            out[hit] = region.eps_rho
        if np.any(np.isnan(out)):
            bad = np.argwhere(np.isnan(np.atleast_1d(out)))[0][0]
            raise UndefinedRegion(
                f"no accuracy contour covers f={np.atleast_1d(f)[bad]:g} Hz, "
                f"|Z|={np.atleast_1d(rho)[bad]:g} ohm"
            )
        return out[()]

    def sigma_polar(self, f, rho):
        """Standard deviations (sigma_rho, sigma_phi) at (f, |Z|)."""
        return sigma_polar(self, f, rho)

    @property
    def identifier(self) -> str:
        rows = ";".join(
            f"{r.f_min!r},{r.f_max!r},{r.z_min!r},{r.z_max!r},{r.eps_rho!r}" for r in self.regions
        )
        return hashlib.sha1(f"{rows}|{self.eps_phi!r}".encode()).hexdigest()[:12]

    def to_text(self) -> str:
        lines = ["# f_min_hz f_max_hz z_min_ohm z_max_ohm eps_rho_percent"]
        for r in self.regions:
            lines.append(f"{r.f_min!r} {r.f_max!r} {r.z_min!r} {r.z_max!r} {r.eps_rho * 100.0!r}")
        lines.append(f"eps_phi_deg = {math.degrees(self.eps_phi)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NoiseModel":
        """Parse the plain-text contour table.

        One region per line: ``f_min f_max z_min z_max eps_rho_percent``
        (whitespace or comma separated, ``inf`` allowed), plus a single
        ``eps_phi_deg = <value>`` line. ``#`` starts a comment.
        """
        regions = []
        eps_phi_deg = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.fullmatch(r"eps_phi_deg\s*[=:]\s*(\S+)", line)
            if m:
                eps_phi_deg = float(m.group(1))
                continue
            parts = [p for p in re.split(r"[,\s]+", line) if p]
            if len(parts) != 5:
                raise ValueError(f"line {lineno}: expected 5 columns, got {len(parts)}")
            f_min, f_max, z_min, z_max, pct = map(float, parts)
            regions.append(ContourRegion(f_min, f_max, z_min, z_max, pct / 100.0))
        if eps_phi_deg is None:
            raise ValueError("missing 'eps_phi_deg = <value>' line")
        return cls(regions=tuple(regions), eps_phi=math.radians(eps_phi_deg))

    @classmethod
    def load(cls, path) -> "NoiseModel":
        return cls.from_text(Path(path).read_text())


def sigma_polar(model: NoiseModel, f, rho):
    """Polar standard deviations: sigma_rho = rho*eps_rho/3, sigma_phi = eps_phi/3."""
    rho = np.asarray(rho, dtype=float)
    s_rho = rho * model.eps_rho(f, rho) / 3.0
    s_phi = np.full(np.shape(s_rho), model.eps_phi / 3.0)[()]
    return s_rho[()] if isinstance(s_rho, np.ndarray) else s_rho, s_phi


def _block(a, b, c) -> np.ndarray:
    a, b, c = np.broadcast_arrays(a, b, c)
    return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)


def cov_polar(model: NoiseModel, f, rho) -> np.ndarray:
    """Diagonal polar block diag(sigma_rho^2, sigma_phi^2); magnitude and phase are uncorrelated."""
    s_rho, s_phi = sigma_polar(model, f, rho)
    return _block(np.square(s_rho), 0.0, np.square(s_phi))


def cov_cartesian_measured(rho_meas, phi_meas, sigma_rho, sigma_phi) -> np.ndarray:
    """Covariance of (R, X) about a measured point, debiased conversion form.

    Standard result for converting a polar measurement with Gaussian range
    and bearing noise (Lerro & Bar-Shalom, 1993), evaluated at the measured
    magnitude and phase.
    """
    rho = np.asarray(rho_meas, dtype=float)
    phi = np.asarray(phi_meas, dtype=float)
    sr2 = np.square(sigma_rho)
    s = np.square(sigma_phi)
    c2, s2 = np.cos(phi) ** 2, np.sin(phi) ** 2
    e2 = np.exp(-2.0 * s)
    ch1, ch2, sh1, sh2 = np.cosh(s), np.cosh(2.0 * s), np.sinh(s), np.sinh(2.0 * s)
    r2 = rho**2
    var_r = r2 * e2 * (c2 * (ch2 - ch1) + s2 * (sh2 - sh1)) + sr2 * e2 * (
        c2 * (2.0 * ch2 - ch1) + s2 * (2.0 * sh2 - sh1)
    )
    var_x = r2 * e2 * (s2 * (ch2 - ch1) + c2 * (sh2 - sh1)) + sr2 * e2 * (
        s2 * (2.0 * ch2 - ch1) + c2 * (2.0 * sh2 - sh1)
    )
    cov = np.sin(phi) * np.cos(phi) * np.exp(-4.0 * s) * (sr2 + (sr2 + r2) * (1.0 - np.exp(s)))
    return _block(var_r, cov, var_x)


def cartesian_moments(rho, phi, sigma_rho, sigma_phi) -> np.ndarray:
    """Exact covariance of (rho+drho)*exp(j(phi+dphi)) projected on (R, X).

    Uses E[cos(phi+d)] = cos(phi) exp(-s^2/2) and E[cos 2(phi+d)] =
    cos(2 phi) exp(-2 s^2) for d ~ N(0, s^2). The terms of order rho^2
    cancel analytically; they are grouped through expm1 so the result keeps
    full relative precision for small phase noise and is exactly zero
    without noise.
    """
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    s = np.square(sigma_phi)
    e1, e2 = np.exp(-s), np.exp(-2.0 * s)
    g = -np.expm1(-s)  # 1 - exp(-s)
    r2, sr2 = rho**2, np.square(sigma_rho)
    cos2, sin2 = np.cos(2 * phi), np.sin(2 * phi)
    var_r = 0.5 * (r2 * g * (1.0 - cos2 * e1) + sr2 * (1.0 + cos2 * e2))
    var_x = 0.5 * (r2 * g * (1.0 + cos2 * e1) + sr2 * (1.0 - cos2 * e2))
    cov = 0.5 * sin2 * (sr2 * e2 - r2 * g * e1)
    return _block(var_r, cov, var_x)


def cartesian_moments_derivatives(rho, phi, eps_rho, sigma_phi):
    """d/drho and d/dphi of :func:`cartesian_moments` with sigma_rho = rho*eps_rho/3.

    ``eps_rho`` is held constant (contour lookups are piecewise constant),
    so every element is proportional to rho^2.
    """
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    k2 = np.square(np.asarray(eps_rho, dtype=float) / 3.0)
    s = np.square(sigma_phi)
    e1, e2 = np.exp(-s), np.exp(-2.0 * s)
    g = -np.expm1(-s)
    r2 = rho**2
    cos2, sin2 = np.cos(2 * phi), np.sin(2 * phi)

    q = cartesian_moments(rho, phi, rho * np.sqrt(k2), np.sqrt(s))
    with np.errstate(divide="ignore", invalid="ignore"):
        d_rho = np.where(rho[..., None, None] > 0, 2.0 * q / rho[..., None, None], 0.0)
    a = r2 * sin2 * (g * e1 - k2 * e2)
    d_phi = _block(a, r2 * cos2 * (k2 * e2 - g * e1), -a)
    return d_rho, d_phi


def cov_cartesian_true(theta, omega, model: NoiseModel) -> np.ndarray:
    """Cartesian covariance implied by the model impedance z_eq(theta, omega)."""
    from .ecm import z_eq

    z = np.asarray(z_eq(theta, omega))
    rho, phi = np.abs(z), np.angle(z)
    s_rho, s_phi = sigma_polar(model, np.asarray(omega) / (2 * np.pi), rho)
    return cartesian_moments(rho, phi, s_rho, s_phi)


def is_positive_definite(block) -> np.ndarray:
    block = np.asarray(block)
    a, b, c = block[..., 0, 0], block[..., 0, 1], block[..., 1, 1]
    return (a > 0) & (c > 0) & (a * c - b * b > 0)
