"""Synthetic EIS data: frequency grids, spectra and a virtual instrument.

Noise for each measured point comes from its own random substream keyed by
``(seed, frequency bits, repeat)``. A point's noise therefore does not depend
on which other frequencies are in the sweep or on their order, and
re-measuring a single frequency never disturbs the rest of the spectrum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ecm import EcmParams, z_eq
from .noise import NoiseModel, cov_cartesian_measured, sigma_polar


@dataclass(frozen=True)
class FrequencyGrid:
    omegas: np.ndarray
    f_min: float
    f_max: float
    adjusted: frozenset = frozenset()

    def __post_init__(self):
        w = np.array(self.omegas, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "omegas", w)
        object.__setattr__(self, "adjusted", frozenset(int(i) for i in self.adjusted))
        if w.ndim != 1 or w.size == 0:
            raise ValueError("grid needs a non-empty 1-D omega vector")
        lo, hi = 2 * math.pi * self.f_min, 2 * math.pi * self.f_max
        # one ulp of slack: omegas are often built as 2*pi*f
        if np.any(w < lo * (1 - 1e-15)) or np.any(w > hi * (1 + 1e-15)):
            raise ValueError("grid frequencies outside [f_min, f_max]")
        if not self.adjusted <= set(range(w.size)):
            raise ValueError("adjusted index out of range")

    def __len__(self):
        return self.omegas.size

    @property
    def freqs(self) -> np.ndarray:
        return self.omegas / (2 * math.pi)

    @property
    def free(self) -> list[int]:
        return [i for i in range(len(self)) if i not in self.adjusted]

    def with_omega(self, index: int, omega: float) -> "FrequencyGrid":
        w = self.omegas.copy()
        w[index] = omega
        return replace(self, omegas=w)

    def with_adjusted(self, index: int) -> "FrequencyGrid":
        return replace(self, adjusted=self.adjusted | {index})


def logspace_grid(f_min: float, f_max: float, points_per_decade: int) -> FrequencyGrid:
    """Log-spaced grid with ``decades * ppd + 1`` points and exact endpoints."""
    if not (0 < f_min < f_max):
        raise ValueError("need 0 < f_min < f_max")
    if int(points_per_decade) != points_per_decade or points_per_decade < 1:
        raise ValueError("points_per_decade must be a positive integer")
    lo, hi = math.log10(f_min), math.log10(f_max)
    steps = (hi - lo) * points_per_decade
    n = int(round(steps))
    if n < 1 or abs(steps - n) > 1e-9:
        raise ValueError("f_max/f_min must span a whole number of grid steps")
    f = 10.0 ** (lo + np.arange(n + 1) / points_per_decade)
    f[0], f[-1] = f_min, f_max
    return FrequencyGrid(2 * math.pi * f, f_min, f_max)


def logspace_n(f_min: float, f_max: float, n: int) -> FrequencyGrid:
    """``n`` log-spaced points between ``f_min`` and ``f_max`` inclusive."""
    if not (0 < f_min < f_max) or n < 2:
        raise ValueError("need 0 < f_min < f_max and n >= 2")
    f = np.logspace(math.log10(f_min), math.log10(f_max), n)
    f[0], f[-1] = f_min, f_max
    return FrequencyGrid(2 * math.pi * f, f_min, f_max)


@dataclass
class ImpedanceSpectrum:
    """Measured spectrum; ``freq`` in Hz is the stored abscissa.

    ``sigma_rho``/``sigma_phi`` are the instrument standard deviations at the
    measured magnitude; both covariance views derive from them.
    """

    freq: np.ndarray
    z: np.ndarray
    sigma_rho: np.ndarray
    sigma_phi: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freq = np.asarray(self.freq, dtype=float).copy()
        self.z = np.asarray(self.z, dtype=complex).copy()
        self.sigma_rho = np.broadcast_to(np.asarray(self.sigma_rho, dtype=float), self.freq.shape).copy()
        self.sigma_phi = np.broadcast_to(np.asarray(self.sigma_phi, dtype=float), self.freq.shape).copy()
        if self.z.shape != self.freq.shape:
            raise ValueError("freq and z must have the same length")
        if np.any(~(self.freq > 0)):
            raise ValueError("frequencies must be strictly positive")

    def __len__(self):
        return self.freq.size

    @property
    def omega(self) -> np.ndarray:
        return 2 * math.pi * self.freq

    @property
    def re(self):
        return self.z.real

    @property
    def im(self):
        return self.z.imag

    @property
    def rho(self):
        return np.abs(self.z)

    @property
    def phi(self):
        return np.angle(self.z)

    @property
    def cov_polar(self) -> np.ndarray:
        out = np.zeros((len(self), 2, 2))
        out[:, 0, 0] = self.sigma_rho**2
        out[:, 1, 1] = self.sigma_phi**2
        return out

    @property
    def cov_cart(self) -> np.ndarray:
        return cov_cartesian_measured(self.rho, self.phi, self.sigma_rho, self.sigma_phi)

    def sorted(self) -> "ImpedanceSpectrum":
        order = np.argsort(self.freq, kind="stable")
        return ImpedanceSpectrum(
            self.freq[order], self.z[order], self.sigma_rho[order], self.sigma_phi[order], dict(self.meta)
        )

    def subset(self, index) -> "ImpedanceSpectrum":
        return ImpedanceSpectrum(
            self.freq[index], self.z[index], self.sigma_rho[index], self.sigma_phi[index], dict(self.meta)
        )

    def scaled(self, factor: float) -> "ImpedanceSpectrum":
        """Impedances and magnitude sigmas multiplied by ``factor``."""
        return ImpedanceSpectrum(
            self.freq, self.z * factor, self.sigma_rho * factor, self.sigma_phi, dict(self.meta)
        )

    def with_point(self, index: int, point: "SpectrumPoint") -> "ImpedanceSpectrum":
        out = ImpedanceSpectrum(self.freq, self.z, self.sigma_rho, self.sigma_phi, dict(self.meta))
        out.freq[index] = point.freq
        out.z[index] = point.z
        out.sigma_rho[index] = point.sigma_rho
        out.sigma_phi[index] = point.sigma_phi
        return out


@dataclass(frozen=True)
class SpectrumPoint:
    freq: float
    z: complex
    sigma_rho: float
    sigma_phi: float

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.freq

    @property
    def cov_polar(self) -> np.ndarray:
        return np.diag([self.sigma_rho**2, self.sigma_phi**2])

    @property
    def cov_cart(self) -> np.ndarray:
        return cov_cartesian_measured(abs(self.z), np.angle(self.z), self.sigma_rho, self.sigma_phi)


def point_rng(seed: int, freq: float, repeat: int = 0) -> np.random.Generator:
    """Independent substream for one (seed, frequency, repeat) triple."""
    bits = int(np.float64(freq).view(np.uint64))
    ss = np.random.SeedSequence(int(seed), spawn_key=(bits >> 32, bits & 0xFFFFFFFF, int(repeat)))
    return np.random.Generator(np.random.PCG64(ss))


def _measure_at_freq(theta, freq, model, seed, repeat, add_noise) -> SpectrumPoint:
    spec = _sweep(theta, np.array([freq]), model, seed, [repeat], add_noise)
    return SpectrumPoint(float(spec.freq[0]), complex(spec.z[0]), float(spec.sigma_rho[0]), float(spec.sigma_phi[0]))


def measure(theta_true: EcmParams, omega: float, model: NoiseModel, rng_seed: int,
            repeat: int = 0, add_noise: bool = True) -> SpectrumPoint:
    """One noisy impedance reading at ``omega``.

    The standard deviations attached to the point are evaluated at the
    measured magnitude. With ``add_noise=False`` the exact model impedance is
    returned but the instrument sigmas are still attached.
    """
    if not omega > 0:
        from .errors import DomainError

        raise DomainError("angular frequency must be strictly positive")
    return _measure_at_freq(theta_true, omega / (2 * math.pi), model, rng_seed, repeat, add_noise)


def measure_sweep(theta_true: EcmParams, grid, model: NoiseModel, rng_seed: int,
                  add_noise: bool = True) -> ImpedanceSpectrum:
    """Measure every grid frequency; returns the spectrum in grid order."""
    omegas = grid.omegas if isinstance(grid, FrequencyGrid) else np.asarray(grid, dtype=float)
    freqs = np.asarray(omegas, dtype=float) / (2 * math.pi)
    return _sweep(theta_true, freqs, model, rng_seed, [0] * freqs.size, add_noise)


def _sweep(theta_true, freqs, model, rng_seed, repeats, add_noise) -> ImpedanceSpectrum:
    freqs = np.asarray(freqs, dtype=float)
    z = np.asarray(z_eq(theta_true, 2 * math.pi * freqs), dtype=complex).reshape(freqs.shape)
    if add_noise and not model.is_noiseless:
        rho, phi = np.abs(z), np.angle(z)
        s_rho, s_phi = sigma_polar(model, freqs, rho)
        draws = np.array([point_rng(rng_seed, f, r).standard_normal(2) for f, r in zip(freqs, repeats)])
        draws = draws.reshape(freqs.size, 2)
        rho_m = rho + s_rho * draws[:, 0]
        phi_m = phi + s_phi * draws[:, 1]
        z = rho_m * (np.cos(phi_m) + 1j * np.sin(phi_m))
    s_rho, s_phi = sigma_polar(model, freqs, np.abs(z))
    return ImpedanceSpectrum(
        freq=freqs,
        z=z,
        sigma_rho=s_rho,
        sigma_phi=s_phi,
        meta={
            "seed": int(rng_seed),
            "noise_model": model.identifier,
            "noise_added": bool(add_noise and not model.is_noiseless),
            "truth": theta_true.to_dict(),
        },
    )


class VirtualInstrument:
    """Simulated EIS device with the two calls a real instrument offers.

    ``sweep`` measures a whole frequency vector; ``measure`` re-measures one
    frequency. Repeated readings at the same frequency draw fresh noise.
    """

    def __init__(self, theta_true: EcmParams, model: NoiseModel, seed: int, add_noise: bool = True):
        self.theta_true = theta_true
        self.model = model
        self.seed = int(seed)
        self.add_noise = add_noise
        self._repeats: dict[float, int] = {}

    def _next_repeat(self, freq: float) -> int:
        n = self._repeats.get(freq, 0)
        self._repeats[freq] = n + 1
        return n

    def sweep(self, omegas) -> ImpedanceSpectrum:
        freqs = np.asarray(omegas, dtype=float) / (2 * math.pi)
        repeats = [self._next_repeat(float(f)) for f in freqs]
        return _sweep(self.theta_true, freqs, self.model, self.seed, repeats, self.add_noise)

    def measure(self, omega: float) -> SpectrumPoint:
        freq = omega / (2 * math.pi)
        return _measure_at_freq(
            self.theta_true, freq, self.model, self.seed, self._next_repeat(freq), self.add_noise
        )
