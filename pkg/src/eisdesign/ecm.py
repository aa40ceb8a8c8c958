"""Wide-band Li-ion equivalent circuit: R_s + CPE_HF + 2 x Zarc + Warburg.

All impedance functions are vectorised over ``omega`` (rad/s) and return
complex numpy values. Complex powers ``(j*omega)**phi`` are formed in polar
form (modulus ``omega**phi``, angle ``phi*pi/2``) so negative exponents never
touch a branch cut.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields, replace

import numpy as np

from .errors import DomainError

PARAM_NAMES = (
    "r_s", "q_hf", "phi_hf", "r_1", "q_1", "phi_1", "r_2", "q_2", "phi_2", "q_w",
)
PARAM_LABELS = (
    "R_s", "Q_HF", "phi_HF", "R_1", "Q_1", "phi_1", "R_2", "Q_2", "phi_2", "Q_W",
)
N_PARAMS = len(PARAM_NAMES)

# indices into the canonical vector
I_RS, I_QHF, I_PHF, I_R1, I_Q1, I_P1, I_R2, I_Q2, I_P2, I_QW = range(N_PARAMS)
POSITIVE = (I_RS, I_QHF, I_R1, I_Q1, I_R2, I_Q2, I_QW)
EXPONENTS = (I_PHF, I_P1, I_P2)


@dataclass(frozen=True)
class EcmParams:
    """Ten circuit parameters in canonical order."""

    r_s: float
    q_hf: float
    phi_hf: float
    r_1: float
    q_1: float
    phi_1: float
    r_2: float
    q_2: float
    phi_2: float
    q_w: float

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, float(getattr(self, f.name)))

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values, validate: bool = True) -> "EcmParams":
        values = np.asarray(values, dtype=float).ravel()
        if values.size != N_PARAMS:
            raise ValueError(f"expected {N_PARAMS} parameters, got {values.size}")
        theta = cls(*values.tolist())
        if validate:
            theta.validate()
        return theta

    def to_dict(self) -> dict:
        return dict(zip(PARAM_NAMES, astuple(self)))

    @classmethod
    def from_dict(cls, mapping: dict, validate: bool = True) -> "EcmParams":
        missing = [n for n in PARAM_NAMES if n not in mapping]
        if missing:
            raise ValueError(f"missing parameters: {missing}")
        return cls.from_array([mapping[n] for n in PARAM_NAMES], validate=validate)

    def replace(self, **changes) -> "EcmParams":
        out = replace(self, **changes)
        out.validate()
        return out

    def violations(self) -> list[str]:
        """Names of parameters outside their domain (empty when valid)."""
        v = self.to_array()
        bad = [PARAM_NAMES[i] for i in POSITIVE if not (v[i] > 0 and np.isfinite(v[i]))]
        if not (-1.0 <= self.phi_hf < 0.0):
            bad.append("phi_hf")
        for i in (I_P1, I_P2):
            if not (0.0 < v[i] <= 1.0):
                bad.append(PARAM_NAMES[i])
        return bad

    def is_valid(self) -> bool:
        return not self.violations()

    def validate(self) -> "EcmParams":
        bad = self.violations()
        if bad:
            raise DomainError(f"parameters outside domain: {', '.join(bad)}")
        return self


# Reference circuit used as ground truth by the simulations and the acceptance suite.
REFERENCE = EcmParams(
    r_s=3.8e-2, q_hf=1.667e4, phi_hf=-0.85,
    r_1=0.45, q_1=2.0e-2, phi_1=0.9,
    r_2=0.65, q_2=0.4, phi_2=0.9,
    q_w=3.693,
)


@dataclass(frozen=True)
class ZarcDescriptor:
    center: tuple[float, float]  # (R, X) of the depressed-circle centre
    radius: float
    tau: float
    omega_c: float


def _omega(omega) -> np.ndarray:
    w = np.asarray(omega, dtype=float)
    if np.any(~(w > 0)):
        raise DomainError("angular frequency must be strictly positive")
    return w


def _out(z):
    return z[()] if isinstance(z, np.ndarray) and z.ndim == 0 else z


def jw_power(omega, phi):
    """``(j*omega)**phi`` evaluated in polar form."""
    w = _omega(omega)
    return _out(w**phi * np.exp(0.5j * np.pi * phi))


def log_jw(omega):
    """Principal logarithm of ``j*omega``."""
    w = _omega(omega)
    return _out(np.log(w) + 0.5j * np.pi)


def _check_positive(**kw):
    for name, value in kw.items():
        if not value > 0:
            raise DomainError(f"{name} must be > 0, got {value}")


def z_hf(q_hf, phi_hf, omega):
    """Inductive high-frequency CPE, exponent in [-1, 0)."""
    _check_positive(q_hf=q_hf)
    if not -1.0 <= phi_hf < 0.0:
        raise DomainError(f"phi_hf must lie in [-1, 0), got {phi_hf}")
    return _out(1.0 / (jw_power(omega, phi_hf) * q_hf))


def z_cpe(q, phi, omega):
    _check_positive(q=q)
    if not 0.0 < phi <= 1.0:
        raise DomainError(f"phi must lie in (0, 1], got {phi}")
    return _out(1.0 / (jw_power(omega, phi) * q))


def z_warburg(q_w, omega):
    _check_positive(q_w=q_w)
    return _out(1.0 / (jw_power(omega, 0.5) * q_w))


def z_zarc(r, q, phi, omega):
    """Resistor ``r`` in parallel with a CPE ``(q, phi)``."""
    _check_positive(r=r, q=q)
    if not 0.0 < phi <= 1.0:
        raise DomainError(f"phi must lie in (0, 1], got {phi}")
    return _out(r / (1.0 + r * q * jw_power(omega, phi)))


def z_eq(theta: EcmParams, omega):
    """Equivalent impedance of the full circuit."""
    theta.validate()
    w = _omega(omega)
    z = (
        theta.r_s
        + 1.0 / (jw_power(w, theta.phi_hf) * theta.q_hf)
        + theta.r_1 / (1.0 + theta.r_1 * theta.q_1 * jw_power(w, theta.phi_1))
        + theta.r_2 / (1.0 + theta.r_2 * theta.q_2 * jw_power(w, theta.phi_2))
        + 1.0 / (jw_power(w, 0.5) * theta.q_w)
    )
    return _out(z)


def z_eq_complex_jacobian(theta: EcmParams, omega) -> np.ndarray:
    """Complex derivatives dZ/dtheta, shape ``omega.shape + (10,)``."""
    theta.validate()
    w = _omega(omega)
    lg = np.log(w) + 0.5j * np.pi
    jac = np.zeros(w.shape + (N_PARAMS,), dtype=complex)

    jac[..., I_RS] = 1.0
    zh = 1.0 / (jw_power(w, theta.phi_hf) * theta.q_hf)
    jac[..., I_QHF] = -zh / theta.q_hf
    jac[..., I_PHF] = -zh * lg

    for ir, iq, ip in ((I_R1, I_Q1, I_P1), (I_R2, I_Q2, I_P2)):
        r, q, phi = theta.to_array()[[ir, iq, ip]]
        p = jw_power(w, phi)
        d2 = (1.0 + r * q * p) ** 2
        jac[..., ir] = 1.0 / d2
        jac[..., iq] = -(r**2) * p / d2
        jac[..., ip] = -(r**2) * q * p * lg / d2

    jac[..., I_QW] = -1.0 / (jw_power(w, 0.5) * theta.q_w**2)
    return jac


def z_eq_complex_hessian(theta: EcmParams, omega) -> np.ndarray:
    """Complex second derivatives, shape ``omega.shape + (10, 10)``."""
    theta.validate()
    w = _omega(omega)
    lg = np.log(w) + 0.5j * np.pi
    hess = np.zeros(w.shape + (N_PARAMS, N_PARAMS), dtype=complex)

    def put(i, j, value):
        hess[..., i, j] = value
        hess[..., j, i] = value

    zh = 1.0 / (jw_power(w, theta.phi_hf) * theta.q_hf)
    put(I_QHF, I_QHF, 2.0 * zh / theta.q_hf**2)
    put(I_QHF, I_PHF, zh * lg / theta.q_hf)
    put(I_PHF, I_PHF, zh * lg**2)

    for ir, iq, ip in ((I_R1, I_Q1, I_P1), (I_R2, I_Q2, I_P2)):
        r, q, phi = theta.to_array()[[ir, iq, ip]]
        p = jw_power(w, phi)
        u = r * q * p
        d3 = (1.0 + u) ** 3
        put(ir, ir, -2.0 * q * p / d3)
        put(ir, iq, -2.0 * r * p / d3)
        put(ir, ip, -2.0 * r * q * p * lg / d3)
        put(iq, iq, 2.0 * r**3 * p**2 / d3)
        put(iq, ip, -(r**2) * p * lg * (1.0 - u) / d3)
        put(ip, ip, -(r**2) * q * p * lg**2 * (1.0 - u) / d3)

    put(I_QW, I_QW, 2.0 / (jw_power(w, 0.5) * theta.q_w**3))
    return hess


def z_eq_jacobian(theta: EcmParams, omega) -> np.ndarray:
    """Real Jacobian of (R_eq, X_eq), shape ``omega.shape + (2, 10)``."""
    jc = z_eq_complex_jacobian(theta, omega)
    return np.stack([jc.real, jc.imag], axis=-2)


def polar_derivatives(z, dz, d2z=None):
    """Chain rule from complex derivatives to (rho, phi) derivatives.

    Works on ``w = log z``: ``phi = Im w`` and ``rho = exp(Re w)``. Returns
    ``(d_rho, d_phi)`` and, when ``d2z`` is given, ``(dd_rho, dd_phi)`` too.
    """
    z = np.asarray(z)
    dw = dz / z[..., None]
    rho = np.abs(z)
    d_rho = rho[..., None] * dw.real
    d_phi = dw.imag
    if d2z is None:
        return d_rho, d_phi
    d2w = d2z / z[..., None, None] - dw[..., :, None] * dw[..., None, :]
    dd_rho = rho[..., None, None] * (d2w.real + dw.real[..., :, None] * dw.real[..., None, :])
    dd_phi = d2w.imag
    return d_rho, d_phi, dd_rho, dd_phi


def polar_jacobian(theta: EcmParams, omega) -> np.ndarray:
    """Real Jacobian of (rho, phi), shape ``omega.shape + (2, 10)``."""
    z = np.asarray(z_eq(theta, omega))
    d_rho, d_phi = polar_derivatives(z, z_eq_complex_jacobian(theta, omega))
    return np.stack([d_rho, d_phi], axis=-2)


def zarc_descriptor(r: float, q: float, phi: float) -> ZarcDescriptor:
    """Depressed-circle geometry and time constant of a single Zarc."""
    _check_positive(r=r, q=q)
    if not 0.0 < phi <= 1.0:
        raise DomainError(f"phi must lie in (0, 1], got {phi}")
    half = 0.5 * np.pi * phi
    # centre lies above the real axis in the (R, X) plane: the arc is depressed in the Nyquist view
    center = (0.5 * r, 0.5 * r / np.tan(half))
    radius = 0.5 * r / np.sin(half)
    tau = (r * q) ** (1.0 / phi)
    return ZarcDescriptor(center=center, radius=float(radius), tau=float(tau), omega_c=float(1.0 / tau))


def time_constants(theta: EcmParams) -> tuple[float, float]:
    return (
        zarc_descriptor(theta.r_1, theta.q_1, theta.phi_1).tau,
        zarc_descriptor(theta.r_2, theta.q_2, theta.phi_2).tau,
    )


def r_sigma(theta: EcmParams) -> float:
    """Sum of the three resistances: the low-frequency asymptote intercept."""
    return theta.r_s + theta.r_1 + theta.r_2


def hf_slope(phi_hf: float) -> float:
    """Slope dX/dR of the high-frequency asymptote."""
    return float(-np.tan(0.5 * np.pi * phi_hf))
