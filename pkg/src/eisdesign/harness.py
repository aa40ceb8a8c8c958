"""Experiment plumbing: configuration, Monte-Carlo runs and figure bundles.

A Monte-Carlo experiment measures the truth on a fixed grid once per seed,
initializes from geometry, fits, and aggregates the initial guesses and the
estimates into per-parameter tables. Seeds run in a process pool; results
are collected in seed order so the reduction never depends on scheduling.
"""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .cnls import FitConfig, fit
from .design import DEFAULT_MU, HISTORY_COLUMNS, crlb_trajectory, run_design
from .ecm import PARAM_NAMES, REFERENCE, EcmParams, z_eq
from .errors import EisError
from .fisher import contribution_curves, fim
from .initializer import initialize
from .noise import NoiseModel
from .synth import FrequencyGrid, VirtualInstrument, logspace_grid, measure_sweep

log = logging.getLogger(__name__)

MAX_NONCONVERGED = 0.01


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_freqs(text):
    if text is None or isinstance(text, (list, tuple)):
        return None if text is None else tuple(float(x) for x in text)
    parts = [p for p in str(text).replace(",", " ").split() if p]
    return tuple(float(p) for p in parts) if parts else None


@dataclass
class ExperimentConfig:
    truth: EcmParams = REFERENCE
    f_min: float = 1e-2
    f_max: float = 1e4
    ppd: int = 10
    freqs: tuple | None = None  # explicit grid in Hz; overrides f_min/f_max/ppd
    eps_rho: float = 1.0  # percent
    eps_phi: float = 1.0  # degrees
    noise_file: str | None = None
    noise: bool = True
    runs: int = 1000
    seed: int = 0
    coordinates: str = "polar"
    compare_coordinates: bool = False
    workers: int = 0  # 0: one per CPU
    mu: float = DEFAULT_MU
    scaling: str = "relative"
    out: str = "out"

    _SCALARS = {
        "f_min": float, "f_max": float, "ppd": int, "eps_rho": float, "eps_phi": float,
        "noise_file": str, "noise": _parse_bool, "runs": int, "seed": int, "coordinates": str,
        "compare_coordinates": _parse_bool, "workers": int, "mu": float, "scaling": str, "out": str,
        "freqs": _parse_freqs,
    }

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.coordinates not in ("polar", "cartesian"):
            raise ValueError("coordinates must be 'polar' or 'cartesian'")
        if self.scaling not in ("relative", "absolute"):
            raise ValueError("scaling must be 'relative' or 'absolute'")
        if not 0 < self.f_min < self.f_max:
            raise ValueError(f"need 0 < f_min < f_max, got {self.f_min:g}, {self.f_max:g}")
        if self.ppd < 1 or self.workers < 0:
            raise ValueError("ppd must be >= 1 and workers >= 0")
        if not (self.eps_rho > 0 and self.eps_phi > 0 and self.mu > 0):
            raise ValueError("eps_rho, eps_phi and mu must be > 0")
        if self.noise_file is not None and not Path(self.noise_file).exists():
            raise FileNotFoundError(self.noise_file)

    @classmethod
    def from_mapping(cls, values: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        """Overlay ``key -> text`` pairs (config file or CLI) on ``base``.

        Keys are the config field names or parameter names (``r_s``, ...)
        for the truth. ``None`` values are ignored.
        """
        base = base or cls()
        truth = base.truth.to_dict()
        changes = {}
        for key, value in values.items():
            if value is None:
                continue
            key = key.replace("-", "_")
            if key in truth:
                truth[key] = float(value)
            elif key in cls._SCALARS:
                changes[key] = cls._SCALARS[key](value)
            else:
                raise ValueError(f"unknown config key {key!r}")
        return replace(base, truth=EcmParams.from_dict(truth), **changes)

    @classmethod
    def load(cls, path, base=None) -> "ExperimentConfig":
        return cls.from_mapping(read_config(path), base)

    def noise_model(self) -> NoiseModel:
        if self.noise_file:
            return NoiseModel.load(self.noise_file)
        return NoiseModel.uniform(self.eps_rho, self.eps_phi)

    def grid(self) -> FrequencyGrid:
        if self.freqs:
            f = np.sort(np.asarray(self.freqs, dtype=float))
            return FrequencyGrid(2 * math.pi * f, float(f[0]), float(f[-1]))
        return logspace_grid(self.f_min, self.f_max, self.ppd)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "truth"}
        d["truth"] = self.truth.to_dict()
        d["freqs"] = list(self.freqs) if self.freqs else None
        return d

    def hash_payload(self) -> dict:
        # the output directory and worker count do not change any result
        d = self.to_dict()
        d.pop("out")
        d.pop("workers")
        return d


def read_config(path) -> dict:
    """Plain-text ``key = value`` pairs; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


# ---------------------------------------------------------------- Monte Carlo


@dataclass
class RunRecord:
    seed: int
    init: np.ndarray
    estimate: np.ndarray
    converged: bool
    iterations: int
    cost: float
    message: str = ""
    estimate_other: np.ndarray | None = None  # fit in the other coordinate system
    provenance: tuple = ()


def _nan10():
    return np.full(len(PARAM_NAMES), np.nan)


def run_one(seed: int, truth: EcmParams, grid: FrequencyGrid, model: NoiseModel, add_noise: bool,
            coordinates: str = "polar", compare: bool = False) -> RunRecord:
    """Measure, initialize and fit one seed; numerical failures are recorded, not raised."""
    spec = measure_sweep(truth, grid, model, seed, add_noise=add_noise)
    try:
        init = initialize(spec, model)
    except EisError as exc:
        return RunRecord(seed, _nan10(), _nan10(), False, 0, math.nan, f"init: {exc}")
    try:
        res = fit(spec, init.theta, FitConfig(coordinates=coordinates))
    except EisError as exc:
        return RunRecord(seed, init.theta.to_array(), _nan10(), False, 0, math.nan, f"fit: {exc}",
                         provenance=tuple(init.provenance))
    other = None
    if compare:
        alt = "cartesian" if coordinates == "polar" else "polar"
        try:
            other = fit(spec, init.theta, FitConfig(coordinates=alt)).theta_hat.to_array()
        except EisError:
            other = _nan10()
    return RunRecord(seed, init.theta.to_array(), res.theta_hat.to_array(), bool(res.converged),
                     int(res.iterations), float(res.cost), res.message, other, tuple(init.provenance))


def _run_chunk(args):
    seeds, truth, grid, model, add_noise, coordinates, compare = args
    return [run_one(s, truth, grid, model, add_noise, coordinates, compare) for s in seeds]


@dataclass
class MonteCarloReport:
    truth: EcmParams
    crlb: np.ndarray
    records: list
    elapsed: float
    config: dict = field(default_factory=dict)

    @property
    def runs(self) -> int:
        return len(self.records)

    @property
    def converged(self) -> np.ndarray:
        return np.array([r.converged for r in self.records])

    @property
    def nonconverged_fraction(self) -> float:
        return float(1.0 - self.converged.mean())

    @property
    def initial(self) -> np.ndarray:
        return np.array([r.init for r in self.records])

    @property
    def estimates(self) -> np.ndarray:
        return np.array([r.estimate for r in self.records])

    def _good(self, values):
        return values[self.converged & np.all(np.isfinite(values), axis=1)]

    def initial_stats(self) -> dict:
        """Mean initial guess, its relative bias and the mean absolute relative error."""
        x = self.initial
        x = x[np.all(np.isfinite(x), axis=1)]
        t = self.truth.to_array()
        rel = x / t - 1.0
        return {
            "mean": x.mean(axis=0),
            "bias": x.mean(axis=0) / t - 1.0,
            "mean_abs_error": np.abs(rel).mean(axis=0),
        }

    def estimate_stats(self) -> dict:
        x = self._good(self.estimates)
        t = self.truth.to_array()
        var = x.var(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(t.size)
        return {
            "mean": x.mean(axis=0),
            "bias": x.mean(axis=0) / t - 1.0,
            "mean_abs_error": np.abs(x / t - 1.0).mean(axis=0),
            "variance": var,
            "crlb": self.crlb,
            "ratio": var / self.crlb,
        }

    def coordinate_agreement(self) -> np.ndarray | None:
        """Per-run max relative difference between the two coordinate fits."""
        if any(r.estimate_other is None for r in self.records):
            return None
        a = self.estimates
        b = np.array([r.estimate_other for r in self.records])
        return np.max(np.abs(b / a - 1.0), axis=1)

    def init_rows(self):
        s = self.initial_stats()
        t = self.truth.to_array()
        for k, name in enumerate(PARAM_NAMES):
            yield [name, t[k], s["mean"][k], 100 * s["mean_abs_error"][k], 100 * s["bias"][k]]

    def estimate_rows(self):
        s = self.estimate_stats()
        t = self.truth.to_array()
        for k, name in enumerate(PARAM_NAMES):
            yield [name, t[k], s["mean"][k], 100 * s["bias"][k], 100 * s["mean_abs_error"][k],
                   s["variance"][k], s["crlb"][k], s["ratio"][k]]

    def summary(self) -> dict:
        agree = self.coordinate_agreement()
        return {
            "runs": self.runs,
            "converged": int(self.converged.sum()),
            "nonconverged_fraction": self.nonconverged_fraction,
            "elapsed_s": self.elapsed,
            "failures": [{"seed": r.seed, "message": r.message} for r in self.records if not r.converged],
            "max_coordinate_disagreement": None if agree is None else float(np.nanmax(agree)),
            "config": self.config,
        }

    def write(self, out_dir, header=()) -> Path:
        out = Path(out_dir)
        io.write_table(out / "init_errors.csv", INIT_COLUMNS, self.init_rows(), header)
        io.write_table(out / "estimates.csv", ESTIMATE_COLUMNS, self.estimate_rows(), header)
        cols = ["seed", "converged", "iterations", "cost"]
        cols += [f"init_{n}" for n in PARAM_NAMES] + [f"est_{n}" for n in PARAM_NAMES]
        has_other = all(r.estimate_other is not None for r in self.records)
        if has_other:
            cols += [f"alt_{n}" for n in PARAM_NAMES]
        rows = []
        for r in self.records:
            row = [str(r.seed), "1" if r.converged else "0", str(r.iterations), r.cost, *r.init, *r.estimate]
            if has_other:
                row += list(r.estimate_other)
            rows.append(row)
        io.write_table(out / "runs.csv", cols, rows, header)
        io.write_json(out / "summary.json", self.summary())
        return out


INIT_COLUMNS = ("param", "truth", "mean_initial", "mean_abs_rel_error_pct", "rel_bias_pct")
ESTIMATE_COLUMNS = ("param", "truth", "mean_estimate", "rel_bias_pct", "mean_abs_rel_error_pct",
                  "variance", "crlb", "variance_over_crlb")


def _default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))


def run_montecarlo(config: ExperimentConfig) -> MonteCarloReport:
    grid = config.grid()
    model = config.noise_model()
    truth = config.truth
    crlb = fim(truth, grid, model, config.coordinates).crlb
    seeds = list(range(config.seed, config.seed + config.runs))
    workers = config.workers or _default_workers()
    t0 = time.perf_counter()
    common = (truth, grid, model, config.noise, config.coordinates, config.compare_coordinates)
    if workers == 1 or config.runs < 8:
        records = _run_chunk((seeds, *common))
    else:
        n_chunks = min(len(seeds), 4 * workers)
        chunks = [seeds[i::n_chunks] for i in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [(c, *common) for c in chunks]))
        records = sorted((r for part in parts for r in part), key=lambda r: r.seed)
    elapsed = time.perf_counter() - t0
    return MonteCarloReport(truth, crlb, records, elapsed, config.hash_payload())


def read_runs(path):
    """Per-run initial guesses and estimates from a ``runs.csv``."""
    columns, rows = io.read_table(path)
    data = {c: [r[i] for r in rows] for i, c in enumerate(columns)}
    init = np.array([[float(v) for v in data[f"init_{n}"]] for n in PARAM_NAMES]).T
    est = np.array([[float(v) for v in data[f"est_{n}"]] for n in PARAM_NAMES]).T
    conv = np.array([v == "1" for v in data["converged"]])
    return init, est, conv


# ------------------------------------------------------------------ figures


def bode_envelopes(thetas: np.ndarray, freqs) -> dict:
    """Pointwise min/mean/max of |Z| and phase (degrees) over parameter rows."""
    w = 2 * math.pi * np.asarray(freqs, dtype=float)
    mags, phases = [], []
    for row in thetas:
        if not np.all(np.isfinite(row)):
            continue
        z = z_eq(EcmParams.from_array(row, validate=False), w)
        mags.append(np.abs(z))
        phases.append(np.degrees(np.angle(z)))
    mags, phases = np.array(mags), np.array(phases)
    return {
        "mag": (mags.min(0), mags.mean(0), mags.max(0)),
        "phase": (phases.min(0), phases.mean(0), phases.max(0)),
    }


BODE_COLUMNS = ("freq_hz", "mag_true", "phase_true_deg",
                "mag_init_min", "mag_init_mean", "mag_init_max",
                "phase_init_min", "phase_init_mean", "phase_init_max",
                "mag_est_min", "mag_est_mean", "mag_est_max",
                "phase_est_min", "phase_est_mean", "phase_est_max")


def bode_table(truth: EcmParams, init: np.ndarray, est: np.ndarray, freqs):
    z = z_eq(truth, 2 * math.pi * np.asarray(freqs, dtype=float))
    a, b = bode_envelopes(init, freqs), bode_envelopes(est, freqs)
    cols = [freqs, np.abs(z), np.degrees(np.angle(z)),
            *a["mag"], *a["phase"], *b["mag"], *b["phase"]]
    return BODE_COLUMNS, np.column_stack(cols)


def contribution_table(truth: EcmParams, model: NoiseModel, freqs, coordinates="polar"):
    curves = contribution_curves(truth, freqs, model, coordinates)
    return ("freq_hz", *PARAM_NAMES), np.column_stack([freqs, curves])


def write_figures(out_dir, truth: EcmParams, model: NoiseModel, montecarlo_dir=None, design_dir=None,
                  f_min=1e-2, f_max=1e4, n_dense=241, header=()) -> list[Path]:
    """CSV bundles for the Bode envelopes, contribution curves, adjustments and volume."""
    out = Path(out_dir)
    freqs = np.logspace(math.log10(f_min), math.log10(f_max), n_dense)
    written = []
    cols, data = contribution_table(truth, model, freqs)
    written.append(io.write_table(out / "contributions.csv", cols, data, header))
    if montecarlo_dir is not None:
        runs = Path(montecarlo_dir) / "runs.csv"
        if not runs.exists():
            raise FileNotFoundError(runs)
        init, est, conv = read_runs(runs)
        cols, data = bode_table(truth, init, est[conv], freqs)
        written.append(io.write_table(out / "bode_envelopes.csv", cols, data, header))
    if design_dir is not None:
        hist, traj = Path(design_dir) / "history.csv", Path(design_dir) / "trajectory.csv"
        for p in (hist, traj):
            if not p.exists():
                raise FileNotFoundError(p)
        columns, rows = io.read_table(hist)
        k = {c: i for i, c in enumerate(columns)}
        adjust_rows = [[r[k["iteration"]], r[k["index"]],
                 float(r[k["omega_old"]]) / (2 * math.pi), float(r[k["omega_new"]]) / (2 * math.pi),
                 float(r[k["omega_new"]]) / float(r[k["omega_old"]])] for r in rows]
        written.append(io.write_table(out / "adjustments.csv",
                                      ("iteration", "index", "freq_old_hz", "freq_new_hz", "ratio"), adjust_rows, header))
        columns, rows = io.read_table(traj)
        k = {c: i for i, c in enumerate(columns)}
        vol_cols = [c for c in ("volume_hat", "volume_true") if c in k]
        first = {c: float(rows[0][k[c]]) for c in vol_cols}
        volume_rows = [[r[k["iteration"]], *[float(r[k[c]]) / first[c] for c in vol_cols]] for r in rows]
        written.append(io.write_table(out / "volume.csv",
                                      ("iteration", *[f"{c}_normalized" for c in vol_cols]), volume_rows, header))
    return written


# ------------------------------------------------------------------- design


def design_outputs(config: ExperimentConfig, n_points: int | None = None):
    """Run the frequency design on the configured instrument; returns (state, trajectory)."""
    model = config.noise_model()
    inst = VirtualInstrument(config.truth, model, config.seed, add_noise=config.noise)
    n = n_points or len(config.grid())
    state = run_design(inst, config.f_min, config.f_max, n, mu=config.mu, model=model,
                       fit_config=FitConfig(coordinates=config.coordinates), scaling=config.scaling)
    return state, crlb_trajectory(state, config.truth)


def write_design(out_dir, state, traj, header=()) -> list[Path]:
    out = Path(out_dir)
    written = [
        io.write_table(out / "history.csv", HISTORY_COLUMNS, [e.as_row() for e in state.history], header),
        io.write_grid(out / "grid.csv", state.grid, header),
    ]
    n_iter = len(state.reports)
    cols = ["iteration", "lambda_min_hat", "volume_hat"]
    mats = [traj["lambda_min_hat"], traj["volume_hat"]]
    if "volume_true" in traj:
        cols += ["lambda_min_true", "volume_true"]
        mats += [traj["lambda_min_true"], traj["volume_true"]]
    cols += [f"crlb_hat_{n}" for n in PARAM_NAMES]
    if "crlb_true" in traj:
        cols += [f"crlb_true_{n}" for n in PARAM_NAMES]
    rows = []
    for i in range(n_iter):
        row = [str(i), *[m[i] for m in mats], *traj["crlb_hat"][i]]
        if "crlb_true" in traj:
            row += list(traj["crlb_true"][i])
        rows.append(row)
    written.append(io.write_table(out / "trajectory.csv", cols, rows, header))
    written.append(io.write_json(out / "theta_hat.json", state.theta_hat.to_dict()))
    return written


__all__ = [
    "ExperimentConfig", "MonteCarloReport", "RunRecord", "read_config", "run_one", "run_montecarlo",
    "read_runs", "bode_envelopes", "bode_table", "contribution_table", "write_figures", "design_outputs", "write_design",
    "MAX_NONCONVERGED",
]
