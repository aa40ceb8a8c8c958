"""CSV/JSON serialisation of spectra, grids and report tables.

Floats are written with 17 significant digits so every value round-trips
bit for bit. Lines starting with ``#`` are provenance headers and are
skipped on read.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .synth import FrequencyGrid, ImpedanceSpectrum

SPECTRUM_COLUMNS = ("freq_hz", "re_ohm", "im_ohm", "rho_ohm", "phi_rad", "sigma_rho", "sigma_phi")


def fmt(x) -> str:
    return format(float(x), ".17g")


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def header_lines(config=None, seed=None, **extra) -> list[str]:
    lines = [f"tool: eisdesign {__version__}"]
    if config is not None:
        lines.append(f"config_hash: {config_hash(config)}")
    if seed is not None:
        lines.append(f"seed: {seed}")
    for key, value in extra.items():
        lines.append(f"{key}: {value}")
    return lines


def write_table(path, columns, rows, header=()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: no header row")
    return rows[0], rows[1:]


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_spectrum(path, spectrum: ImpedanceSpectrum, header=()) -> Path:
    """Write ``<path>`` (CSV) and ``<path>.json`` (metadata sidecar)."""
    rows = zip(
        spectrum.freq, spectrum.re, spectrum.im, spectrum.rho, spectrum.phi,
        spectrum.sigma_rho, spectrum.sigma_phi,
    )
    out = write_table(path, SPECTRUM_COLUMNS, rows, header)
    sidecar_path(out).write_text(json.dumps(spectrum.meta, indent=2, sort_keys=True) + "\n")
    return out


def read_spectrum(path) -> ImpedanceSpectrum:
    columns, rows = read_table(path)
    missing = [c for c in ("freq_hz", "re_ohm", "im_ohm") if c not in columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    data = np.array([[float(v) for v in row] for row in rows], dtype=float).reshape(len(rows), len(columns))
    col = {name: data[:, i] for i, name in enumerate(columns)}
    n = data.shape[0]
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    return ImpedanceSpectrum(
        freq=col["freq_hz"],
        z=col["re_ohm"] + 1j * col["im_ohm"],
        sigma_rho=col.get("sigma_rho", np.zeros(n)),
        sigma_phi=col.get("sigma_phi", np.zeros(n)),
        meta=meta,
    )


def write_grid(path, grid: FrequencyGrid, header=()) -> Path:
    rows = [
        (i, f, w, "1" if i in grid.adjusted else "0")
        for i, (f, w) in enumerate(zip(grid.freqs, grid.omegas))
    ]
    rows = [(str(i), fmt(f), fmt(w), a) for i, f, w, a in rows]
    extra = list(header) + [f"f_min: {fmt(grid.f_min)}", f"f_max: {fmt(grid.f_max)}"]
    return write_table(path, ("index", "freq_hz", "omega_rad_s", "adjusted"), rows, extra)


def read_grid(path, f_min: float | None = None, f_max: float | None = None) -> FrequencyGrid:
    """Read a grid CSV; needs at least a ``freq_hz`` or ``omega_rad_s`` column.

    Bounds default to the ``# f_min``/``# f_max`` header lines, then to the
    extreme grid frequencies.
    """
    text = Path(path).read_text()
    bounds = {}
    for line in text.splitlines():
        if line.startswith("#") and ":" in line:
            key, value = line[1:].split(":", 1)
            if key.strip() in ("f_min", "f_max"):
                bounds[key.strip()] = float(value)
    columns, rows = read_table(path)
    if "omega_rad_s" in columns:
        omegas = np.array([float(r[columns.index("omega_rad_s")]) for r in rows])
    elif "freq_hz" in columns:
        omegas = 2 * math.pi * np.array([float(r[columns.index("freq_hz")]) for r in rows])
    else:
        raise ValueError(f"{path}: need a freq_hz or omega_rad_s column")
    adjusted = ()
    if "adjusted" in columns:
        k = columns.index("adjusted")
        adjusted = [i for i, r in enumerate(rows) if r[k].strip() in ("1", "true", "True")]
    lo = f_min if f_min is not None else bounds.get("f_min", omegas.min() / (2 * math.pi))
    hi = f_max if f_max is not None else bounds.get("f_max", omegas.max() / (2 * math.pi))
    return FrequencyGrid(omegas, lo, hi, frozenset(adjusted))


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")
