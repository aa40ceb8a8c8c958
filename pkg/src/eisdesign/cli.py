"""Command-line entry point: ``eisdesign <command> [options]``.

Every command reads the same experiment settings: defaults, then a
``--config`` key-value file, then explicit flags. Exit codes are 0 on
success, 1 on usage errors, 2 on numerical failure and 3 on I/O errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .cnls import FitConfig, fit
from .ecm import PARAM_NAMES, EcmParams
from .errors import EisError
from .fisher import fim
from .harness import (MAX_NONCONVERGED, ExperimentConfig, design_outputs, contribution_table, run_montecarlo, write_design,
                      write_figures)
from .initializer import initialize
from .synth import measure_sweep

log = logging.getLogger("eisdesign")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _experiment_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="key = value settings file")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--f-min", type=float)
    g.add_argument("--f-max", type=float)
    g.add_argument("--ppd", type=int, help="points per decade")
    g.add_argument("--freqs", help="explicit comma-separated grid in Hz")
    g.add_argument("--eps-rho", type=float, help="magnitude accuracy in percent")
    g.add_argument("--eps-phi", type=float, help="phase accuracy in degrees")
    g.add_argument("--noise-file", help="accuracy contour table")
    g.add_argument("--noise", choices=("on", "off"))
    g.add_argument("--coords", "--coordinates", dest="coordinates", choices=("polar", "cartesian"))
    g.add_argument("--grid", help="grid CSV (freq_hz or omega_rad_s column); overrides the log grid")
    for name in PARAM_NAMES:
        g.add_argument(f"--{name.replace('_', '-')}", type=float, dest=name, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eisdesign", description="Impedance spectrum fitting, CRLB and frequency design.")
    parser.add_argument("--version", action="version", version=f"eisdesign {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic spectrum")
    _experiment_flags(p)

    p = sub.add_parser("init", help="geometric initial guess from a spectrum file")
    _experiment_flags(p)
    p.add_argument("--spectrum", required=True)

    p = sub.add_parser("fit", help="CNLS fit of a spectrum file")
    _experiment_flags(p)
    p.add_argument("--spectrum", required=True)
    p.add_argument("--init", "--theta0", dest="init", default="auto",
                   help="'auto' for the geometric initializer, or a JSON start point")

    p = sub.add_parser("crlb", help="FIM and Cramer-Rao bounds on the grid")
    _experiment_flags(p)
    p.add_argument("--theta", help="JSON evaluation point; default: the truth")

    p = sub.add_parser("contrib-curves", help="normalized per-parameter FIM contributions")
    _experiment_flags(p)
    p.add_argument("--points", type=int, default=241)

    p = sub.add_parser("design", help="greedy E-optimal frequency adjustment")
    _experiment_flags(p)
    p.add_argument("--mu", type=float)
    p.add_argument("--scaling", choices=("relative", "absolute"))

    p = sub.add_parser("montecarlo", help="repeated simulate/init/fit with summary tables")
    _experiment_flags(p)
    p.add_argument("--runs", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--compare-coordinates", action="store_const", const="1")

    p = sub.add_parser("figures", help="CSV data for the Bode, contribution, adjustment and volume plots")
    _experiment_flags(p)
    p.add_argument("--montecarlo-dir")
    p.add_argument("--design-dir")
    p.add_argument("--points", type=int, default=241)
    return parser


_EXPERIMENT_KEYS = ("out", "seed", "f_min", "f_max", "ppd", "freqs", "eps_rho", "eps_phi", "noise_file",
                    "noise", "coordinates", "mu", "scaling", "runs", "workers", "compare_coordinates",
                    *PARAM_NAMES)


def resolve_config(args) -> ExperimentConfig:
    try:
        base = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
        flags = {k: getattr(args, k) for k in _EXPERIMENT_KEYS if hasattr(args, k)}
        if getattr(args, "grid", None):
            flags["freqs"] = tuple(io.read_grid(args.grid).freqs)
        return ExperimentConfig.from_mapping(flags, base)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _header(cfg: ExperimentConfig, command: str) -> list[str]:
    return io.header_lines(cfg.hash_payload(), cfg.seed, command=command)


def _load_theta(path) -> EcmParams:
    return EcmParams.from_dict(json.loads(Path(path).read_text()))


def cmd_simulate(cfg: ExperimentConfig):
    spec = measure_sweep(cfg.truth, cfg.grid(), cfg.noise_model(), cfg.seed, add_noise=cfg.noise)
    path = io.write_spectrum(Path(cfg.out) / "spectrum.csv", spec, _header(cfg, "simulate"))
    print(path)
    return EXIT_OK


def cmd_init(cfg: ExperimentConfig, spectrum_path):
    spec = io.read_spectrum(spectrum_path)
    res = initialize(spec, cfg.noise_model())
    payload = res.to_dict()
    io.write_json(Path(cfg.out) / "init.json", payload)
    print(json.dumps(res.theta.to_dict(), indent=2))
    return EXIT_OK


def cmd_fit(cfg: ExperimentConfig, spectrum_path, init="auto"):
    spec = io.read_spectrum(spectrum_path)
    theta0 = initialize(spec, cfg.noise_model()).theta if init == "auto" else _load_theta(init)
    res = fit(spec, theta0, FitConfig(coordinates=cfg.coordinates))
    io.write_json(Path(cfg.out) / "fit.json", res.to_dict())
    print(json.dumps(res.theta_hat.to_dict(), indent=2))
    if not res.converged:
        log.error("fit did not converge: %s", res.message)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_crlb(cfg: ExperimentConfig, theta_path=None):
    theta = _load_theta(theta_path) if theta_path else cfg.truth
    rep = fim(theta, cfg.grid(), cfg.noise_model(), cfg.coordinates)
    out = Path(cfg.out)
    rows = [[n, theta.to_array()[k], rep.crlb[k], math.sqrt(rep.crlb[k]) / abs(theta.to_array()[k])]
            for k, n in enumerate(PARAM_NAMES)]
    io.write_table(out / "crlb.csv", ("param", "value", "crlb", "relative_std"), rows, _header(cfg, "crlb"))
    io.write_json(out / "crlb.json", rep.to_dict())
    for r in rows:
        print(f"{r[0]:8s} {r[2]:.4e}")
    return EXIT_OK


def cmd_contrib(cfg: ExperimentConfig, points: int):
    freqs = np.logspace(math.log10(cfg.f_min), math.log10(cfg.f_max), points)
    cols, data = contribution_table(cfg.truth, cfg.noise_model(), freqs, cfg.coordinates)
    print(io.write_table(Path(cfg.out) / "contributions.csv", cols, data, _header(cfg, "contrib-curves")))
    return EXIT_OK


def cmd_design(cfg: ExperimentConfig):
    state, traj = design_outputs(cfg)
    write_design(cfg.out, state, traj, _header(cfg, "design"))
    v = traj.get("volume_true", traj["volume_hat"])
    c = traj.get("crlb_true", traj["crlb_hat"])
    gain = (c[0] - c[-1]) / c[0]
    print(f"volume ratio {v[-1] / v[0]:.4f}; mean CRLB improvement {100 * gain.mean():.2f}%")
    return EXIT_OK


def cmd_montecarlo(cfg: ExperimentConfig):
    rep = run_montecarlo(cfg)
    rep.write(cfg.out, _header(cfg, "montecarlo"))
    s3 = rep.estimate_stats()
    s2 = rep.initial_stats()
    print(f"{'param':8s} {'init err %':>10s} {'bias %':>8s} {'var/crlb':>9s}")
    for k, n in enumerate(PARAM_NAMES):
        print(f"{n:8s} {100 * s2['mean_abs_error'][k]:10.2f} {100 * s3['bias'][k]:8.3f} {s3['ratio'][k]:9.3f}")
    print(f"{rep.runs} runs, {rep.converged.sum()} converged, {rep.elapsed:.1f} s")
    if rep.nonconverged_fraction > MAX_NONCONVERGED:
        log.error("%.1f%% of runs did not converge", 100 * rep.nonconverged_fraction)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_figures(cfg: ExperimentConfig, montecarlo_dir, design_dir, points):
    paths = write_figures(cfg.out, cfg.truth, cfg.noise_model(), montecarlo_dir, design_dir,
                          cfg.f_min, cfg.f_max, points, _header(cfg, "figures"))
    for p in paths:
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        cmd = args.command
        if cmd == "simulate":
            return cmd_simulate(cfg)
        if cmd == "init":
            return cmd_init(cfg, args.spectrum)
        if cmd == "fit":
            return cmd_fit(cfg, args.spectrum, args.init)
        if cmd == "crlb":
            return cmd_crlb(cfg, args.theta)
        if cmd == "contrib-curves":
            return cmd_contrib(cfg, args.points)
        if cmd == "design":
            return cmd_design(cfg)
        if cmd == "montecarlo":
            return cmd_montecarlo(cfg)
        if cmd == "figures":
            return cmd_figures(cfg, args.montecarlo_dir, args.design_dir, args.points)
    except UsageError as exc:
        print(f"eisdesign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"eisdesign: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EisError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"eisdesign: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
