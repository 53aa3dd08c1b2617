"""Command-line entry point.

    explosive-she SUBCOMMAND [--config PATH] [--seed N] [--out DIR] [--workers N]
                  [--dt DT] [--cells N] [--horizon T] [--paths N] [...]

Subcommands: ``simulate``, ``sweep``, ``verify``, ``tripling``, ``region-a``.

Settings are resolved from, in increasing priority: built-in defaults, the
``[run]`` and ``[<subcommand>]`` sections of an INI config file, environment
variables ``SHE_<KEY>`` (e.g. ``SHE_BETA=2``), and command-line flags.

Every output file ``NAME.EXT`` in the output directory is paired with
``NAME.manifest.json`` holding the resolved configuration and seed. Outputs
contain no timestamps or host data, so a rerun with the same settings
rewrites identical bytes.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 integration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coefficients import CoefficientSpec
from .errors import IntegrationError

ENV_PREFIX = "SHE_"


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v):
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    s = str(v).strip()
    return [float(x) for x in s.split(",")] if s else []


def _opt_float(v):
    if v is None or str(v).strip().lower() in ("", "none"):
        return None
    return float(v)


def _opt_int(v):
    if v is None or str(v).strip().lower() in ("", "none"):
        return None
    return int(v)


def _seed(v):
    s = int(v)
    if not 0 <= s < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer (got {s})")
    return s


# key -> (parser, default, help)
SETTINGS = {
    "beta": (float, 2.0, "drift exponent"),
    "gamma": (float, 1.1, "noise exponent"),
    "drift": (_bool, True, "include the drift term"),
    "noise": (_bool, True, "include the noise term"),
    "seed": (_seed, 0, "master seed (unsigned 64-bit)"),
    "out": (str, "out", "output directory"),
    "workers": (int, 1, "worker processes for ensembles"),
    "dt": (float, 1e-4, "base time step"),
    "dt_safety": (float, 0.1, "stiffness guard factor"),
    "u_explode": (float, 1e8, "explosion declaration threshold"),
    "horizon": (float, 1.0, "simulated time horizon"),
    "cells": (int, 256, "grid cells"),
    "paths": (int, 100, "paths per estimate / replicas"),
    "u0": (float, 1.0, "constant initial value"),
    "beta_grid": (_floats, [1.5, 2.0, 2.5], "comma-separated beta values for sweep"),
    "gamma_grid": (_floats, [0.5, 1.0, 1.25], "comma-separated gamma values for sweep"),
    "suite": (str, "kernel", "verification suite"),
    "attempts": (int, 200, "tripling attempts per level"),
    "max_level": (_opt_int, None, "last tripling level (default n0+3)"),
    "theta": (_opt_float, None, "manual theta for tripling"),
    "delta": (float, 0.1, "region-A drift level"),
    "i0": (_opt_float, None, "region-A initial L1 norm (default 10*C)"),
    "m": (float, 100.0, "L1 level for the qv-budget suite"),
}

SUITES = ("kernel", "holder", "drift", "lebesgue-bound", "stochastic-bound", "qv-budget", "tripling-params")


class CliConfigError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="explosive-she", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "sweep", "verify", "tripling", "region-a"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        if name == "verify":
            p.add_argument("suite_arg", nargs="?", metavar="SUITE", help="one of " + ", ".join(SUITES))
        for key, (_, default, help_) in SETTINGS.items():
            flag = "--" + key.replace("_", "-")
            if key in ("drift", "noise"):
                p.add_argument(flag, dest=key, default=None, help=help_ + " (true/false)")
            else:
                p.add_argument(flag, dest=key, default=None, help=f"{help_} (default {default!r})")
    return parser


def resolve_settings(command: str, args: argparse.Namespace, environ=None) -> dict:
    """Merge defaults, config file, environment and flags; parse every value."""
    environ = os.environ if environ is None else environ
    raw: dict = {k: v[1] for k, v in SETTINGS.items()}
    if args.config:
        cp = configparser.ConfigParser()
        try:
            with open(args.config) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise CliConfigError(f"cannot read config file: {exc}") from exc
        except configparser.Error as exc:
            raise CliConfigError(f"malformed config file: {exc}") from exc
        for section in ("run", command):
            if cp.has_section(section):
                for k, v in cp.items(section):
                    key = k.replace("-", "_")
                    if key not in SETTINGS:
                        raise CliConfigError(f"unknown config key {k!r} in [{section}]")
                    raw[key] = v
    for key in SETTINGS:
        env = environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            raw[key] = env
    for key in SETTINGS:
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    if getattr(args, "suite_arg", None):
        raw["suite"] = args.suite_arg
    out = {}
    for key, (parse, _, _) in SETTINGS.items():
        try:
            out[key] = parse(raw[key]) if raw[key] is not None else None
        except (TypeError, ValueError) as exc:
            raise CliConfigError(f"invalid value for {key}: {raw[key]!r} ({exc})") from exc
    for key in ("workers", "cells", "paths", "attempts"):
        if out[key] < 1:
            raise CliConfigError(f"{key} must be >= 1 (got {out[key]})")
    return out


# --------------------------------------------------------------------------
# output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _write_manifest(path: Path, command: str, settings: dict, results: dict) -> None:
    manifest = {
        "artifact": path.name,
        "subcommand": command,
        "version": __version__,
        "seed": settings["seed"],
        "config": settings,
        "results": results,
    }
    _dump_json(path.with_name(path.stem + ".manifest.json"), manifest)


def _spec(s):
    return CoefficientSpec(s["beta"], s["gamma"], drift=s["drift"], noise=s["noise"])


def _stepper(s, **over):
    from .integrator import StepperConfig

    kw = dict(dt_base=s["dt"], dt_safety=s["dt_safety"], u_explode=s["u_explode"], horizon=s["horizon"])
    kw.update(over)
    return StepperConfig(**kw)


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(s: dict, out: Path) -> int:
    from .integrator import make_initial_condition, run_trajectory
    from .noise import derive_stream

    spec = _spec(s)
    cfg = _stepper(s)
    u0 = make_initial_condition("constant", s["cells"], value=s["u0"])
    rec = run_trajectory(u0, spec, cfg, derive_stream(s["seed"], 0, s["cells"]))
    path = out / "trajectory.csv"
    rec.write_csv(path)
    _write_manifest(path, "simulate", s, {
        "exploded": rec.exploded,
        "explosion_time": rec.explosion_time,
        "resolution_limited": rec.monitor.resolution_limited,
        "stop_reason": rec.stop_reason,
        "stop_time": rec.stop_time,
        "n_steps": rec.n_steps,
        "clamp_count": rec.clamp_count,
        "ladder_hits": [list(h) for h in rec.monitor.ladder_hits],
        "regime": spec.regime,
    })
    return 0


def cmd_sweep(s: dict, out: Path) -> int:
    from .experiments import region_sweep, write_sweep_csv
    from .integrator import make_initial_condition

    cfg = _stepper(s)
    u0 = make_initial_condition("constant", s["cells"], value=s["u0"])
    cells = region_sweep(s["beta_grid"], s["gamma_grid"], u0, cfg, s["paths"], s["seed"], s["workers"])
    path = out / "sweep.csv"
    write_sweep_csv(cells, path)
    _write_manifest(path, "sweep", s, {
        "n_cells_in_grid": len(cells),
        "errors": [{"beta": c.beta, "gamma": c.gamma, "error": c.error} for c in cells if c.error],
    })
    return 0


def cmd_tripling(s: dict, out: Path) -> int:
    from .convolution import feasible_tripling_params
    from .experiments import tripling_experiment

    spec = _spec(s)
    params = feasible_tripling_params(spec, theta=s["theta"])
    rep = tripling_experiment(spec, params, s["attempts"], s["max_level"], _stepper(s),
                              n_cells=s["cells"], master_seed=s["seed"], workers=s["workers"])
    path = out / "tripling.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("n", "attempts", "successes", "frequency", "ci_lo", "ci_hi", "T_n"))
        for lv in rep.per_level:
            w.writerow((lv.n, lv.attempts, lv.successes, repr(lv.frequency), repr(lv.ci[0]), repr(lv.ci[1]), repr(lv.T_n)))
    _write_manifest(path, "tripling", s, rep.to_dict())
    return 0


def cmd_region_a(s: dict, out: Path) -> int:
    from .experiments import region_a_experiment

    rep = region_a_experiment(_spec(s), s["delta"], s["horizon"], s["paths"], _stepper(s),
                              n_cells=s["cells"], I0=s["i0"], master_seed=s["seed"], workers=s["workers"])
    path = out / "region_a.json"
    _dump_json(path, rep.to_dict())
    _write_manifest(path, "region-a", s, {"bound_consistent": rep.bound_consistent,
                                          "drift_violations": rep.drift_violations})
    return 0


def cmd_verify(s: dict, out: Path) -> int:
    from .verify import run_suite

    suite = s["suite"]
    if suite not in SUITES:
        print(f"error: unknown suite {suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return 2
    result = run_suite(suite, s)
    path = out / f"verify-{suite}.json"
    _dump_json(path, result)
    _write_manifest(path, "verify", s, {"passed": result["passed"]})
    for check in result["checks"]:
        print(f"{'PASS' if check['passed'] else 'FAIL'} {suite}: {check['name']}")
    return 0 if result["passed"] else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "tripling": cmd_tripling,
    "region-a": cmd_region_a,
}


def main(argv=None, environ=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve_settings(args.command, args, environ)
        # validate the coefficient exponents before any work starts
        _spec(settings)
        _stepper(settings)
    except (CliConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](settings, out)
    except IntegrationError as exc:
        print(f"integration error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
