"""Command-line entry point.

Subcommands, all driven by a TOML config (see config.py for the schema):

    bounds    --config run.toml     write bounds.json
    simulate  --config run.toml     write sim.json (and tau.csv with --tau-csv)
    verify    --config run.toml     bounds + simulation + dominance verdicts;
                                    exit 3 when any verdict fails
    tv-curve  --config run.toml     write tv_curve.csv (t,analytic_bound,
                                    empirical_tv)

`--check FILE` re-reads a previously emitted report and re-validates it.
Validation problems exit 2 with a message naming the offending field.
Output directory precedence: --output-dir flag, then the config value, then
$RENEWAL_COUPLING_OUTDIR, then the working directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from . import sim_harness
from .bound_engine import bound_report
from .dist_core import law_from_spec
from .errors import (RenewalCouplingError, ThresholdTooSmallError,
                     ValidationError)

ENV_OUTDIR = "RENEWAL_COUPLING_OUTDIR"
TV_CSV_HEADER = ["t", "analytic_bound", "empirical_tv"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="renewal-coupling",
        description="Certified convergence bounds for renewal age processes, "
                    "checked against simulation of the coupled pair.")
    parser.add_argument("--check", metavar="FILE",
                        help="validate a previously emitted report and exit")
    sub = parser.add_subparsers(dest="command")
    for name, text in [
            ("bounds", "compute the certified bounds only"),
            ("simulate", "simulate coupled pairs only"),
            ("verify", "bounds plus simulation with dominance verdicts"),
            ("tv-curve", "tabulate the analytic and empirical TV curves")]:
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--config", required=True, metavar="TOML",
                         help="run configuration file")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
        cmd.add_argument("--output-dir", default=None, metavar="DIR")
        if name in ("simulate", "verify"):
            cmd.add_argument("--tau-csv", action="store_true",
                             help="also write tau.csv with the raw epochs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.check is not None:
            return check_report(args.check)
        if args.command is None:
            build_parser().print_usage(sys.stderr)
            print("error: a subcommand or --check is required", file=sys.stderr)
            return 2
        return _dispatch(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ThresholdTooSmallError as exc:
        print(f"error: run.threshold: {exc}", file=sys.stderr)
        return 2
    except RenewalCouplingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cfg = config_mod.load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ValidationError("seed", "must be nonnegative")
        cfg = replace(cfg, seed=args.seed)
    resolved = config_mod.resolve_auto(cfg)
    if cfg.threshold == config_mod.AUTO:
        print(f"threshold (auto) -> {resolved.threshold:.17g}")
    if cfg.rates == config_mod.AUTO:
        shown = ", ".join(f"{r:.17g}" for r in resolved.rates)
        print(f"rates (auto) -> [{shown}]")

    outdir = Path(args.output_dir or cfg.output_dir
                  or os.environ.get(ENV_OUTDIR) or ".")
    outdir.mkdir(parents=True, exist_ok=True)

    if args.command == "bounds":
        report = bound_report(
            resolved.law, resolved.age_first, resolved.age_second,
            resolved.threshold, moment_orders=resolved.moment_orders,
            rates=resolved.rates, t_grid=resolved.t_grid,
            overlap_grid=resolved.tolerances.overlap_grid,
            residual_grid=resolved.tolerances.residual_grid)
        _write(outdir / "bounds.json", report.to_json() + "\n")
        return 0

    if args.command == "tv-curve":
        if not resolved.t_grid:
            raise ValidationError("run.t_grid",
                                  "tv-curve needs a non-empty time grid")
        if not resolved.moment_orders and not resolved.rates:
            raise ValidationError(
                "run.moment_orders",
                "tv-curve needs at least one moment order or rate")

    result = sim_harness.run_experiment(
        resolved.law, resolved.age_first, resolved.age_second,
        resolved.threshold, moment_orders=resolved.moment_orders,
        rates=resolved.rates, t_grid=resolved.t_grid,
        n_replicas=resolved.n_replicas, seed=resolved.seed,
        overlap_grid=resolved.tolerances.overlap_grid,
        residual_grid=resolved.tolerances.residual_grid,
        event_cap=resolved.tolerances.event_cap,
        tv_bins=resolved.tolerances.tv_bins)

    if args.command == "simulate":
        _write(outdir / "sim.json", result.sim.to_json() + "\n")
        if args.tau_csv:
            _write(outdir / "tau.csv", sim_harness.tau_samples_csv(result.tau))
        return 0

    if args.command == "tv-curve":
        _write(outdir / "tv_curve.csv", _tv_curve_csv(result))
        return 0

    # verify
    _write(outdir / "bounds.json", result.bounds.to_json() + "\n")
    _write(outdir / "sim.json", result.sim.to_json() + "\n")
    payload = {
        "all_passed": result.all_passed,
        "resolved": {"threshold": resolved.threshold,
                     "rates": list(resolved.rates)},
        "verdicts": result.verdicts,
    }
    _write(outdir / "verify.json",
           json.dumps(payload, sort_keys=True, indent=2) + "\n")
    if args.tau_csv:
        _write(outdir / "tau.csv", sim_harness.tau_samples_csv(result.tau))
    for name in sorted(result.verdicts):
        verdict = result.verdicts[name]
        word = "PASS" if verdict["passed"] else "FAIL"
        print(f"{word} {name}: estimate {verdict['estimate']:.6g} "
              f"vs bound {verdict['bound']:.6g}")
    return 0 if result.all_passed else 3


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


def _tv_curve_csv(result) -> str:
    curves = list(result.bounds.tv_moment_curves.values()) + list(
        result.bounds.tv_mgf_curves.values())
    empirical = dict(result.sim.empirical_tv)
    lines = [",".join(TV_CSV_HEADER)]
    for j, (t, _) in enumerate(curves[0]):
        analytic = min(curve[j][1] for curve in curves)
        lines.append(f"{t:.17g},{analytic:.17g},{empirical[t]:.17g}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# --check: re-read an emitted report and re-validate it
# --------------------------------------------------------------------------

def check_report(path: str) -> int:
    p = Path(path)
    if not p.exists():
        raise ValidationError("check", f"no such file: {path}")
    if p.suffix == ".csv":
        _check_csv(p)
    else:
        _check_json(p)
    print(f"{path}: OK")
    return 0


def _load_json(p: Path) -> dict:
    try:
        data = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError("check", f"cannot parse {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError("check", f"{p}: expected a JSON object")
    return data


def _check_json(p: Path) -> None:
    data = _load_json(p)
    if "verdicts" in data:
        _check_verify(data)
    elif "params" in data and "moment_bounds" in data:
        _check_bounds(data)
    elif "tau" in data and "law" in data:
        _check_sim(data)
    else:
        raise ValidationError("check", f"{p}: unrecognized report schema")


def _require(data: dict, key: str, kind="report") -> object:
    if key not in data:
        raise ValidationError(key, f"missing from {kind}")
    return data[key]


def _check_close(name: str, got: float, expected: float, tol: float = 1e-9):
    if not math.isfinite(got) or abs(got - expected) > tol * max(
            1.0, abs(expected)):
        raise ValidationError(
            name, f"inconsistent value {got!r}; recomputed {expected!r}")


def _check_bounds(data: dict) -> None:
    law_from_spec(_require(data, "law", "bounds report"))
    params = _require(data, "params", "bounds report")
    for key in ("threshold", "lorden_ratio", "age_prob", "overlap_floor",
                "attempt_success", "attempt_failure"):
        value = _require(params, f"{key}", "params")
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ValidationError(f"params.{key}", f"not a finite number: {value!r}")
    if params["threshold"] <= params["lorden_ratio"]:
        raise ValidationError(
            "params.threshold",
            f"threshold {params['threshold']!r} must exceed the "
            f"second-to-first moment ratio {params['lorden_ratio']!r}")
    # internal identities of the stored parameter block
    _check_close("params.age_prob", params["age_prob"],
                 1.0 - params["lorden_ratio"] / params["threshold"])
    _check_close("params.attempt_success", params["attempt_success"],
                 params["age_prob"] * params["overlap_floor"])
    _check_close("params.attempt_failure", params["attempt_failure"],
                 1.0 - params["attempt_success"])
    if not 0.0 < params["overlap_floor"] <= 1.0:
        raise ValidationError("params.overlap_floor",
                              f"outside (0, 1]: {params['overlap_floor']!r}")
    for key, floor in (("moment_bounds", 0.0), ("mgf_bounds", 1.0)):
        for order, value in _require(data, key, "bounds report").items():
            if not isinstance(value, (int, float)) or not value >= floor:
                raise ValidationError(f"{key}.{order}",
                                      f"expected a number >= {floor}, got {value!r}")
    for key in ("tv_moment_curves", "tv_mgf_curves"):
        for label, points in data.get(key, {}).items():
            _check_curve(f"{key}.{label}", points)


def _check_curve(name: str, points) -> None:
    last_t, last_v = -math.inf, math.inf
    for entry in points:
        if len(entry) != 2:
            raise ValidationError(name, f"malformed curve point {entry!r}")
        t, v = entry
        if not t > last_t:
            raise ValidationError(name, "time grid must increase")
        if not 0.0 <= v <= 1.0:
            raise ValidationError(name, f"bound {v!r} outside [0, 1]")
        if v > last_v:
            raise ValidationError(name, "bound curve must be nonincreasing")
        last_t, last_v = t, v


def _check_sim(data: dict) -> None:
    law_from_spec(_require(data, "law", "sim report"))
    tau = _require(data, "tau", "sim report")
    count = _require(tau, "count", "tau block")
    if not isinstance(count, int) or count < 1:
        raise ValidationError("tau.count", f"expected a positive count, got {count!r}")
    if count != data.get("n_replicas"):
        raise ValidationError("tau.count",
                              "does not match the replica count")
    digest = _require(tau, "digest", "tau block")
    if not (isinstance(digest, str) and len(digest) == 64
            and all(c in "0123456789abcdef" for c in digest)):
        raise ValidationError("tau.digest", "not a sha256 hex digest")
    if not isinstance(tau.get("mean"), (int, float)) or tau["mean"] < 0:
        raise ValidationError("tau.mean", f"expected a nonnegative mean, got {tau.get('mean')!r}")
    for block, floor in (("moments", 0.0), ("mgfs", 1.0)):
        for order, entry in data.get(block, {}).items():
            est = entry.get("estimate")
            se = entry.get("std_error")
            if not isinstance(est, (int, float)) or est < floor:
                raise ValidationError(f"{block}.{order}.estimate",
                                      f"bad estimate {est!r}")
            if not isinstance(se, (int, float)) or se < 0:
                raise ValidationError(f"{block}.{order}.std_error",
                                      f"bad standard error {se!r}")
    for key in ("attempt_success_rate", "eligible_fraction", "mean_kappa"):
        value = data.get(key)
        if value is not None and not 0.0 <= value <= 1.0:
            raise ValidationError(key, f"outside [0, 1]: {value!r}")
    for entry in data.get("empirical_tv", []):
        t, v = entry
        if not (t > 0 and 0.0 <= v <= 1.0):
            raise ValidationError("empirical_tv", f"bad point {entry!r}")


def _check_verify(data: dict) -> None:
    verdicts = _require(data, "verdicts", "verify report")
    if not isinstance(verdicts, dict) or not verdicts:
        raise ValidationError("verdicts", "expected a non-empty table")
    passed_all = True
    for name, verdict in verdicts.items():
        for key in ("passed", "estimate", "bound"):
            if key not in verdict:
                raise ValidationError(f"verdicts.{name}.{key}", "missing")
        if not isinstance(verdict["passed"], bool):
            raise ValidationError(f"verdicts.{name}.passed", "expected a boolean")
        passed_all = passed_all and verdict["passed"]
    if data.get("all_passed") != passed_all:
        raise ValidationError("all_passed",
                              "inconsistent with the individual verdicts")


def _check_csv(p: Path) -> None:
    try:
        with open(p, newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise ValidationError("check", f"cannot read {p}: {exc}") from exc
    if not rows:
        raise ValidationError("check", f"{p}: empty file")
    if rows[0] == ["tau"]:
        for i, row in enumerate(rows[1:], start=2):
            try:
                value = float(row[0])
            except (ValueError, IndexError):
                raise ValidationError("tau", f"line {i}: not a number")
            if not value >= 0 or not math.isfinite(value):
                raise ValidationError("tau", f"line {i}: bad epoch {value!r}")
        return
    if rows[0] == TV_CSV_HEADER:
        last_t = -math.inf
        for i, row in enumerate(rows[1:], start=2):
            try:
                t, bound, emp = map(float, row)
            except ValueError:
                raise ValidationError("tv_curve", f"line {i}: not numeric")
            if not t > last_t:
                raise ValidationError("tv_curve",
                                      f"line {i}: time grid must increase")
            if not 0.0 <= bound <= 1.0 or not 0.0 <= emp <= 1.0:
                raise ValidationError("tv_curve",
                                      f"line {i}: value outside [0, 1]")
            last_t = t
        return
    raise ValidationError("check", f"{p}: unrecognized CSV header")


if __name__ == "__main__":
    raise SystemExit(main())
