"""Command-line batch front-end.

Subcommands ``verify-condition1``, ``sweep``, ``solve`` and ``simulate`` read a
JSON experiment config (schema in the README) and write CSV or JSON.  Exit
codes: 0 success, 1 verification failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable

from .mdp import ConvergenceError, build_truncated, check_condition1, compact_bellman_residual, policy_iteration, rvi
from .model import (DelayModel, ModelError, Variant, make_delay_explicit, make_delay_geometric,
                    make_delay_twopoint, make_delay_zipf, make_source)
from .simulator import SimConfig, child_seed, simulate
from .threshold import INF, ThresholdPolicy, expected_aoii

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

POINT_COLUMNS = ["delay", "p_s", "a", "t_max", "variant", "p"]
VERIFY_COLUMNS = POINT_COLUMNS + ["sigma", "delta_bar_0", "delta_bar_1", "bound", "holds", "errors"]
SWEEP_COLUMNS = POINT_COLUMNS + ["tau", "expected_aoii", "sim_mean", "sim_stderr", "condition1_holds",
                                 "solver_policy_summary", "errors"]
SIM_COLUMNS = POINT_COLUMNS + ["tau", "slots", "seed", "sim_mean", "sim_stderr", "expected_aoii",
                               "transmissions", "deliveries", "discards", "errors"]


class ConfigError(ValueError):
    pass


# -- config parsing -------------------------------------------------------------

def _grid(value, name: str) -> list:
    if isinstance(value, dict):
        missing = {"start", "stop", "step"} - set(value)
        if missing:
            raise ConfigError(f"field '{name}': range object missing {sorted(missing)}")
        start, stop, step = (value[k] for k in ("start", "stop", "step"))
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (start, stop, step)):
            raise ConfigError(f"field '{name}': start/stop/step must be numbers")
        if step <= 0:
            raise ConfigError(f"field '{name}': step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9))
        vals = [round(start + i * step, 12) for i in range(n + 1)]
        return [int(v) if all(isinstance(x, int) for x in (start, step)) else v for v in vals]
    if isinstance(value, list):
        return value
    if isinstance(value, (int, float, str)) and not isinstance(value, bool):
        return [value]
    raise ConfigError(f"field '{name}': expected a number, list or {{start, stop, step}} object")


def _check_numbers(values, name: str, check: Callable[[float], str | None], integer: bool = False) -> list:
    out = []
    for k, v in enumerate(values):
        where = f"{name}[{k}]"
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"field '{where}': {v!r} is not a number")
        if integer and int(v) != v:
            raise ConfigError(f"field '{where}': {v!r} is not an integer")
        msg = check(v)
        if msg:
            raise ConfigError(f"field '{where}': {v!r} violates {msg}")
        out.append(int(v) if integer else float(v))
    return out


def _p_check(v):
    if not v > 0:
        return "p > 0"
    if v > 0.5:
        return "p <= 1/2"
    return None


def _tau_list(values) -> list:
    out = []
    for k, v in enumerate(values):
        try:
            out.append(ThresholdPolicy(v).tau)
        except (ModelError, ValueError):
            raise ConfigError(f"field 'tau[{k}]': {v!r} is not a nonnegative integer or \"inf\"") from None
    return out


def _variants(entry: dict, where: str) -> list[Variant]:
    raw = entry.get("variant", "guaranteed")
    raw = raw if isinstance(raw, list) else [raw]
    try:
        return [Variant.parse(v) for v in raw]
    except ModelError as exc:
        raise ConfigError(f"field '{where}.variant': {exc}") from None


@dataclass(frozen=True)
class Point:
    delay: str
    p_s: float | None
    a: float | None
    t_max: int
    variant: str
    p: float
    pmf: tuple | None = None
    p_tail: float | None = None

    def models(self):
        src = make_source(self.p)
        if self.delay == "geometric":
            d = make_delay_geometric(self.p_s, self.t_max, self.variant)
        elif self.delay == "zipf":
            d = make_delay_zipf(self.a, self.t_max)
        elif self.delay == "twopoint":
            d = make_delay_twopoint(self.t_max)
        else:
            d = make_delay_explicit(self.pmf, self.variant, self.p_tail)
        return src, d

    def row(self) -> dict:
        return {"delay": self.delay, "p_s": self.p_s, "a": self.a, "t_max": self.t_max,
                "variant": self.variant, "p": self.p}


def _delay_entries(cfg: dict) -> list[dict]:
    if "delay" not in cfg:
        raise ConfigError("field 'delay': required")
    raw = cfg["delay"]
    entries = raw if isinstance(raw, list) else [raw]
    for k, e in enumerate(entries):
        if not isinstance(e, dict) or "kind" not in e:
            raise ConfigError(f"field 'delay[{k}]': expected an object with a 'kind'")
    return entries


def expand_points(cfg: dict) -> list[Point]:
    """All grid points in a fixed order: delay entry, t_max, shape parameter, variant, p."""
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    ps = _check_numbers(_grid(cfg.get("p", []), "p"), "p", _p_check)
    t_maxes = _check_numbers(_grid(cfg.get("t_max", []), "t_max"), "t_max",
                             lambda v: None if v >= 2 else "t_max >= 2", integer=True)
    points = []
    for k, e in enumerate(_delay_entries(cfg)):
        where = f"delay[{k}]"
        kind = e["kind"]
        if kind == "geometric":
            shapes = _check_numbers(_grid(e.get("p_s", []), f"{where}.p_s"), f"{where}.p_s",
                                    lambda v: None if 0 <= v < 1 else "0 <= p_s < 1")
            variants = _variants(e, where)
            for tm in t_maxes:
                for s in shapes:
                    for v in variants:
                        points += [Point("geometric", s, None, tm, v.value, p) for p in ps]
        elif kind == "zipf":
            shapes = _check_numbers(_grid(e.get("a", []), f"{where}.a"), f"{where}.a",
                                    lambda v: None if v >= 0 else "a >= 0")
            if any(v is not Variant.GUARANTEED for v in _variants(e, where)):
                raise ConfigError(f"field '{where}.variant': zipf delay supports guaranteed delivery only")
            for tm in t_maxes:
                for a in shapes:
                    points += [Point("zipf", None, a, tm, "guaranteed", p) for p in ps]
        elif kind == "twopoint":
            if any(v is not Variant.GUARANTEED for v in _variants(e, where)):
                raise ConfigError(f"field '{where}.variant': two-point delay supports guaranteed delivery only")
            for tm in t_maxes:
                points += [Point("twopoint", None, None, tm, "guaranteed", p) for p in ps]
        elif kind == "explicit":
            pmf = e.get("pmf")
            if not isinstance(pmf, list) or not pmf:
                raise ConfigError(f"field '{where}.pmf': expected a nonempty list of probabilities")
            _check_numbers(pmf, f"{where}.pmf", lambda v: None if 0 <= v <= 1 else "0 <= p_t <= 1")
            for v in _variants(e, where):
                pt = e.get("p_tail")
                try:
                    make_delay_explicit(pmf, v, pt)
                except ModelError as exc:
                    raise ConfigError(f"field '{where}': {exc}") from None
                points += [Point("explicit", None, None, len(pmf), v.value, p, tuple(pmf), pt) for p in ps]
        else:
            raise ConfigError(f"field '{where}.kind': unknown delay kind {kind!r}")
    return points


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"field '{name}': expected an object")
    return sec


def _solver_settings(cfg: dict) -> dict | None:
    if "solver" not in cfg:
        return None
    sec = _section(cfg, "solver")
    out = {"m": sec.get("m"), "epsilon": sec.get("epsilon", 1e-9), "max_iter": sec.get("max_iter", 200_000),
           "methods": sec.get("methods", ["rvi", "policy_iteration"])}
    if out["m"] is not None and (not isinstance(out["m"], int) or out["m"] < 4):
        raise ConfigError("field 'solver.m': expected an integer >= 4")
    if not isinstance(out["epsilon"], (int, float)) or out["epsilon"] <= 0:
        raise ConfigError("field 'solver.epsilon': expected a positive number")
    if not isinstance(out["max_iter"], int) or out["max_iter"] < 1:
        raise ConfigError("field 'solver.max_iter': expected a positive integer")
    bad = set(out["methods"]) - {"rvi", "policy_iteration"}
    if bad:
        raise ConfigError(f"field 'solver.methods': unknown method(s) {sorted(bad)}")
    return out


def _sim_settings(cfg: dict, seed_override: int | None) -> dict | None:
    if "simulation" not in cfg and seed_override is None:
        return None
    sec = _section(cfg, "simulation")
    out = {"slots": sec.get("slots", 10_000_000), "seed": sec.get("seed", 0),
           "warmup": sec.get("warmup", 10_000), "batch_count": sec.get("batch_count", 30)}
    if seed_override is not None:
        out["seed"] = seed_override
    for key in out:
        if isinstance(out[key], bool) or not isinstance(out[key], int) or out[key] < 0:
            raise ConfigError(f"field 'simulation.{key}': expected a nonnegative integer")
    try:
        SimConfig(**out)
    except ModelError as exc:
        raise ConfigError(f"field 'simulation': {exc}") from None
    return out


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None


# -- per-point work -----------------------------------------------------------

def _default_m(t_max: int) -> int:
    return max(200, 20 * t_max)


def _verify_point(args) -> list[dict]:
    point, = args
    row = point.row()
    try:
        src, d = point.models()
        r = check_condition1(src, d)
        row.update(sigma=r.sigma, delta_bar_0=r.delta_bar_0, delta_bar_1=r.delta_bar_1,
                   bound=r.bound, holds=r.holds)
    except Exception as exc:  # recorded per row; the run continues
        row["errors"] = f"{type(exc).__name__}: {exc}"
    return [row]


def _solver_summary(src, d, solver: dict) -> str:
    m = solver["m"] or _default_m(d.t_max)
    res = rvi(build_truncated(src, d, m), solver["epsilon"], solver["max_iter"])
    return res.policy.summary(m - d.t_max)


def _sweep_point(args) -> list[dict]:
    point, taus, solver, sim, seed_index = args
    base = point.row()
    rows = []
    try:
        src, d = point.models()
    except Exception as exc:
        base["errors"] = f"{type(exc).__name__}: {exc}"
        return [dict(base, tau=t) for t in taus]
    shared = {}
    errors = []
    try:
        shared["condition1_holds"] = check_condition1(src, d).holds
    except Exception as exc:
        errors.append(f"condition1: {type(exc).__name__}: {exc}")
    if solver is not None:
        try:
            shared["solver_policy_summary"] = _solver_summary(src, d, solver)
        except Exception as exc:
            errors.append(f"solver: {type(exc).__name__}: {exc}")
    for j, tau in enumerate(taus):
        row = dict(base, tau=tau, **shared)
        errs = list(errors)
        try:
            row["expected_aoii"] = expected_aoii(src, d, tau).expected_aoii
        except Exception as exc:
            errs.append(f"analytic: {type(exc).__name__}: {exc}")
        if sim is not None:
            try:
                seed = child_seed(sim["seed"], seed_index * len(taus) + j)
                r = simulate(src, d, tau, SimConfig(sim["slots"], seed, sim["warmup"], sim["batch_count"]))
                row.update(sim_mean=r.mean_aoii, sim_stderr=r.std_error)
            except Exception as exc:
                errs.append(f"simulation: {type(exc).__name__}: {exc}")
        if errs:
            row["errors"] = "; ".join(errs)
        rows.append(row)
    return rows


def _simulate_point(args) -> list[dict]:
    point, taus, sim, seed_index = args
    rows = []
    for j, tau in enumerate(taus):
        seed = child_seed(sim["seed"], seed_index * len(taus) + j)
        row = dict(point.row(), tau=tau, slots=sim["slots"], seed=seed)
        try:
            src, d = point.models()
            r = simulate(src, d, tau, SimConfig(sim["slots"], seed, sim["warmup"], sim["batch_count"]))
            row.update(sim_mean=r.mean_aoii, sim_stderr=r.std_error, transmissions=r.transmissions,
                       deliveries=r.deliveries, discards=r.discards,
                       expected_aoii=expected_aoii(src, d, tau).expected_aoii)
        except Exception as exc:
            row["errors"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _solve_point(args) -> dict:
    point, solver = args
    src, d = point.models()
    m = solver["m"] or _default_m(d.t_max)
    mdp = build_truncated(src, d, m)
    out: dict[str, Any] = point.row()
    out["m"] = m
    analytic = expected_aoii(src, d, 1).expected_aoii
    cond = check_condition1(src, d)
    out["analytic_delta_bar_1"] = analytic
    out["condition1"] = {"holds": cond.holds, "sigma": cond.sigma, "delta_bar_0": cond.delta_bar_0,
                         "delta_bar_1": cond.delta_bar_1, "bound": cond.bound}
    if "rvi" in solver["methods"]:
        r = rvi(mdp, solver["epsilon"], solver["max_iter"])
        out["rvi"] = {"theta": r.theta, "theta_span_midpoint": r.diagnostics["theta_span_mid"],
                      "theta_reference": r.diagnostics["theta_ref"], "span": r.diagnostics["span"],
                      "iterations": r.iterations, "bellman_residual": r.residual,
                      "compact_bellman_residual": compact_bellman_residual(src, d, r),
                      "policy_summary": r.policy.summary(m - d.t_max),
                      "relative_gap_to_analytic": abs(r.theta - analytic) / analytic}
    if "policy_iteration" in solver["methods"]:
        r = policy_iteration(mdp)
        out["policy_iteration"] = {"theta": r.theta, "iterations": r.iterations,
                                   "bellman_residual": r.residual,
                                   "compact_bellman_residual": compact_bellman_residual(src, d, r),
                                   "theta_history": r.diagnostics["theta_history"],
                                   "policy_summary": r.policy.summary(m - d.t_max),
                                   "relative_gap_to_analytic": abs(r.theta - analytic) / analytic}
    return out


# -- output ---------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if v == INF:
            return "inf"
        return format(v, ".12g")
    return str(v)


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def render_rows(rows: list[dict], columns: list[str], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([_jsonable({c: r.get(c) for c in columns}) for r in rows], indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _map(fn, tasks: list, threads: int) -> list:
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


# -- commands -------------------------------------------------------------------

def run_verify_condition1(cfg: dict, threads: int = 1) -> tuple[list[dict], bool]:
    points = expand_points(cfg)
    rows = [r for chunk in _map(_verify_point, [(pt,) for pt in points], threads) for r in chunk]
    all_hold = all(r.get("holds") is True for r in rows)
    return rows, all_hold


def _sweep_taus(cfg: dict) -> list:
    extra = _tau_list(_grid(cfg.get("tau", []), "tau"))
    finite = sorted({0, 1} | {t for t in extra if t != INF})
    return finite + [INF]


def run_sweep(cfg: dict, threads: int = 1, seed: int | None = None) -> list[dict]:
    points = expand_points(cfg)
    taus = _sweep_taus(cfg)
    solver = _solver_settings(cfg)
    sim = _sim_settings(cfg, seed) if "simulation" in cfg or seed is not None else None
    tasks = [(pt, taus, solver, sim, k) for k, pt in enumerate(points)]
    return [r for chunk in _map(_sweep_point, tasks, threads) for r in chunk]


def run_simulate(cfg: dict, threads: int = 1, seed: int | None = None) -> list[dict]:
    points = expand_points(cfg)
    taus = _tau_list(_grid(cfg.get("tau", [1]), "tau"))
    sim = _sim_settings(cfg, seed) or _sim_settings({"simulation": {}}, None)
    tasks = [(pt, taus, sim, k) for k, pt in enumerate(points)]
    return [r for chunk in _map(_simulate_point, tasks, threads) for r in chunk]


def run_solve(cfg: dict, threads: int = 1) -> list[dict]:
    points = expand_points(cfg)
    solver = _solver_settings(cfg) or _solver_settings({"solver": {}})
    return _map(_solve_point, [(pt, solver) for pt in points], threads)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aoii", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("verify-condition1", "sweep", "solve", "simulate"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"), help="output format")
        sp.add_argument("--threads", type=int, default=1, help="worker processes")
        sp.add_argument("--seed", type=int, help="unsigned 64-bit simulation seed override")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("config root must be a JSON object")
        output = _section(cfg, "output")
        out = args.out or output.get("path")
        if args.command == "solve":
            fmt = args.format or output.get("format", "json")
            if fmt != "json":
                raise ConfigError("solve emits a JSON report only")
            try:
                report = run_solve(cfg, args.threads)
            except ConvergenceError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_FAIL
            _write(json.dumps(_jsonable(report), indent=2) + "\n", out)
            return EXIT_OK
        fmt = args.format or output.get("format", "csv")
        if fmt not in ("csv", "json"):
            raise ConfigError(f"field 'output.format': {fmt!r} is not csv or json")
        if args.command == "verify-condition1":
            rows, all_hold = run_verify_condition1(cfg, args.threads)
            _write(render_rows(rows, VERIFY_COLUMNS, fmt), out)
            if cfg.get("expect_all_hold", False) and not all_hold:
                print("verification failed: Condition 1 does not hold at every point", file=sys.stderr)
                return EXIT_FAIL
            return EXIT_OK
        if args.command == "sweep":
            _write(render_rows(run_sweep(cfg, args.threads, args.seed), SWEEP_COLUMNS, fmt), out)
            return EXIT_OK
        _write(render_rows(run_simulate(cfg, args.threads, args.seed), SIM_COLUMNS, fmt), out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
