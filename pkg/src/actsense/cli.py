"""Command-line experiment driver.

Every subcommand writes CSV files plus ``manifest.json`` into ``--out``.
``rerun-manifest`` repeats a recorded run and checks the outputs hash the same.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import itertools
import json
import logging
import platform
import shlex
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dp import extract_threshold, value_iteration, verify_q_submodular, verify_value_monotone
from .errors import ActsenseError, ConfigError, NotConverged, NumericalError
from .export import fmt, sha256_file, sha256_text, state_rows, write_csv, write_json
from .lagrange import estimate_lambda, lambda_optimality_check
from .lp import balance_residual, build_cmdp_lp, randomized_states, solve_cmdp, solve_lagrangian, write_lp_file
from .mixture import DELTA_LAMBDA, build_mixture, mixture_as_stationary
from .model import default_config, dump_config, load_config, model_from_config
from .policy import Policy
from .qlearn import LearnerConfig, Reference, run_pair
from .sim import PRNG_NAME, all_metrics, cup_policy, evaluate_policy, per_activity_error, simulate

log = logging.getLogger("actsense")

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2
BUDGET_TOL = 1e-3
OBJECTIVE_TOL = 1e-2
GAP_TIE = 1e-6


# ---------------------------------------------------------------------------
# argument helpers


def parse_floats(text: str) -> list[float]:
    """``"0.05,0.1"`` or ``"0.05:0.5:0.05"`` (start:stop:step, stop included)."""
    text = text.strip()
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        n = int(round((stop - start) / step)) + 1
        return [round(start + k * step, 12) for k in range(n)]
    return [float(x) for x in text.split(",") if x.strip()]


def parse_ints(text: str) -> list[int]:
    """``"1-20"``, ``"1,4,9"`` or a mix of both."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def resolve_config(path, overrides) -> dict:
    cfg = load_config(path) if path else default_config()
    cfg = dict(cfg)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"override {item!r} is not KEY=VALUE", key)
        try:
            cfg[key] = json.loads(raw)
        except json.JSONDecodeError:
            raise ConfigError(f"override value for {key!r} is not valid JSON", key) from None
    return cfg


def _state_header(*cols):
    return ["u", "e", "b", *cols]


# ---------------------------------------------------------------------------
# subcommands; each returns a dict of printable summary values


def cmd_solve_cmdp(ns, cfg, out: Path) -> dict:
    model = model_from_config(cfg)
    lp = build_cmdp_lp(model)
    if ns.write_lp:
        write_lp_file(lp, out / "cmdp.lp")
    sol = solve_cmdp(model)
    pol = sol.policy
    space = model.space
    write_csv(out / "phi.csv", _state_header("phi_sleep", "phi_active"),
              state_rows(space, sol.phi[:, 0], sol.phi[:, 1]))
    write_csv(out / "policy.csv", _state_header("p_active"), state_rows(space, pol.p_active))
    metrics = all_metrics(model, sol.phi)
    summary = {
        "J": sol.objective_value,
        "D": sol.data_usage,
        "budget": model.budget,
        "pivots": sol.pivots,
        "balance_residual": balance_residual(model.kernel, sol.phi),
        "randomized_states": len(randomized_states(pol)),
        **{k: metrics[k] for k in ("b_avg", "rho", "tau", "tau_full")},
    }
    write_csv(out / "summary.csv", list(summary), [list(summary.values())])
    return summary


class StageFailure(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"stage '{stage}': {exc}")
        self.stage, self.exc = stage, exc


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ActsenseError as exc:
        raise StageFailure(name, exc) from exc


def route_comparison(model, p_cmdp, p_lagr, vi, tie=GAP_TIE):
    """Per-state actions of the three routes and pairwise agreement on decided states."""
    routes = {
        "cmdp_lp": (np.asarray(p_cmdp) > 0.5).astype(np.int64),
        "lagrangian_lp": (np.asarray(p_lagr) > 0.5).astype(np.int64),
        "value_iteration": vi.actions,
    }
    decided = np.abs(vi.gap) >= tie
    names = list(routes)
    matrix = []
    for a, b in itertools.product(names, names):
        same = routes[a][decided] == routes[b][decided]
        matrix.append((a, b, int(same.sum()), int(decided.sum())))
    agree_all = (routes["cmdp_lp"] == routes["lagrangian_lp"]) & (routes["lagrangian_lp"] == routes["value_iteration"])
    return routes, decided, agree_all, matrix


def cmd_pipeline(ns, cfg, out: Path) -> dict:
    model = model_from_config(cfg)
    space = model.space
    D = model.budget

    cmdp = _stage("cmdp-lp", solve_cmdp, model)

    trace_lp = _stage("lambda-lp", estimate_lambda, model, ns.lambda0, ns.epsilon, ns.max_iters, "lp")
    trace_vi = _stage("lambda-vi", estimate_lambda, model, ns.lambda0, ns.epsilon, ns.max_iters, "vi",
                      vi_tol=ns.tol)
    for name, tr in (("lambda_trace.csv", trace_lp), ("lambda_trace_vi.csv", trace_vi)):
        write_csv(out / name, ["iter", "lambda", "data_usage", "delta_lambda"], tr.rows())

    grid = _stage("lagrangian-lp", lambda_optimality_check, model, trace_lp.lambda_star,
                  grid_points=ns.grid_points, backend="lp")
    write_csv(out / "lagrangian_grid.csv", ["lambda", "data_usage"], zip(grid.grid, grid.usages))

    base = trace_vi.lambda_star if ns.mixture_backend == "vi" else trace_lp.lambda_star
    lam = ns.lam if ns.lam is not None else base * ns.lambda_scale

    vi = _stage("value-iteration", value_iteration, model, lam, tol=ns.tol)
    write_csv(out / "value.csv", _state_header("v", "q_sleep", "q_active", "action"),
              state_rows(space, vi.value, vi.q[:, 0], vi.q[:, 1], vi.actions))
    mono = verify_value_monotone(vi.value, space)
    sub = verify_q_submodular(vi.q, space)
    try:
        table = extract_threshold(vi.actions, space, vi.q)
        write_csv(out / "thresholds.csv", ["u", "e", "b_cut"], table.rows())
        threshold_ok = True
    except NumericalError as exc:
        log.warning("value-iteration policy is not threshold: %s", exc)
        threshold_ok = False

    mix = _stage("mixture", build_mixture, model, lam, ns.delta_lambda, tol=ns.tol)
    mix_sol = _stage("mixture", mixture_as_stationary, model, mix, ns.mixing)
    write_csv(out / "mixture.csv", ["u", "e", "b_cut_minus", "b_cut_plus", "gamma"], mix.rows())

    lagr = _stage("lagrangian-lp", solve_lagrangian, model, trace_lp.lambda_star)
    routes, decided, agree, matrix = route_comparison(model, cmdp.policy.p_active, lagr.policy.p_active, vi)
    write_csv(out / "comparison.csv",
              _state_header("p_cmdp_lp", "p_lagrangian_lp", "a_value_iteration", "q_gap", "decided", "agree"),
              state_rows(space, cmdp.policy.p_active, lagr.policy.p_active, vi.actions, vi.gap,
                         decided, agree))
    write_csv(out / "agreement.csv", ["route_a", "route_b", "agree", "compared"], matrix)

    d_err = mix_sol.data_usage - D
    j_err = mix_sol.objective_value - cmdp.objective_value
    budget_dev = abs(d_err) > BUDGET_TOL
    if budget_dev:
        log.warning("mixture data usage %.6g deviates from the budget %.6g by %.3g",
                    mix_sol.data_usage, D, d_err)
    report = {
        "J_cmdp": cmdp.objective_value,
        "D_cmdp": cmdp.data_usage,
        "lambda_star_lp": trace_lp.lambda_star,
        "lambda_iterations_lp": len(trace_lp.iterations),
        "lambda_star_vi": trace_vi.lambda_star,
        "lambda_iterations_vi": len(trace_vi.iterations),
        "lambda_used": lam,
        "lagrangian_grid_monotone": grid.monotone,
        "gamma": mix.gamma,
        "usage_minus": mix.usage_minus,
        "usage_plus": mix.usage_plus,
        "mixture_flags": "|".join(mix.flags) or "none",
        "D_mixture": mix_sol.data_usage,
        "J_mixture": mix_sol.objective_value,
        "D_error": d_err,
        "J_error": j_err,
        "flag_budget_deviation": budget_dev,
        "flag_objective_deviation": abs(j_err) > OBJECTIVE_TOL,
        "threshold_ok": threshold_ok,
        "submodular_ok": sub.passed,
        "value_monotone": mono.passed,
        "value_direction": mono.direction,
        "decided_states": int(decided.sum()),
        "route_disagreements": int((~agree & decided).sum()),
        "routes_agree": bool(np.all(agree[decided])),
    }
    write_csv(out / "report.csv", ["key", "value"], report.items())
    return report


def _qlearn_worker(job):
    cfg, lam, iters, seed, init, ref = job
    model = model_from_config(cfg)
    conv, struct = run_pair(model, LearnerConfig(lam=lam, max_iters=iters, seed=seed, init=init), ref)
    return seed, conv, struct


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def cmd_qlearn_compare(ns, cfg, out: Path) -> dict:
    model = model_from_config(cfg)
    lam = ns.lam
    if lam is None:
        lam = _stage("lambda-vi", estimate_lambda, model, ns.lambda0, ns.epsilon, backend="vi").lambda_star
    seeds = parse_ints(ns.seeds) if ns.seeds else [ns.seed]
    ref = Reference.from_model(model, lam)
    jobs = [(cfg, lam, ns.iters, s, ns.init, ref) for s in seeds]
    results = _map(_qlearn_worker, jobs, ns.workers)

    trace, policies, finals = [], [], {"conventional": [], "structured": []}
    for seed, conv, struct in results:
        for step, mc, ms in zip(conv.steps, conv.mismatch, struct.mismatch):
            trace.append((seed, step, mc, ms))
        finals["conventional"].append(conv.final_mismatch)
        finals["structured"].append(struct.final_mismatch)
        for s, (u, e, b) in enumerate(model.space.states()):
            policies.append((seed, u, e, b, conv.actions[s], struct.actions[s], ref.actions[s]))
    write_csv(out / "mismatch_trace.csv", ["seed", "step", "mismatch_conventional", "mismatch_structured"], trace)
    write_csv(out / "qlearn_policies.csv", ["seed", "u", "e", "b", "conventional", "structured", "optimal"], policies)
    rows = [(mode, float(np.median(v)), float(np.mean(v)), len(v)) for mode, v in finals.items()]
    write_csv(out / "qlearn_summary.csv", ["mode", "median_final_mismatch", "mean_final_mismatch", "seeds"], rows)
    return {
        "lambda": lam,
        "iters": ns.iters,
        "seeds": len(seeds),
        "median_conventional": rows[0][1],
        "median_structured": rows[1][1],
    }


def _activity_columns(names):
    return [f"err_raw_{n}" for n in names] + [f"err_norm_{n}" for n in names]


def _sweep_cell(job):
    cfg, stages, epochs, seed, tol = job
    D, B, q = cfg["data_budget"], cfg["battery_capacity"], cfg["charge_prob"]
    rows = []
    try:
        model = model_from_config(cfg)
        policies = []
        opt = solve_cmdp(model)
        policies.append(("optimal", opt.policy, opt.phi))
        cup, cup_phi = cup_policy(model)
        policies.append(("cup", cup, evaluate_policy(model, cup).phi))
        policies.append(("cup_nominal", None, cup_phi))
        status = "ok"
        if stages == "full":
            try:
                lam = estimate_lambda(model, backend="vi", vi_tol=tol).lambda_star
            except NotConverged as exc:
                # best feasible multiplier seen so far; flagged in the status column
                lam = exc.trace.lambda_star
                status = "ok-lambda-not-converged"
            mix = build_mixture(model, lam, DELTA_LAMBDA, tol=tol, clip_at_zero=True)
            pol = mix.policy()
            policies.append(("mixture", pol, evaluate_policy(model, pol).phi))
        for name, pol, phi in policies:
            m = all_metrics(model, phi)
            raw, norm = per_activity_error(model, phi)
            j_mc = j_se = float("nan")
            if epochs and pol is not None:
                st = simulate(model, pol, epochs, seed)
                j_mc, j_se = st.detection_error, st.detection_error_se
            rows.append([name, D, B, q, m["J"], m["D"], j_mc, j_se, m["b_avg"], m["rho"], m["tau"],
                         seed, epochs, m["tau_full"], m["b_avg_active"],
                         status if name == "mixture" else "ok", *raw, *norm])
    except (ActsenseError, ValueError) as exc:
        n_act = len(cfg["activities"]) if isinstance(cfg["activities"], list) else int(cfg["activities"])
        nan = float("nan")
        rows = [["error", D, B, q, *[nan] * 7, seed, epochs, nan, nan,
                 f"{type(exc).__name__}: {exc}".replace("\n", " "), *[nan] * (2 * n_act)]]
    return rows


def _trend_checks(rows):
    """Monotone trends and dominance along each sweep axis, from the stats rows."""
    by = {}
    for r in rows:
        if not r[15].startswith("ok"):
            continue
        by.setdefault(r[0], []).append(r)
    checks = []
    opt = by.get("optimal", [])
    cup = {(r[1], r[2], r[3]): r[4] for r in by.get("cup", [])}
    nominal = {(r[1], r[2], r[3]): r[4] for r in by.get("cup_nominal", [])}

    def series(key_fixed, key_var, col):
        groups = {}
        for r in opt:
            groups.setdefault(tuple(r[i] for i in key_fixed), []).append((r[key_var], r[col]))
        return {k: sorted(v) for k, v in groups.items()}

    for fixed, var, col, name, sign in (((2, 3), 1, 4, "J non-increasing in D", -1),
                                        ((1, 3), 2, 8, "b_avg non-decreasing in B", +1),
                                        ((1, 3), 2, 10, "tau non-increasing in B", -1)):
        for key, pts in series(fixed, var, col).items():
            if len(pts) < 2:
                continue
            vals = np.array([v for _, v in pts])
            steps = np.diff(vals) * sign
            checks.append((name, "|".join(fmt(k) for k in key), bool(np.all(steps >= -1e-9)),
                           float(steps.min())))
    for label, ref in (("optimal J <= CUP J", cup), ("optimal J <= nominal CUP J", nominal)):
        if not ref:
            continue
        margins = [ref[(r[1], r[2], r[3])] - r[4] for r in opt if (r[1], r[2], r[3]) in ref]
        checks.append((label, "all", bool(min(margins) >= -1e-9), float(min(margins))))
    return checks


def cmd_sweep(ns, cfg, out: Path) -> dict:
    budgets = parse_floats(ns.budgets) if ns.budgets else [cfg["data_budget"]]
    caps = parse_ints(ns.capacities) if ns.capacities else [cfg["battery_capacity"]]
    charges = parse_floats(ns.charge_probs) if ns.charge_probs else [cfg["charge_prob"]]
    jobs = []
    for D, B, q in itertools.product(budgets, caps, charges):
        cell = dict(cfg, data_budget=D, battery_capacity=B, charge_prob=q)
        jobs.append((cell, ns.stages, ns.epochs, ns.seed, ns.tol))
    rows = [r for cell in _map(_sweep_cell, jobs, ns.workers) for r in cell]
    names = cfg["activities"] if isinstance(cfg["activities"], list) else [str(i) for i in range(cfg["activities"])]
    header = ["policy_name", "D", "B", "charge_prob", "J_analytic", "D_analytic", "J_mc", "J_mc_se",
              "b_avg", "rho", "tau", "seed", "epochs", "tau_full", "b_avg_active", "status",
              *_activity_columns([_slug(n) for n in names])]
    write_csv(out / "sweep.csv", header, rows)
    checks = _trend_checks(rows)
    write_csv(out / "sweep_checks.csv", ["check", "group", "passed", "worst_margin"], checks)
    return {
        "cells": len(jobs),
        "failed_cells": sum(1 for r in rows if not r[15].startswith("ok")),
        "checks_passed": sum(1 for c in checks if c[2]),
        "checks": len(checks),
    }


def _slug(name):
    return "".join(ch if ch.isalnum() else "_" for ch in str(name).lower()).strip("_")


def _policy_for(model, name, ns):
    if name == "cmdp":
        return solve_cmdp(model).policy
    if name == "cup":
        return cup_policy(model)[0]
    if name == "all-sleep":
        return Policy.constant(model.n_states, 0.0, "all-sleep")
    if name == "always-active":
        return Policy.constant(model.n_states, 1.0, "always-active")
    if name == "mixture":
        lam = ns.lam
        if lam is None:
            lam = estimate_lambda(model, backend="vi", vi_tol=ns.tol).lambda_star
        return build_mixture(model, lam, ns.delta_lambda, tol=ns.tol).policy()
    raise ConfigError(f"unknown policy {name!r}", "policy")


def cmd_simulate(ns, cfg, out: Path) -> dict:
    model = model_from_config(cfg)
    pol = _policy_for(model, ns.policy, ns)
    exact = all_metrics(model, evaluate_policy(model, pol).phi)
    st = simulate(model, pol, ns.epochs, ns.seed, warmup=ns.warmup)
    cols = [("J", "detection_error"), ("D", "data_usage"), ("b_avg", "avg_battery"),
            ("rho", "sync_rate"), ("tau", "overflow"), ("tau_full", "overflow_full")]
    rows = []
    for key, attr in cols:
        mc, se = getattr(st, attr), getattr(st, attr + "_se")
        z = (mc - exact[key]) / se if se > 0 else (0.0 if mc == exact[key] else float("nan"))
        rows.append((key, exact[key], mc, se, z))
    write_csv(out / "simulation.csv", ["metric", "analytic", "monte_carlo", "std_error", "z"], rows)
    write_csv(out / "stats.csv",
              ["policy_name", "D", "B", "charge_prob", "J_analytic", "D_analytic", "J_mc", "J_mc_se",
               "b_avg", "rho", "tau", "seed", "epochs"],
              [[ns.policy, model.budget, model.space.battery_capacity, model.charge_prob, exact["J"],
                exact["D"], st.detection_error, st.detection_error_se, exact["b_avg"], exact["rho"],
                exact["tau"], ns.seed, ns.epochs]])
    return {"policy": ns.policy, "epochs": ns.epochs, "max_abs_z": float(np.nanmax([abs(r[4]) for r in rows]))}


COMMANDS = {
    "solve-cmdp": cmd_solve_cmdp,
    "pipeline": cmd_pipeline,
    "qlearn-compare": cmd_qlearn_compare,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
}


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="actsense", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="model config JSON (default: bundled instance)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--tol", type=float, default=1e-8, help="value-iteration sup-norm tolerance")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=JSON",
                       help="override one config entry, e.g. --set data_budget=0.3")
        p.add_argument("-v", "--verbose", action="store_true")

    def lagrange_opts(p):
        p.add_argument("--lambda0", type=float, default=0.1)
        p.add_argument("--epsilon", type=float, default=1e-4, help="multiplier search stopping tolerance")
        p.add_argument("--max-iters", type=int, default=500)
        p.add_argument("--lambda", dest="lam", type=float, help="fix the multiplier instead of searching")
        p.add_argument("--delta-lambda", type=float, default=DELTA_LAMBDA)

    p = sub.add_parser("solve-cmdp", help="solve the constrained problem as a linear program")
    common(p)
    p.add_argument("--write-lp", action="store_true", help="also dump the program in LP format")

    p = sub.add_parser("pipeline", help="LP, multiplier search, value iteration and mixture")
    common(p)
    lagrange_opts(p)
    p.add_argument("--lambda-scale", type=float, default=1.0,
                   help="multiply the estimated multiplier (to probe a wrong price)")
    p.add_argument("--mixture-backend", choices=("vi", "lp"), default="vi",
                   help="which multiplier search feeds value iteration and the mixture")
    p.add_argument("--mixing", choices=("per-decision", "one-shot"), default="per-decision")
    p.add_argument("--grid-points", type=int, default=11)

    p = sub.add_parser("qlearn-compare", help="paired conventional vs structured Q-learning")
    common(p)
    lagrange_opts(p)
    p.add_argument("--seeds", help="e.g. 1-20 (default: --seed)")
    p.add_argument("--iters", type=int, default=100_000)
    p.add_argument("--init", choices=("tilted", "flat"), default="tilted")

    p = sub.add_parser("sweep", help="evaluate the optimum and the uniform baseline over a grid")
    common(p)
    p.add_argument("--budgets", help="data budgets, e.g. 0.05:0.5:0.05")
    p.add_argument("--capacities", help="battery capacities, e.g. 5,10,15")
    p.add_argument("--charge-probs", help="charging probabilities")
    p.add_argument("--stages", choices=("lp", "full"), default="lp",
                   help="'full' also builds the mixture policy in each cell")
    p.add_argument("--epochs", type=int, default=0, help="Monte-Carlo epochs per policy (0: analytic only)")

    p = sub.add_parser("simulate", help="Monte-Carlo run of one policy against its analytic metrics")
    common(p)
    lagrange_opts(p)
    p.add_argument("--policy", default="cmdp",
                   choices=("cmdp", "cup", "mixture", "all-sleep", "always-active"))
    p.add_argument("--epochs", type=int, default=1_000_000)
    p.add_argument("--warmup", type=int, default=10_000)

    p = sub.add_parser("rerun-manifest", help="repeat a recorded run and compare output hashes")
    p.add_argument("manifest")
    p.add_argument("--out", help="directory for the repeat (default: <run>/rerun)")
    return parser


def _error_record(kind, exc, stage=None):
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        rec["key"] = exc.key
    if stage:
        rec["stage"] = stage
    return rec


def execute(argv, out_override=None, config_override=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command == "rerun-manifest":
        return rerun_manifest(ns.manifest, ns.out)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(out_override or ns.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if config_override is not None:
            cfg = dict(config_override)
        else:
            cfg = resolve_config(ns.config, ns.overrides)
        model_from_config(cfg)
        (out / "config.json").write_text(dump_config(cfg))
        summary = COMMANDS[ns.command](ns, cfg, out)
    except ConfigError as exc:
        rec = _error_record("config", exc)
        write_json(out / "error.json", rec)
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        kind = "config" if isinstance(exc.exc, ConfigError) else "numerical"
        rec = _error_record(kind, exc.exc, exc.stage)
        write_json(out / "error.json", rec)
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return EXIT_CONFIG if kind == "config" else EXIT_NUMERICAL
    except NumericalError as exc:
        rec = _error_record("numerical", exc)
        write_json(out / "error.json", rec)
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return EXIT_NUMERICAL
    write_manifest(out, ns, argv, cfg)
    for key, val in summary.items():
        print(f"{key}: {fmt(val)}")
    return EXIT_OK


def write_manifest(out: Path, ns, argv, cfg):
    outputs = {p.name: sha256_file(p) for p in sorted(out.glob("*.csv"))}
    manifest = {
        "tool": "actsense",
        "version": __version__,
        "command": ns.command,
        "argv": list(argv),
        "config": cfg,
        "config_sha256": sha256_text(dump_config(cfg)),
        "seed": ns.seed,
        "seeds": getattr(ns, "seeds", None),
        "tolerances": {k: getattr(ns, k) for k in ("tol", "epsilon") if hasattr(ns, k)},
        "prng": PRNG_NAME,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "outputs": outputs,
    }
    write_json(out / "manifest.json", manifest)


def rerun_manifest(path, out=None) -> int:
    path = Path(path)
    manifest = json.loads(path.read_text())
    target = Path(out) if out else path.parent / "rerun"
    argv = list(manifest["argv"])
    code = execute(argv, out_override=target, config_override=manifest["config"])
    if code != EXIT_OK:
        return code
    fresh = json.loads((target / "manifest.json").read_text())["outputs"]
    same = True
    for name, digest in sorted(manifest["outputs"].items()):
        match = fresh.get(name) == digest
        same &= match
        print(f"{'identical' if match else 'DIFFERENT'}: {name}")
    if set(fresh) != set(manifest["outputs"]):
        same = False
        print("output file sets differ: " + shlex.join(sorted(set(fresh) ^ set(manifest["outputs"]))))
    return EXIT_OK if same else EXIT_NUMERICAL


def main(argv=None) -> int:
    return execute(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())
