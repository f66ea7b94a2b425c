"""Command line entry point: ``rootbarrier solve|embed|verify|example <config>``.

Exit status: 0 pass, 1 check failure, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .barrier import continuity_modulus, read_barrier_csv, write_barrier_csv
from .config import ConfigError, Scenario, build_grid, corridor_from, load_scenario
from .diffusion import simulate_stopped
from .rng import configure_threads
from .solver import (
    ConvexOrderError, GridError, PSORConvergenceError, SchemeViolationError, residual_report, solve,
)
from .verify import (
    Check, GateError, HypothesisError, SimParams, VerificationReport, atom_consistency, build_counterexample,
    check_corridor_bound, check_corridor_monotonicity, check_nested_bound, corridor_ensemble,
    density_ratio_scan_right, density_ratio_scan_sym, ks_distance, tail_zero_check, theorem_suite,
)
from .measure import embedding_interval

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
FLAG_RATE_LIMIT = 1e-3
EXACT_TOL = 1e-10


class NumericalFailure(RuntimeError):
    pass


def _header(sc: Scenario, seed: int | None = None) -> dict:
    out = {"scenario": sc.name, "config_sha256": sc.sha256, "version": __version__}
    if seed is not None:
        out["seed"] = seed
    return out


def _dump(path, doc: dict) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def cmd_solve(sc: Scenario, out_dir: str | None = None) -> int:
    r, surf = solve(sc.problem, sc.grid)
    bpath = sc.out_path("barrier.csv", out_dir)
    write_barrier_csv(r, bpath)
    rep = residual_report(surf)
    mod, where = continuity_modulus(r)
    doc = _header(sc)
    doc.update({
        "grid": {"n_x": sc.grid.n_x, "n_t": sc.grid.n_t, "t_cap": sc.grid.t_cap, "theta": sc.grid.theta},
        "max_residual": rep.max_residual,
        "residual_at": {"t": rep.location[0], "x": rep.location[1]},
        "max_kink_residual": rep.max_kink_residual,
        "kink_nodes": rep.kink_nodes,
        "continuity_modulus": mod,
        "modulus_at": where,
    })
    _dump(sc.out_path("residual.yaml", out_dir), doc)
    if sc.surface:
        surf.write_csv(sc.out_path("surface.csv", out_dir))
    print(f"barrier: {bpath}")
    print(f"max residual: {rep.max_residual:.3e} at t={rep.location[0]:.6g}, x={rep.location[1]:.6g}")
    print(f"continuity modulus: {mod:.6g} at x={where:.6g}")
    return EXIT_OK


def cmd_embed(sc: Scenario, barrier_path: str, out_dir: str | None = None) -> int:
    try:
        r = read_barrier_csv(barrier_path, sc.sim_t_cap)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read barrier {barrier_path}: {exc}") from None
    law = simulate_stopped(sc.problem.diffusion, sc.problem.initial, r, sc.t_eval, sc.sim.dt, sc.sim.n_paths,
                           sc.sim.seed)
    path = sc.out_path("empirical.csv", out_dir)
    law.write_csv(path)
    ks = ks_distance(law, sc.problem.target)
    ks0 = ks_distance(law, sc.problem.initial)
    rate = law.unstopped_rate if math.isinf(sc.t_eval) else 0.0
    doc = _header(sc, sc.sim.seed)
    # record the barrier by name and content so reports do not depend on the output directory
    digest = hashlib.sha256(Path(barrier_path).read_bytes()).hexdigest()
    doc.update({"barrier": Path(barrier_path).name, "barrier_sha256": digest, "dt": sc.sim.dt, "n_paths": sc.sim.n_paths, "t_eval": sc.t_eval,
                "ks_target": ks, "ks_initial": ks0, "unstopped_rate": rate, "domain_exits": law.exit_count})
    status = EXIT_OK
    if sc.ks_threshold is not None:
        doc["ks_threshold"] = sc.ks_threshold
        if ks > sc.ks_threshold:
            status = EXIT_FAIL
    _dump(sc.out_path("embed.yaml", out_dir), doc)
    print(f"empirical law: {path}")
    print(f"KS distance to target: {ks:.6f}")
    print(f"KS distance to initial: {ks0:.6f}")
    print(f"unstopped rate: {rate:.6f}")
    if law.exit_count:
        raise NumericalFailure(f"{law.exit_count} paths left the domain")
    if rate > FLAG_RATE_LIMIT and not r.has_inf():
        raise NumericalFailure(f"unstopped-path rate {rate:.4%} exceeds {FLAG_RATE_LIMIT:.1%}")
    return status


def run_lemmas(sc: Scenario) -> VerificationReport:
    """Solve the barrier, then run every declared check for every configured seed."""
    r, _ = solve(sc.problem, sc.grid)
    dt = sc.grid.dt
    report = VerificationReport({**_header(sc), "suite": "lemmas", "seeds": sc.seeds})
    decls = sc.block("checks") or []
    if not isinstance(decls, list):
        raise ConfigError("checks: expected a list")
    mc, exact = [], []
    for i, d in enumerate(decls):
        key = f"checks[{i}]"
        if not isinstance(d, dict) or len(d) != 1:
            raise ConfigError(f"{key}: a check is a one-key mapping {{kind: args}}")
        (kind, args), = d.items()
        args = args or {}
        if kind in ("corridor", "bound"):
            c = corridor_from(args, f"{key}.{kind}")
            try:
                c.validate(r)
            except HypothesisError as exc:
                raise ConfigError(f"{key}.{kind}: {exc}") from None
            mc.append((kind, c, args.get("name", f"{kind}_{i}")))
        else:
            exact.append((kind, args, key))
    J = embedding_interval(sc.problem.initial, sc.problem.target, r.grid, sc.grid.tol)
    target = sc.problem.target
    for kind, args, key in exact:
        if kind == "nested":
            outer = corridor_from(args.get("outer"), f"{key}.outer")
            inner = corridor_from(args.get("inner"), f"{key}.inner")
            report.add(check_nested_bound(sc.problem.diffusion, outer, inner))
        elif kind in ("scan_right", "scan_sym"):
            fn = density_ratio_scan_right if kind == "scan_right" else density_ratio_scan_sym
            x = float(args["x"])
            eps = np.asarray(args["eps"], dtype=float)
            ys = np.asarray(args.get("y", [x] * eps.size), dtype=float)
            try:
                ratios = fn(target, x, eps, ys, J if args.get("within_J", True) else None)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
            lo, hi = args.get("min_ratio"), args.get("max_ratio")
            # exact arithmetic up to floating-point roundoff
            slack = EXACT_TOL * max(1.0, float(np.max(np.abs(ratios), initial=0.0)))
            ok = (lo is None or bool(np.all(ratios >= float(lo) - slack))) and (
                hi is None or bool(np.all(ratios <= float(hi) + slack)))
            stat = float(ratios.min()) if lo is not None else float(ratios.max())
            thr = float(lo) if lo is not None else float(hi if hi is not None else math.nan)
            report.add(Check(f"{kind}_{x}", ok, stat, thr, note=f"ratios={ratios.tolist()}"))
        elif kind == "atom_consistency":
            chk = atom_consistency(target, r, dt)
            expect = args.get("expect_flags")
            if expect is not None:
                chk.passed = bool(chk.passed and np.allclose(sorted(chk.flagged), sorted(expect)))
            report.add(chk)
        elif kind == "tail_zero":
            report.add(tail_zero_check(target, r, float(args["x"]), dt, args.get("side", "right"),
                                       sc.problem.diffusion))
        else:
            raise ConfigError(f"{key}: unknown check kind {kind!r}")
    if mc:
        for seed in sc.seeds:
            sim = SimParams(sc.sim.dt, sc.sim.n_paths, seed)
            ens = corridor_ensemble(sc.problem, r, [c for _, c, _ in mc], sim)
            for kind, c, name in mc:
                fn = check_corridor_monotonicity if kind == "corridor" else check_corridor_bound
                report.add(fn(sc.problem, r, c, sim, ens, name=name))
    return report


def cmd_verify(sc: Scenario, suite: str, out_dir: str | None = None) -> int:
    if suite == "lemmas":
        report = run_lemmas(sc)
    elif suite == "theorem":
        block = sc.block("theorem") or {}
        grids = [build_grid(g, f"theorem.grids[{i}]", sc.grid) for i, g in enumerate(block.get("grids", []))]
        if not grids:
            grids = [build_grid({"n_x": 300, "n_t": 300}, "theorem", sc.grid), sc.grid]
        report = theorem_suite(sc.problem, grids)
        report.scenario = {**_header(sc), **report.scenario}
    elif suite == "counterexample":
        block = sc.block("counterexample") or {}
        _, r, report = build_counterexample(
            float(block.get("x", 0.0)), int(block.get("n_intervals", 3)), sc.grid, int(block.get("n_cells", 64)),
            sc.problem.diffusion,
        )
        report.scenario = {**_header(sc), **report.scenario}
        write_barrier_csv(r, sc.out_path("counterexample.barrier.csv", out_dir))
    else:
        raise ConfigError(f"unknown suite {suite!r}")
    path = sc.out_path(f"{suite}.yaml", out_dir)
    path.write_text(report.to_yaml())
    for c in report.checks:
        print(f"[{c.status:>7}] {c.name}: statistic={c.statistic:.6g} threshold={c.threshold:.6g}")
    print(f"report: {path}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_example(sc: Scenario, out_dir: str | None = None) -> int:
    """Solve and embed in one go; run the counterexample instead when the config declares one."""
    if sc.block("counterexample") is not None:
        return cmd_verify(sc, "counterexample", out_dir)
    cmd_solve(sc, out_dir)
    return cmd_embed(sc, str(sc.out_path("barrier.csv", out_dir)), out_dir)


def build_parser() -> argparse.ArgumentParser:
    # shared options are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads (default: $ROOTBARRIER_THREADS)")
    common.add_argument("--output-dir", default=argparse.SUPPRESS, help="override the config's output_dir")
    ap = argparse.ArgumentParser(prog="rootbarrier", description="Root barriers for Skorokhod embeddings",
                                 parents=[common])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("solve", parents=[common], help="solve the obstacle problem and write the barrier")
    p.add_argument("config")
    p = sub.add_parser("embed", parents=[common], help="simulate the stopped diffusion for a barrier file")
    p.add_argument("config")
    p.add_argument("barrier")
    p = sub.add_parser("verify", parents=[common], help="run a verification suite")
    p.add_argument("config")
    p.add_argument("--suite", choices=["lemmas", "theorem", "counterexample"], required=True)
    p = sub.add_parser("example", parents=[common], help="solve + embed, or the counterexample")
    p.add_argument("config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = getattr(args, "output_dir", None)
    try:
        configure_threads(getattr(args, "threads", None))
        sc = load_scenario(args.config)
        if args.cmd == "solve":
            return cmd_solve(sc, out_dir)
        if args.cmd == "embed":
            return cmd_embed(sc, args.barrier, out_dir)
        if args.cmd == "verify":
            return cmd_verify(sc, args.suite, out_dir)
        return cmd_example(sc, out_dir)
    except (ConfigError, HypothesisError, GateError, ConvexOrderError, GridError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PSORConvergenceError, SchemeViolationError, NumericalFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
