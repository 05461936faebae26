"""Command-line front end.

Every command prints a JSON report on stdout (and writes it under
``--out-dir`` when given). Exit codes: 0 success or feasible, 2 infeasible
(the solver proved no certificate exists on the searched set), 1 for any
error or failed check.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .certificate import (
    AnalysisCertificate,
    check_certificate,
    decay_rate,
    replay_proof_chain,
    ultimate_bound,
)
from .config import OBJECTIVES, LambdaGrid, SweepSpec
from .model import validate_model
from .problem import Problem, ProblemError, decode_json, load_problem
from .sdp import FEASIBLE, INFEASIBLE, lambda_search, solve_stability
from .simulate import monte_carlo, write_trajectory_csv

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class CliError(Exception):
    pass


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True)


def _checks(report) -> list:
    return [{"name": c.name, "passed": bool(c.passed), "margin": c.margin, **({"detail": c.detail} if c.detail else {})}
            for c in report.checks]


def _chain(report) -> list:
    return [{"name": s.name, "passed": s.passed, "relative_max_eig": s.relative_max_eig, "residual": s.residual}
            for s in report.steps]


# --- option plumbing ---------------------------------------------------------


def _solver_options(problem: Problem, args):
    opts = problem.solver
    if getattr(args, "objective", None):
        opts = opts.replace(objective=args.objective)
    if getattr(args, "eps_margin", None) is not None:
        opts = opts.replace(eps_margin=args.eps_margin)
    return opts


def _lambda_grid(problem: Problem, args) -> LambdaGrid:
    g = problem.lambda_grid
    kw = {}
    for flag, name in (("lambda_min", "min"), ("lambda_max", "max"), ("lambda_points", "points")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    return replace(g, **kw) if kw else g


def _sim_config(problem: Problem, args):
    cfg = problem.simulation
    kw = {}
    for flag, name in (("dt", "dt"), ("t_final", "t_final"), ("runs", "n_runs"), ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    return replace(cfg, **kw) if kw else cfg


def _load_certificate(path) -> tuple[AnalysisCertificate, str]:
    data = Path(path).read_bytes()
    try:
        doc = decode_json(data)
    except ProblemError as exc:
        raise CliError(f"certificate {path}: {exc}") from None
    try:
        return AnalysisCertificate.from_dict(doc), hashlib.sha256(data).hexdigest()
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"certificate {path}: {exc}") from None


# --- commands ------------------------------------------------------------------


def cmd_validate(problem: Problem, args) -> tuple[int, dict]:
    rep = validate_model(problem.model, problem.structure)
    body = {"status": "valid" if rep.passed else "invalid", "checks": _checks(rep),
            "dimensions": {"n": problem.model.n, "n_p": problem.model.n_p, "n_q": problem.model.n_q,
                           "n_w": problem.model.n_w}}
    return (EXIT_OK if rep.passed else EXIT_ERROR), body


def _verify(problem: Problem, cert: AnalysisCertificate, tol: float) -> tuple[bool, dict]:
    chk = check_certificate(problem.model, problem.structure, cert, eig_tol=tol)
    body = {"checks": _checks(chk), "relative_max_eig": chk.relative_max_eig}
    ok = chk.passed
    try:
        chain = replay_proof_chain(problem.model, problem.structure, cert)
        body["proof_chain"] = _chain(chain)
        ok &= chain.passed
    except ValueError as exc:
        body["proof_chain"] = [{"name": "replay", "passed": False, "detail": str(exc)}]
        ok = False
    return ok, body


def _require_valid(problem: Problem):
    rep = validate_model(problem.model, problem.structure)
    if not rep.passed:
        raise CliError("invalid problem: " + "; ".join(f"{c.name} ({c.detail})" for c in rep.failures()))


def cmd_analyze(problem: Problem, args) -> tuple[int, dict]:
    _require_valid(problem)
    opts = _solver_options(problem, args)
    res = lambda_search(problem.model, problem.structure, opts, _lambda_grid(problem, args))
    grid = [{"lambda": lam, "status": o.status, "margin": o.margin} for lam, o in res.grid]
    if not res.feasible:
        statuses = {o.status for _, o in res.evaluated()}
        if statuses == {INFEASIBLE}:
            return EXIT_INFEASIBLE, {"status": "infeasible", "detail": "infeasible at all lambda grid points",
                                     "grid": grid}
        return EXIT_ERROR, {"status": "numerical_failure", "grid": grid,
                            "detail": "; ".join(sorted({o.detail for _, o in res.evaluated() if o.detail}))[:2000]}
    cert = AnalysisCertificate.from_solution(res.best.solution, res.best_lambda, {"margin": res.best.margin})
    ok, body = _verify(problem, cert, args.tol)
    body.update({"status": FEASIBLE if ok else "check_failed", "certificate": cert.to_dict(),
                 "ultimate_bound": ultimate_bound(cert, problem.disturbance_bound).to_dict(),
                 "lambda": res.best_lambda, "objective": opts.objective, "grid": grid})
    return (EXIT_OK if ok else EXIT_ERROR), body


def cmd_stability(problem: Problem, args) -> tuple[int, dict]:
    _require_valid(problem)
    out = solve_stability(problem.model, problem.structure, _solver_options(problem, args))
    if out.status == INFEASIBLE:
        return EXIT_INFEASIBLE, {"status": "infeasible", "margin": out.margin, "detail": out.detail}
    if not out.feasible:
        return EXIT_ERROR, {"status": out.status, "detail": out.detail}
    cert = AnalysisCertificate.from_solution(out.solution, None, {"margin": out.margin})
    ok, body = _verify(problem, cert, args.tol)
    body.update({"status": FEASIBLE if ok else "check_failed", "certificate": cert.to_dict(),
                 "decay_rate": decay_rate(cert.Q, cert.R)})
    return (EXIT_OK if ok else EXIT_ERROR), body


def cmd_certify(problem: Problem, args) -> tuple[int, dict]:
    cert, digest = _load_certificate(args.certificate)
    try:
        cert.check_dimensions(problem.model)
    except ValueError as exc:
        raise CliError(f"certificate does not fit the problem: {exc}") from None
    ok, body = _verify(problem, cert, args.tol)
    body.update({"status": "pass" if ok else "fail", "certificate_sha256": digest, "kind": cert.kind})
    if ok and cert.lam is not None:
        body["ultimate_bound"] = ultimate_bound(cert, problem.disturbance_bound).to_dict()
    return (EXIT_OK if ok else EXIT_ERROR), body


def cmd_simulate(problem: Problem, args) -> tuple[int, dict]:
    if problem.uclass is None:
        raise CliError("simulation needs a built-in uncertainty class (norm_bounded or sector_scalar)")
    cert, digest = _load_certificate(args.certificate)
    cfg = _sim_config(problem, args)
    if args.out_dir and cfg.keep_trajectories == 0:
        cfg = replace(cfg, keep_trajectories=min(cfg.n_runs, 3))
    try:
        rep = monte_carlo(problem.model, cert, problem.uclass, problem.disturbance_bound, cfg)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    files = []
    if args.out_dir:
        for i, traj in enumerate(rep.trajectories):
            name = f"trajectory_{i:03d}.csv"
            write_trajectory_csv(Path(args.out_dir) / name, traj)
            files.append(name)
    body = {"status": "pass" if rep.all_passed else "fail", "certificate_sha256": digest,
            "summary": rep.summary(), "trajectory_files": files,
            "config": {"n_runs": cfg.n_runs, "dt": cfg.dt, "t_final": cfg.t_final, "seed": cfg.seed}}
    return (EXIT_OK if rep.all_passed else EXIT_ERROR), body


def sweep_boundary(problem: Problem, spec: SweepSpec, opts) -> dict:
    """Bisection on the uncertainty gain, assuming feasibility is monotone (nonincreasing) in it."""
    rows = {}

    def feasible(g: float) -> bool:
        p = problem.with_gain(g)
        if spec.condition == "stability":
            out = solve_stability(p.model, p.structure, opts)
            lam = None
        else:
            res = lambda_search(p.model, p.structure, opts, spec.grid, stop_at_first_feasible=True)
            out, lam = res.best, res.best_lambda
        if out.status not in (FEASIBLE, INFEASIBLE):
            raise CliError(f"solver failure at gain {g}: {out.detail}")
        trace = float(np.trace(out.solution["Q"])) if out.feasible else None
        rows[g] = (out.feasible, lam if out.feasible else None, trace)
        return out.feasible

    lo, hi = spec.min, spec.max
    if not feasible(lo):
        boundary, interval = None, None
    elif feasible(hi):
        boundary, interval = hi, [lo, hi]
    else:
        while hi - lo > spec.bisection_tol:
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                lo = mid
            else:
                hi = mid
        boundary, interval = 0.5 * (lo + hi), [spec.min, lo]
    return {"boundary": boundary, "feasible_interval": interval, "bracket": [lo, hi],
            "rows": [(g, *rows[g]) for g in sorted(rows)]}


def cmd_sweep(problem: Problem, args) -> tuple[int, dict]:
    _require_valid(problem)
    if problem.uclass is None:
        raise CliError("sweep needs a built-in uncertainty class")
    spec = SweepSpec(min=args.gain_min, max=args.gain_max, bisection_tol=args.tol if args.tol_given else 0.005,
                     condition=args.condition, grid=_lambda_grid(problem, args))
    result = sweep_boundary(problem, spec, _solver_options(problem, args))
    if args.out_dir:
        with open(Path(args.out_dir) / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gain", "feasible", "lambda_best", "trace_Q"])
            for g, ok, lam, tr in result["rows"]:
                w.writerow([repr(g), str(ok).lower(), "" if lam is None else repr(lam), "" if tr is None else repr(tr)])
    rows = [{"gain": g, "feasible": ok, "lambda_best": lam, "trace_Q": tr} for g, ok, lam, tr in result["rows"]]
    body = {"status": "empty" if result["boundary"] is None else "ok", "condition": spec.condition,
            "boundary": result["boundary"], "feasible_interval": result["feasible_interval"],
            "bracket": result["bracket"], "bisection_tol": spec.bisection_tol, "rows": rows}
    return (EXIT_INFEASIBLE if result["boundary"] is None else EXIT_OK), body


COMMANDS = {"validate": cmd_validate, "analyze": cmd_analyze, "stability": cmd_stability,
            "certify": cmd_certify, "simulate": cmd_simulate, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conicbound", description="LMI analysis of systems with conic uncertainty.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, cert=False):
        p.add_argument("problem", help="problem JSON file")
        if cert:
            p.add_argument("certificate", help="certificate JSON file")
        p.add_argument("--out-dir", help="directory for the report and data files")
        p.add_argument("--tol", type=float, default=None,
                       help="relative eigenvalue tolerance (sweep: bisection tolerance)")

    def solver(p):
        p.add_argument("--objective", choices=OBJECTIVES)
        p.add_argument("--eps-margin", type=float)
        p.add_argument("--lambda-min", type=float)
        p.add_argument("--lambda-max", type=float)
        p.add_argument("--lambda-points", type=int)

    common(sub.add_parser("validate", help="check dimensions and multiplier structure"))
    p = sub.add_parser("analyze", help="ultimate-boundedness certificate via lambda search")
    common(p)
    solver(p)
    p = sub.add_parser("stability", help="quadratic-stability certificate (w = 0)")
    common(p)
    solver(p)
    common(sub.add_parser("certify", help="re-verify a certificate without solving"), cert=True)
    p = sub.add_parser("simulate", help="Monte-Carlo validation of a certificate")
    common(p, cert=True)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-final", type=float)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p = sub.add_parser("sweep", help="feasibility boundary in the uncertainty gain")
    common(p)
    solver(p)
    p.add_argument("--gain-min", type=float, default=0.1)
    p.add_argument("--gain-max", type=float, default=2.0)
    p.add_argument("--condition", choices=("stability", "ultimate"), default="stability")
    return ap


def run(argv=None) -> tuple[int, dict]:
    args = build_parser().parse_args(argv)
    args.tol_given = args.tol is not None
    if args.tol is None:
        args.tol = 1e-7
    t0 = time.perf_counter()
    report = {"tool": "conicbound", "version": __version__,
              "command": {"name": args.command, "argv": list(sys.argv[1:] if argv is None else argv)}}
    try:
        if args.out_dir:
            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        problem = load_problem(args.problem)
        report["input"] = {"problem_sha256": problem.digest}
        code, body = COMMANDS[args.command](problem, args)
    except (ProblemError, CliError, OSError, ValueError) as exc:
        code, body = EXIT_ERROR, {"status": "error", "error": str(exc),
                                  **({"field": exc.field, "byte_offset": exc.byte_offset}
                                     if isinstance(exc, ProblemError) else {})}
    report.update(body)
    report["exit_code"] = code
    report["timings"] = {"total_seconds": time.perf_counter() - t0}
    if args.out_dir:
        out = Path(args.out_dir)
        (out / f"{args.command}_report.json").write_text(dumps(report) + "\n")
        if "certificate" in body:
            (out / "certificate.json").write_text(dumps(body["certificate"]) + "\n")
    return code, report


def main(argv=None) -> int:
    code, report = run(argv)
    print(dumps(report))
    if report.get("status") == "error":
        print(f"error: {report['error']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
