"""Fixed-lambda LMI solving and the one-dimensional search over lambda.

Solving runs in two phases on cvxopt's primal-dual interior-point SDP solver:

1. maximize a margin ``t`` with ``main(z) <= -t I`` and the variable floors
   and bounds. This problem is always strictly feasible, so the solver is
   well posed even when the LMI is not; the LMI is declared feasible iff
   ``t* > 2 eps_margin``.
2. if an objective other than pure feasibility was requested, optimize it
   subject to ``main(z) <= -eps_margin I``.

Every point reported as feasible is re-checked against all constraints by
eigenvalue computation before it is returned.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers

from .config import LambdaGrid, SolverOptions
from .lmi import AffineLmiProblem, build_affine_problem
from .model import MultiplierStructure, SystemModel

log = logging.getLogger(__name__)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True, eq=False)
class SolveOutcome:
    status: str
    lam: float | None
    margin: float                       # phase-1 optimum t*
    solution: dict | None = None        # Q, X, Y, R, params, z
    max_eig: float | None = None        # largest eigenvalue of the main LMI at the solution
    objective_value: float | None = None
    detail: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def _cvx(a) -> cvx_matrix:
    return cvx_matrix(np.asarray(a, dtype=float))


def _run_sdp(c, blocks, lin=None, options: SolverOptions | None = None):
    """min c^T x s.t. h_j - sum_i x_i G_j[i] >= 0 for each (G_j, h_j) in blocks."""
    Gs, hs = [], []
    for G, h in blocks:
        m = h.shape[0]
        Gs.append(_cvx(G.reshape(G.shape[0], m * m).T))
        hs.append(_cvx(h))
    kw = {}
    if lin is not None:
        kw["Gl"], kw["hl"] = _cvx(lin[0]), _cvx(lin[1])
    opts = {
        "show_progress": False,
        "maxiters": options.max_iters,
        "abstol": options.duality_gap_tol,
        "reltol": options.duality_gap_tol,
        "feastol": 1e-8,
    }
    sol = solvers.sdp(_cvx(c), Gs=Gs, hs=hs, options=opts, **kw)
    x = None if sol["x"] is None else np.array(sol["x"]).ravel()
    dual = sol.get("dual objective")
    if dual is None or sol.get("dual infeasibility") is None or sol["dual infeasibility"] > 1e-6:
        dual = None
    return sol["status"], x, dual


def _constraint_blocks(problem: AffineLmiProblem, with_margin_var: bool):
    """cvxopt data; the main constraint takes the margin variable (last column) when requested."""
    blocks = []
    extra = 1 if with_margin_var else 0
    for con in problem.constraints:
        m = con.F0.shape[0]
        I = np.eye(m)
        G = np.zeros((problem.n_vars + extra, m, m))
        if con.sense == "nsd":
            G[:problem.n_vars] = con.F
            if with_margin_var and con.name == "main":
                G[-1] = I
                h = -con.F0
            else:
                h = -con.F0 - con.floor * I
        else:
            G[:problem.n_vars] = -con.F
            h = con.F0 - con.floor * I
        blocks.append((G, h))
    return blocks


def verify_point(problem: AffineLmiProblem, z: np.ndarray, tol: float) -> tuple[bool, list]:
    """Eigenvalue check of every constraint at ``z``; tolerance is relative to each matrix."""
    rows = []
    ok = True
    for con in problem.constraints:
        scale = max(1.0, float(np.abs(con.value(z)).max()), float(np.abs(con.F0).max()))
        s = con.slack(z)
        passed = s >= -tol * scale
        ok &= passed
        rows.append((con.name, s, passed))
    return bool(ok), rows


def _solution(problem: AffineLmiProblem, z: np.ndarray) -> dict:
    v = problem.unpack(z)
    v["z"] = z
    return v


def _pull_back(problem: AffineLmiProblem, z_obj: np.ndarray, z_margin: np.ndarray, eps: float) -> np.ndarray:
    """Move the objective point toward the max-margin point until main(z) <= -eps I.

    lambda_max of an affine matrix function is convex, so the blend weight
    from the two endpoint eigenvalues is sufficient; it is confirmed below.
    """
    top_obj = float(np.linalg.eigvalsh(problem.main.value(z_obj))[-1])
    if top_obj <= -eps:
        return z_obj
    top_mar = float(np.linalg.eigvalsh(problem.main.value(z_margin))[-1])
    theta = min(1.0, (top_obj + eps) / (top_obj - top_mar) * (1 + 1e-6))
    for _ in range(30):
        z = (1 - theta) * z_obj + theta * z_margin
        if np.linalg.eigvalsh(problem.main.value(z))[-1] <= -eps or theta >= 1.0:
            return z
        theta = min(1.0, 2 * theta)
    return z_margin


def solve(problem: AffineLmiProblem, options: SolverOptions | None = None) -> SolveOutcome:
    opts = problem.options if options is None else options
    eps = problem.options.eps_margin
    k = problem.n_vars

    c1 = np.zeros(k + 1)
    c1[-1] = -1.0
    t_cap = problem.options.var_bound
    lin = (np.concatenate([np.zeros(k), [1.0]]).reshape(1, -1), np.array([t_cap]))
    try:
        status, x, dual = _run_sdp(c1, _constraint_blocks(problem, True), lin, opts)
    except (ValueError, ArithmeticError) as exc:
        return SolveOutcome(NUMERICAL_FAILURE, problem.lam, math.nan, detail=f"phase 1: {exc}")
    if x is None:
        return SolveOutcome(NUMERICAL_FAILURE, problem.lam, math.nan, detail=f"phase 1 status {status}")

    z, t = x[:k], float(x[-1])
    # the margin actually achieved by the returned point, not the solver's claim
    t_true = -float(np.linalg.eigvalsh(problem.main.value(z))[-1])
    margin = min(t, t_true) if status == "optimal" else t_true
    # weak duality: -dual objective bounds the best margin from above
    bound = -dual if dual is not None else math.inf
    if status != "optimal" and not margin > 2 * eps and not bound <= 2 * eps:
        return SolveOutcome(NUMERICAL_FAILURE, problem.lam, margin,
                            detail=f"phase 1 status {status}, margin {margin:.3g}, dual bound {bound:.3g}")
    if not margin > 2 * eps:
        return SolveOutcome(INFEASIBLE, problem.lam, margin,
                            detail=f"largest achievable margin {margin:.3g} <= 2*eps_margin ({2 * eps:.3g})")

    ok, rows = verify_point(problem, z, opts.duality_gap_tol)
    if not ok:
        return SolveOutcome(NUMERICAL_FAILURE, problem.lam, margin,
                            detail=f"phase 1 point fails verification: {[r for r in rows if not r[2]]}")
    best_z, detail = z, ""

    if problem.options.objective != "pure_feasibility":
        try:
            status2, x2, _ = _run_sdp(problem.objective, _constraint_blocks(problem, False), None, opts)
        except (ValueError, ArithmeticError) as exc:
            status2, x2 = f"error: {exc}", None
        if x2 is not None and status2 == "optimal" and verify_point(problem, x2, opts.duality_gap_tol)[0]:
            best_z = _pull_back(problem, x2, z, eps)
        else:
            detail = f"objective phase returned {status2}; keeping the max-margin point"
            log.info(detail)

    max_eig = float(np.linalg.eigvalsh(problem.assemble(best_z).matrix)[-1])
    obj = float(problem.objective @ best_z)
    return SolveOutcome(FEASIBLE, problem.lam, margin, _solution(problem, best_z), max_eig, obj, detail)


# --- lambda search -------------------------------------------------------

GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass(eq=False)
class LambdaSearchResult:
    best_lambda: float | None
    best: SolveOutcome | None
    grid: list = field(default_factory=list)          # (lambda, outcome) in grid order
    refinement: list = field(default_factory=list)    # (lambda, outcome) in evaluation order

    @property
    def feasible(self) -> bool:
        return self.best is not None and self.best.feasible

    def evaluated(self):
        return self.grid + self.refinement


def _score(outcome: SolveOutcome, objective: str) -> tuple:
    """Larger is better. Feasible points rank above all infeasible ones."""
    m = outcome.margin if math.isfinite(outcome.margin) else -math.inf
    if not outcome.feasible:
        return (0, m)
    if objective == "pure_feasibility":
        return (1, m)
    # objective vector is a minimization; negate
    return (1, -outcome.objective_value)


def lambda_search(model: SystemModel, structure: MultiplierStructure, options: SolverOptions | None = None,
                  lambda_grid: LambdaGrid | None = None, stop_at_first_feasible: bool = False) -> LambdaSearchResult:
    """Log-grid search over lambda followed by golden-section refinement in log(lambda)."""
    options = options or SolverOptions()
    grid = lambda_grid or LambdaGrid()
    lams = np.geomspace(grid.min, grid.max, grid.points)
    if lams.size == 0:
        raise ValueError("empty lambda grid")
    cache: dict[float, SolveOutcome] = {}

    def evaluate(lam: float) -> SolveOutcome:
        lam = float(lam)
        if lam not in cache:
            cache[lam] = solve(build_affine_problem(model, structure, lam, options))
        return cache[lam]

    result = LambdaSearchResult(None, None)
    for lam in lams:
        out = evaluate(lam)
        result.grid.append((float(lam), out))
        if stop_at_first_feasible and out.feasible:
            result.best_lambda, result.best = float(lam), out
            return result

    scores = [_score(o, options.objective) for _, o in result.grid]
    i_best = max(range(len(scores)), key=lambda i: scores[i])

    if grid.refine_iters > 0 and lams.size > 1:
        lo = math.log(lams[max(i_best - 1, 0)])
        hi = math.log(lams[min(i_best + 1, lams.size - 1)])
        a, b = lo, hi
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)

        def f(u):
            out = evaluate(math.exp(u))
            result.refinement.append((math.exp(u), out))
            return _score(out, options.objective)

        fc, fd = f(c), f(d)
        for _ in range(grid.refine_iters - 2):
            if fc >= fd:
                b, d, fd = d, c, fc
                c = b - GOLDEN * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + GOLDEN * (b - a)
                fd = f(d)
            if stop_at_first_feasible and (fc[0] == 1 or fd[0] == 1):
                break

    candidates = result.evaluated()
    best_lam, best_out = max(candidates, key=lambda lo: (_score(lo[1], options.objective), -lo[0]))
    result.best_lambda, result.best = best_lam, best_out
    return result


def solve_stability(model: SystemModel, structure: MultiplierStructure,
                    options: SolverOptions | None = None) -> SolveOutcome:
    return solve(build_affine_problem(model, structure, None, options))


def decay_certificate_search(model: SystemModel, structure: MultiplierStructure, ultimate: bool = True,
                             options: SolverOptions | None = None, lambda_grid: LambdaGrid | None = None,
                             start: float | None = None, halvings: int = 12):
    """First feasible decay floor in ``start * 2^-k``, k = 0..halvings.

    Returns ``(alpha, outcome, lambda)`` or ``(None, None, None)``. ``start``
    defaults to ``||A||``. A certificate found this way has decay rate >= alpha.
    """
    options = options or SolverOptions()
    alpha = float(start if start is not None else max(np.linalg.norm(model.A, 2), 1e-3))
    for _ in range(halvings + 1):
        opts = options.replace(decay_floor=alpha)
        if ultimate:
            res = lambda_search(model, structure, opts, lambda_grid, stop_at_first_feasible=True)
            if res.feasible:
                return alpha, res.best, res.best_lambda
        else:
            out = solve_stability(model, structure, opts)
            if out.feasible:
                return alpha, out, None
        alpha /= 2
    return None, None, None
