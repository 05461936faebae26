"""Acceptance criteria. Each test prints one ``ACCEPTANCE <id> PASS|FAIL`` line.

Tolerances pinned here:
  1  scalar sweep boundary 1.00 +- 0.02, runtime < 10 s
  2  two-state ultimate boundary within +- 0.05 of a brute-force grid oracle, solver runtime < 60 s
  3  certificate check <= 1e-7 relative, proof-chain steps <= 1e-6 relative, zero false accepts
  4  invariance margin 1e-3 * level, tail max <= 1.01 * level over the final 20% of a horizon
     >= 10 / decay_rate, finite-difference decrement at 10 * dt * local dynamics bound
  5  V nonincreasing and finite-difference decay with w = 0
  6  RK4 error ratio 16 +- 20%, inertia preserved on 100 matrices, affinity residual < 1e-10,
     solver determinism < 1e-12
"""

import json
import math
import time

import numpy as np
import pytest

from conicbound.certificate import AnalysisCertificate, check_certificate, decay_rate, replay_proof_chain
from conicbound.cli import run, sweep_boundary
from conicbound.config import LambdaGrid, SimulationConfig, SolverOptions, SweepSpec
from conicbound.lmi import build_affine_problem, congruence
from conicbound.model import BuiltinClass, norm_bounded
from conicbound.problem import builtin_problem_dict, parse_problem
from conicbound.sdp import decay_certificate_search, lambda_search, solve, solve_stability
from conicbound.simulate import ConicSampler, DisturbanceSignal, integrate, monte_carlo
from conicbound.suite import random_suite

from conftest import scalar_model, two_state_model


@pytest.fixture
def announce(capsys):
    def _announce(criterion, passed, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {criterion} {'PASS' if passed else 'FAIL'}: {detail}")
    return _announce


# --- independent oracles ------------------------------------------------------


def oracle_assembly(model, structure, Q, X, Y, lam, R):
    """Block formulas written out directly, order [x, p, q, w]."""
    T11, T12, T21, T22 = structure.T11, structure.T12, structure.T21, structure.T22
    A, E, G, C, D = model.A, model.E, model.G, model.C_q, model.D
    Gi = np.linalg.inv(T21 @ D + T22)
    K = T11 @ D + T12
    Lam, Sig = K @ Gi, T11 - K @ Gi @ T21
    At = A - E @ Gi @ T21 @ C
    n, n_p, n_q, n_w = A.shape[0], E.shape[1], C.shape[0], G.shape[1]
    Z = np.zeros
    rows = [[At @ Q + Q @ At.T + lam * Q + R, E @ Gi @ Y, Q @ C.T @ Sig.T, G],
            [(E @ Gi @ Y).T, -Y, Y @ Lam.T, Z((n_p, n_w))],
            [(Q @ C.T @ Sig.T).T, (Y @ Lam.T).T, -X, Z((n_q, n_w))],
            [G.T, Z((n_w, n_p)), Z((n_w, n_q)), -lam * np.eye(n_w)]]
    return np.block(rows)


def oracle_valid(model, structure, cert, tol=1e-7):
    if cert.lam is None or not cert.lam > 0:
        return False
    for M in (cert.Q, cert.X, cert.Y):
        if np.linalg.eigvalsh((M + M.T) / 2)[0] <= 0:
            return False
    if np.linalg.eigvalsh((cert.R + cert.R.T) / 2)[0] < 0:
        return False
    L = oracle_assembly(model, structure, cert.Q, cert.X, cert.Y, cert.lam, cert.R)
    return np.linalg.eigvalsh((L + L.T) / 2)[-1] <= tol * np.linalg.norm(L, 2)


def two_state_grid_oracle_feasible(gamma, qmax=1e4, R=None):
    """Grid over Q = [[a, b], [b, c]], multiplier scale s and lambda on the Schur-reduced 2x2 condition
    AQ + QA' + lam Q + R + s EE' + (gamma^2 / s) QC'CQ + GG' / lam < 0."""
    model = two_state_model()
    A = model.A
    R = 1e-6 * np.linalg.norm(A, 2) * model.scale() if R is None else R
    a = np.geomspace(1e-2, qmax, 28)
    rho = np.linspace(-0.995, 0.995, 41)
    A_, C_, P_ = np.meshgrid(a, a, rho, indexing="ij")
    qa, qc = A_.ravel(), C_.ravel()
    qb = (P_ * np.sqrt(A_ * C_)).ravel()
    AQ11 = 2 * (A[0, 0] * qa + A[0, 1] * qb)
    AQ22 = 2 * (A[1, 0] * qb + A[1, 1] * qc)
    AQ12 = A[0, 0] * qb + A[0, 1] * qc + A[1, 0] * qa + A[1, 1] * qb
    for lam in np.geomspace(1e-3, 1e3, 28):
        b11, b22, b12 = AQ11 + lam * qa + R, AQ22 + lam * qc + R + 1 / lam, AQ12 + lam * qb
        for s in np.geomspace(1e-3, qmax, 28):
            g = gamma**2 / s
            n11, n22, n12 = b11 + g * qa * qa, b22 + s + g * qb * qb, b12 + g * qa * qb
            if np.any((n11 < 0) & (n22 < 0) & (n11 * n22 - n12 * n12 > 0)):
                return True
    return False


def bisect(pred, lo, hi, tol):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if pred(mid) else (lo, mid)
    return 0.5 * (lo + hi)


# --- shared suite -------------------------------------------------------------


@pytest.fixture(scope="module")
def suite_results():
    out = []
    for case in random_suite(50):
        res = lambda_search(case.model, case.structure, SolverOptions(objective=case.objective))
        cert = AnalysisCertificate.from_solution(res.best.solution, res.best_lambda) if res.feasible else None
        out.append((case, res, cert))
    return out


def mc_config(model, cert, uclass):
    a = decay_rate(cert.Q, cert.R)
    horizon = max(20.0, 10.0 / a)
    gain = uclass.value
    L = np.linalg.norm(model.A, 2) + gain * np.linalg.norm(model.E, 2) * np.linalg.norm(model.C_q, 2)
    dt = 1e-2 if horizon <= 100 else min(5e-2, 0.25 / L)
    return SimulationConfig(n_runs=100, dt=dt, t_final=horizon), a


# --- criteria -------------------------------------------------------------------


def test_criterion_1_scalar_sweep(tmp_path, announce):
    # oracle: min over s of -2Q + s + gain^2 Q^2 / s is 2 (gain - 1) Q
    Qs, ss = np.meshgrid(np.geomspace(1e-3, 1e3, 200), np.geomspace(1e-3, 1e3, 200))
    oracle = bisect(lambda g: bool(np.any(-2 * Qs + ss + g**2 * Qs**2 / ss < 0)), 0.1, 2.0, 1e-4)
    path = tmp_path / "scalar.json"
    path.write_text(json.dumps(builtin_problem_dict([[-1.0]], [[1.0]], [[1.0]], [[1.0]],
                                                    uncertainty={"type": "norm_bounded", "gain": 0.5})))
    t0 = time.perf_counter()
    code, rep = run(["sweep", str(path), "--out-dir", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    boundary = rep["boundary"]
    ok = code == 0 and abs(boundary - 1.0) <= 0.02 and abs(oracle - 1.0) <= 0.02 and elapsed < 10
    announce(1, ok, f"boundary {boundary:.4f} (oracle {oracle:.4f}, target 1.00 +- 0.02), {elapsed:.2f} s < 10 s")
    assert ok


def test_criterion_2_two_state_boundary(announce):
    model = two_state_model()
    t0 = time.perf_counter()
    problem = parse_problem(json.dumps(builtin_problem_dict(
        model.A, model.E, model.G, model.C_q, model.D,
        uncertainty={"type": "norm_bounded", "gain": 1.0})).encode())
    spec = SweepSpec(min=1.0, max=2.5, bisection_tol=0.005, condition="ultimate", grid=LambdaGrid())
    solver_boundary = sweep_boundary(problem, spec, SolverOptions())["boundary"]
    elapsed = time.perf_counter() - t0
    t1 = time.perf_counter()
    oracle = bisect(two_state_grid_oracle_feasible, 1.0, 2.5, 0.005)
    oracle_time = time.perf_counter() - t1
    ok = abs(solver_boundary - oracle) <= 0.05 and elapsed < 60
    announce(2, ok, f"solver boundary {solver_boundary:.4f}, grid oracle {oracle:.4f} "
                    f"(|diff| {abs(solver_boundary - oracle):.4f} <= 0.05), solver {elapsed:.1f} s < 60 s, "
                    f"oracle {oracle_time:.1f} s; analytic limit 1/||C(sI-A)^-1 E||_inf = 2")
    assert ok


CORRUPTIONS = ("R_inflate", "Y_negate", "X_negate", "Q_times_100", "Q_negate", "lambda_negate", "Q_noise")


def corrupt(cert, kind, rng, model, structure):
    if kind == "R_inflate":
        L = oracle_assembly(model, structure, cert.Q, cert.X, cert.Y, cert.lam, cert.R)
        return cert.replace(R=cert.R + (10 * np.linalg.norm(L, 2) + 1) * np.eye(model.n))
    if kind == "Y_negate":
        return cert.replace(Y=-cert.Y)
    if kind == "X_negate":
        return cert.replace(X=-cert.X)
    if kind == "Q_times_100":
        return cert.replace(Q=100 * cert.Q)
    if kind == "Q_negate":
        return cert.replace(Q=-cert.Q)
    if kind == "lambda_negate":
        return cert.replace(lam=-cert.lam)
    B = rng.standard_normal(cert.Q.shape)
    return cert.replace(Q=cert.Q + np.linalg.norm(cert.Q, 2) * (B + B.T))


def test_criterion_3_certificate_soundness(suite_results, announce):
    feasible = [(c, cert) for c, res, cert in suite_results if cert is not None]
    bad_checks, bad_chain, worst_chk, worst_step = [], [], -np.inf, -np.inf
    for case, cert in feasible:
        chk = check_certificate(case.model, case.structure, cert, eig_tol=1e-7)
        chain = replay_proof_chain(case.model, case.structure, cert, tol=1e-6)
        worst_chk = max(worst_chk, chk.relative_max_eig)
        worst_step = max(worst_step, max(s.relative_max_eig for s in chain.steps))
        if not chk.passed:
            bad_checks.append(case.index)
        if not chain.passed or len(chain.steps) != 5:
            bad_chain.append(case.index)

    rng = np.random.default_rng(11)
    false_accepts, truly_invalid, rejected = [], 0, 0
    for i in range(50):
        case, cert = feasible[i % len(feasible)]
        kind = CORRUPTIONS[i % len(CORRUPTIONS)]
        bad = corrupt(cert, kind, rng, case.model, case.structure)
        accepted = check_certificate(case.model, case.structure, bad, eig_tol=1e-7).passed
        valid = oracle_valid(case.model, case.structure, bad)
        truly_invalid += not valid
        rejected += not accepted
        if accepted and not valid:
            false_accepts.append((case.index, kind))

    statuses = [res.best.status if res.best else None for _, res, _ in suite_results]
    ok = not bad_checks and not bad_chain and not false_accepts and len(feasible) > 0
    announce(3, ok, f"{len(feasible)}/50 feasible ({statuses.count('infeasible')} infeasible, "
                    f"{statuses.count('numerical_failure')} numerical failures); check failures {bad_checks}, "
                    f"chain failures {bad_chain}; worst check {worst_chk:.2e} <= 1e-7, worst step "
                    f"{worst_step:.2e} <= 1e-6; corrupted: {truly_invalid}/50 invalid by oracle, "
                    f"{rejected}/50 rejected, false accepts {false_accepts}")
    assert ok


def _mc_cases(suite_results):
    """Certified suite cases that can be simulated (built-in class, D = 0), plus two tight certificates."""
    cases = []
    for case, res, cert in suite_results:
        if cert is None or case.uclass is None or np.any(case.model.D):
            continue
        alpha, out, lam = decay_certificate_search(case.model, case.structure)
        if out is not None:
            cases.append((f"suite-{case.index}", case.model, case.structure, case.uclass,
                          AnalysisCertificate.from_solution(out.solution, lam)))
    model = two_state_model()
    for kind, value in (("norm_bounded", 1.0), ("sector_scalar", 1.5)):
        uc = BuiltinClass(kind, value)
        s = uc.structure(model)
        r = lambda_search(model, s, SolverOptions(objective="min_trace_Q", R_floor=0.2))
        cases.append((f"tight-{kind}", model, s, uc, AnalysisCertificate.from_solution(r.best.solution,
                                                                                        r.best_lambda)))
    return cases


def test_criterion_4_monte_carlo(suite_results, announce):
    failures, lines, n_cases = [], [], 0
    worst = {"invariance_excess": -np.inf, "tail_ratio": -np.inf, "decrement_ratio": -np.inf}
    for name, model, structure, uc, cert in _mc_cases(suite_results):
        assert check_certificate(model, structure, cert).passed
        cfg, a = mc_config(model, cert, uc)
        assert cfg.t_final >= 10 / a
        rep = monte_carlo(model, cert, uc, 1.0, cfg)
        s = rep.summary()
        n_cases += 1
        assert {r.sampler for r in rep.runs} == {"random", "adversarial"}
        worst["invariance_excess"] = max(worst["invariance_excess"], s["worst_invariance_excess"])
        worst["tail_ratio"] = max(worst["tail_ratio"], s["worst_tail_max"] / rep.level)
        worst["decrement_ratio"] = max(worst["decrement_ratio"], s["worst_decrement_ratio"])
        if not (s["invariance_pass_rate"] == 1.0 and s["limsup_pass_rate"] == 1.0
                and s["decrement_pass_rate"] == 1.0 and not s["errors"]):
            failures.append((name, s))
    ok = not failures and n_cases > 0
    announce(4, ok, f"{n_cases} certified cases x 100 runs; worst invariance excess "
                    f"{worst['invariance_excess']:.2e} <= 1e-3*level, worst tail/level {worst['tail_ratio']:.4f} "
                    f"<= 1.01, worst decrement residual/tol {worst['decrement_ratio']:.3f} <= 1; "
                    f"failing cases {[f[0] for f in failures]}")
    assert ok


def test_criterion_5_stability_monotone(suite_results, announce):
    failures, n_cases, worst_dec = [], 0, -np.inf
    for case, _, _ in suite_results:
        if case.uclass is None or np.any(case.model.D):
            continue
        out = solve_stability(case.model, case.structure)
        if not out.feasible:
            continue
        cert = AnalysisCertificate.from_solution(out.solution, None)
        rep = monte_carlo(case.model, cert, case.uclass, 0.0, SimulationConfig(n_runs=100, t_final=20.0))
        s = rep.summary()
        n_cases += 1
        worst_dec = max(worst_dec, s["worst_decrement_ratio"])
        if not (s["monotone_pass_rate"] == 1.0 and s["decrement_pass_rate"] == 1.0 and not s["errors"]):
            failures.append(case.index)
    ok = not failures and n_cases > 0
    announce(5, ok, f"{n_cases} certified stability cases x 100 runs with w = 0; V nonincreasing and "
                    f"decrement check pass everywhere (worst residual/tol {worst_dec:.3f}); failing {failures}")
    assert ok


def test_criterion_6_numerics(suite_results, announce):
    # RK4 order on xdot = -x
    m = scalar_model(E=0.0, G=0.0)
    errs = [abs(integrate(m, ConicSampler("norm_bounded", 1.0), DisturbanceSignal.zero(1), [1.0], dt, 1.0)
                .states[-1, 0] - math.exp(-1)) for dt in (0.1, 0.05)]
    ratio = errs[0] / errs[1]
    ok_rk4 = abs(ratio - 16) <= 0.2 * 16

    # inertia under congruence
    rng = np.random.default_rng(5)
    inertia_ok = 0
    for _ in range(100):
        n = int(rng.integers(2, 8))
        V = np.linalg.qr(rng.standard_normal((n, n)))[0]
        eig = rng.choice([-1.0, 1.0], n) * rng.uniform(0.1, 3.0, n)
        M = V @ np.diag(eig) @ V.T
        U = rng.standard_normal((n, n)) + 2 * np.eye(n)
        out = np.linalg.eigvalsh(congruence(M, U))
        inertia_ok += int(np.sum(out > 0) == np.sum(eig > 0) and np.sum(out < 0) == np.sum(eig < 0))
    ok_inertia = inertia_ok == 100

    # affinity of the canonical form against direct assembly
    worst_aff = 0.0
    for case, _, _ in suite_results[:20]:
        p = build_affine_problem(case.model, case.structure, 0.7, SolverOptions(fix_R=False))
        for _ in range(20):
            z = rng.standard_normal(p.n_vars)
            direct = p.assemble(z).matrix
            worst_aff = max(worst_aff, np.abs(p.main.value(z) - direct).max() / max(1.0, np.abs(direct).max()))
    ok_aff = worst_aff < 1e-10

    # determinism of the solver
    worst_det = 0.0
    for case, res, _ in suite_results[:10]:
        lam = res.best_lambda or 1.0
        a = solve(build_affine_problem(case.model, case.structure, lam, SolverOptions(objective="min_trace_Q")))
        b = solve(build_affine_problem(case.model, case.structure, lam, SolverOptions(objective="min_trace_Q")))
        assert a.status == b.status
        if a.feasible:
            worst_det = max(worst_det, max(np.abs(a.solution[k] - b.solution[k]).max() for k in "QXYR"))
    ok_det = worst_det < 1e-12

    announce("6a", ok_rk4, f"RK4 error ratio under dt halving {ratio:.3f} (16 +- 20%)")
    announce("6b", ok_inertia, f"inertia preserved on {inertia_ok}/100 random congruences")
    announce("6c", ok_aff, f"assembly affinity residual {worst_aff:.2e} < 1e-10")
    announce("6d", ok_det, f"solver determinism max difference {worst_det:.2e} < 1e-12")
    assert ok_rk4 and ok_inertia and ok_aff and ok_det
