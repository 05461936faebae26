import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conicbound.certificate import AnalysisCertificate, decay_rate, ultimate_bound
from conicbound.config import SimulationConfig, SolverOptions
from conicbound.model import BuiltinClass, SystemModel, norm_bounded
from conicbound.sdp import lambda_search, solve_stability
from conicbound.simulate import (
    ConicSampler,
    DisturbanceSignal,
    UnsupportedModelError,
    _DisturbanceBatch,
    _SamplerBatch,
    adversarial_p,
    check_invariance,
    check_limsup,
    check_monotone,
    integrate,
    lyapunov_decrement_check,
    monte_carlo,
    write_trajectory_csv,
)

from conftest import scalar_model, two_state_model

ONE = np.eye(1)


@pytest.fixture(scope="module")
def scalar_cert():
    m = scalar_model()
    r = lambda_search(m, norm_bounded(0.5), SolverOptions(objective="max_trace_R"))
    return m, AnalysisCertificate.from_solution(r.best.solution, r.best_lambda)


@pytest.fixture(scope="module")
def scalar_stability_cert():
    m = scalar_model()
    out = solve_stability(m, norm_bounded(0.5), SolverOptions(objective="max_trace_R"))
    return m, AnalysisCertificate.from_solution(out.solution, None)


def nominal(gain=0.5):
    return ConicSampler("norm_bounded", gain)


class TestIntegrate:
    def test_equilibrium(self):
        m = scalar_model(E=0.0)
        tr = integrate(m, nominal(), DisturbanceSignal.constant([1.0]), [1.0], 1e-2, 5.0)
        assert np.abs(tr.states - 1.0).max() < 1e-10

    def test_exponential(self):
        m = scalar_model(E=0.0, G=0.0)
        tr = integrate(m, nominal(), DisturbanceSignal.zero(1), [1.0], 1e-3, 1.0)
        assert tr.times[-1] == pytest.approx(1.0)
        assert abs(tr.states[-1, 0] - math.exp(-1)) < 1e-8

    def test_zero_state_stays(self, two_state):
        tr = integrate(two_state, nominal(1.0), DisturbanceSignal.zero(1), [0.0, 0.0], 1e-2, 3.0)
        assert np.all(tr.states == 0.0)

    def test_fourth_order(self):
        m = scalar_model(E=0.0, G=0.0)
        err = [abs(integrate(m, nominal(), DisturbanceSignal.zero(1), [1.0], dt, 1.0).states[-1, 0] - math.exp(-1))
               for dt in (0.1, 0.05)]
        assert err[0] / err[1] == pytest.approx(16.0, rel=0.2)

    def test_feedthrough_rejected(self):
        with pytest.raises(UnsupportedModelError):
            integrate(two_state_model(D=0.3), nominal(), DisturbanceSignal.zero(1), [1.0, 0.0], 1e-2, 1.0)

    def test_csv(self, tmp_path, two_state):
        tr = integrate(two_state, nominal(1.0), DisturbanceSignal.constant([0.5]), [1.0, 0.0], 0.1, 1.0,
                       P=np.eye(2))
        path = tmp_path / "t.csv"
        write_trajectory_csv(path, tr)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,x_1,x_2,V,q_1,p_1,w_1"
        assert len(lines) == tr.times.size + 1
        back = np.loadtxt(path, delimiter=",", skiprows=1)
        np.testing.assert_array_equal(back[:, 1:3], tr.states)


class TestSamplers:
    def test_adversarial_zero_direction(self):
        assert np.all(adversarial_p(1.0, np.eye(2), np.array([[0.0], [1.0]]), [1.0, 0.0], [1.0]) == 0)

    def test_adversarial_scalar(self):
        assert adversarial_p(0.5, ONE, ONE, [2.0], [2.0]) == pytest.approx([1.0])

    @given(st.integers(0, 10_000), st.floats(0.1, 3.0))
    def test_emitted_pairs_admissible(self, seed, gain):
        rng = np.random.default_rng(seed)
        n, nq, npp = 3, 2, 2
        E = rng.standard_normal((n, npp))
        P = np.eye(n)
        X = rng.standard_normal((5, n))
        Q = rng.standard_normal((5, nq))
        for kind in ("norm_bounded", "sector_scalar", "adversarial", "sector_adversarial"):
            s = ConicSampler(kind, gain, seed, 0.5, P, E)
            p = _SamplerBatch([s] * 5, list(range(5)), 10.0, nq, npp)(rng.uniform(0, 10), X, Q)
            M = s.qi_matrix(nq, npp)
            qp = np.hstack([Q, p])
            assert np.min(np.einsum("ki,ij,kj->k", qp, M, qp)) >= -1e-10 * (1 + gain**2) * np.max(Q**2)

    def test_adversarial_norm_exact(self):
        rng = np.random.default_rng(0)
        E, P = rng.standard_normal((3, 2)), np.eye(3)
        x, q = rng.standard_normal(3), rng.standard_normal(2)
        assert np.linalg.norm(adversarial_p(0.7, P, E, x, q)) == pytest.approx(0.7 * np.linalg.norm(q))

    @given(st.integers(0, 10_000))
    def test_disturbances_bounded(self, seed):
        rng = np.random.default_rng(seed)
        sigs = [DisturbanceSignal("piecewise", 0.8, seed=seed, switch_period=0.3),
                DisturbanceSignal("sinusoid", 0.8, amplitudes=[1.0, 1.0], frequencies=[1.0, 2.0], phases=[0, 1]),
                DisturbanceSignal.constant([3.0, 4.0], bound=0.8)]
        batch = _DisturbanceBatch(sigs, [0, 1, 2], 10.0, 2)
        for t in rng.uniform(0, 10, 20):
            assert np.linalg.norm(batch(t), axis=1).max() <= 0.8 * (1 + 1e-12)


class TestChecks:
    def test_invariance_certified_boundary_start(self, scalar_cert):
        m, cert = scalar_cert
        P = np.linalg.inv(cert.Q)
        x0 = [math.sqrt(cert.Q[0, 0])]              # V(x0) = 1 = level
        s = ConicSampler("adversarial", 0.5, P=P, E=m.E)
        tr = integrate(m, s, DisturbanceSignal.constant([1.0]), x0, 1e-2, 10.0, P=P)
        assert tr.V_values[0] == pytest.approx(1.0)
        assert check_invariance(tr, P, 1.0, 1e-3).passed

    def test_invariance_uncertified_gain(self):
        m = scalar_model()
        s = ConicSampler("adversarial", 1.5, P=ONE, E=m.E)
        tr = integrate(m, s, DisturbanceSignal.zero(1), [0.1], 1e-2, 20.0, P=ONE)
        assert tr.V_values[-1] > 1e6
        assert not check_invariance(tr, ONE, 1.0, 1e-3).passed

    def test_stability_monotone(self, scalar_stability_cert):
        m, cert = scalar_stability_cert
        P = np.linalg.inv(cert.Q)
        s = ConicSampler("adversarial", 0.5, P=P, E=m.E)
        tr = integrate(m, s, DisturbanceSignal.zero(1), [3.0], 1e-2, 10.0, P=P)
        assert check_monotone(tr)[0]
        assert check_invariance(tr, P, tr.V_values[0], 0.0).passed

    def test_limsup_far_start(self, scalar_cert):
        m, cert = scalar_cert
        P = np.linalg.inv(cert.Q)
        bound = ultimate_bound(cert, 1.0)
        a = decay_rate(cert.Q, cert.R)
        s = ConicSampler("adversarial", 0.5, P=P, E=m.E)
        horizon = 5 / (0.2 * a)                     # tail window covers 5 decay times
        tr = integrate(m, s, DisturbanceSignal.constant([1.0]), [10 * bound.radius], 1e-2, horizon, P=P)
        rep = check_limsup(tr, P, 1.0, 0.2, 0.01, a)
        assert rep.passed and rep.horizon_ratio >= 1.0

    def test_limsup_closed_form(self):
        m = scalar_model(E=0.0)
        tr = integrate(m, nominal(), DisturbanceSignal.constant([1.0]), [0.0], 1e-2, 30.0, P=ONE)
        rep = check_limsup(tr, ONE, 1.0)
        assert rep.passed and rep.tail_max == pytest.approx(1.0, abs=1e-9)

    def test_limsup_zero_disturbance(self, scalar_stability_cert):
        m, cert = scalar_stability_cert
        P = np.linalg.inv(cert.Q)
        tr = integrate(m, nominal(), DisturbanceSignal.zero(1), [1.0], 1e-2, 60.0, P=P)
        assert check_limsup(tr, P, 1e-6).passed

    def test_decrement_outside(self, scalar_cert):
        m, cert = scalar_cert
        P = np.linalg.inv(cert.Q)
        s = ConicSampler("adversarial", 0.5, P=P, E=m.E)
        tr = integrate(m, s, DisturbanceSignal.constant([1.0]), [20 * math.sqrt(cert.Q[0, 0])], 1e-2, 10.0, P=P)
        rep = lyapunov_decrement_check(tr, P, P @ cert.R @ P, 1.0, lam=cert.lam)
        assert rep.passed and rep.checked > 0

    def test_decrement_excludes_inside(self, scalar_cert):
        m, cert = scalar_cert
        P = np.linalg.inv(cert.Q)
        tr = integrate(m, nominal(), DisturbanceSignal.zero(1), [0.0], 1e-2, 1.0, P=P)
        assert lyapunov_decrement_check(tr, P, P @ cert.R @ P, 1.0).checked == 0

    def test_decrement_zero_R_is_monotonicity(self, scalar_stability_cert):
        m, cert = scalar_stability_cert
        P = np.linalg.inv(cert.Q)
        tr = integrate(m, nominal(), DisturbanceSignal.zero(1), [1.0], 1e-2, 5.0, P=P)
        rep = lyapunov_decrement_check(tr, P, np.zeros((1, 1)), 0.0, tol=0.0)
        assert rep.passed and rep.max_residual <= 0


class TestMonteCarlo:
    def test_scalar_all_invariant(self, scalar_cert):
        m, cert = scalar_cert
        rep = monte_carlo(m, cert, BuiltinClass("norm_bounded", 0.5), 1.0, SimulationConfig(n_runs=100))
        s = rep.summary()
        assert s["invariance_pass_rate"] == 1.0 and rep.all_passed
        assert s["empirical_tightest_level"] <= rep.level

    def test_empty(self, scalar_cert):
        m, cert = scalar_cert
        rep = monte_carlo(m, cert, BuiltinClass("norm_bounded", 0.5), 1.0, SimulationConfig(n_runs=0))
        assert rep.n_runs == 0 and rep.summary()["n_runs"] == 0 and not rep.errors

    def test_deterministic(self, scalar_cert):
        m, cert = scalar_cert
        cfg = SimulationConfig(n_runs=12, t_final=5.0, seed=7)
        a = monte_carlo(m, cert, BuiltinClass("norm_bounded", 0.5), 1.0, cfg)
        b = monte_carlo(m, cert, BuiltinClass("norm_bounded", 0.5), 1.0, cfg)
        assert a.runs == b.runs

    def test_runs_are_independent_of_batch_size(self, scalar_cert):
        m, cert = scalar_cert
        uc = BuiltinClass("norm_bounded", 0.5)
        a = monte_carlo(m, cert, uc, 1.0, SimulationConfig(n_runs=12, t_final=5.0))
        b = monte_carlo(m, cert, uc, 1.0, SimulationConfig(n_runs=6, t_final=5.0))
        assert a.runs[:6] == b.runs

    def test_piecewise_runs_flagged(self, scalar_cert):
        m, cert = scalar_cert
        rep = monte_carlo(m, cert, BuiltinClass("norm_bounded", 0.5), 1.0, SimulationConfig(n_runs=6, t_final=2.0))
        assert {r.disturbance for r in rep.runs if r.outside_hypotheses} == {"piecewise"}


def test_sampler_validation():
    with pytest.raises(ValueError):
        ConicSampler("adversarial", 1.0)
    with pytest.raises(ValueError):
        ConicSampler("unknown", 1.0)
    with pytest.raises(ValueError):
        DisturbanceSignal("constant", -1.0)
