"""Trajectory simulation under admissible conic terms and bounded disturbances.

Integration is classical fixed-step RK4. The conic term is re-evaluated at every
stage from the stage state, so ``p`` acts as a memoryless (time-varying)
function of ``q``; the adversarial samplers additionally look at ``x``.
Monte-Carlo runs are integrated together as one batch, each run keeping its
own generator seeded from ``(seed, run_index)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certificate import AnalysisCertificate, decay_rate
from .config import SimulationConfig
from .model import BuiltinClass, SystemModel, inv_checked, sym

SAMPLER_KINDS = ("norm_bounded", "sector_scalar", "adversarial", "sector_adversarial")
DISTURBANCE_KINDS = ("constant", "sinusoid", "piecewise", "zero")


class UnsupportedModelError(ValueError):
    pass


def _rng(seed, *extra) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, extra)])


# --- conic terms -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConicSampler:
    """Source of admissible conic terms.

    ``norm_bounded``: p = Delta(t) q with ||Delta(t)|| <= gain, Delta piecewise
    constant with period ``switch_period``. ``sector_scalar``: p_i = k kappa_i(t) q_i,
    kappa_i in [0, 1]. ``adversarial``: the norm-bounded p maximizing
    2 x'P E p. ``sector_adversarial``: the sector p maximizing 2 x'P E p.
    """
    kind: str
    gain: float
    rng_seed: int = 0
    switch_period: float = 0.5
    P: np.ndarray | None = None
    E: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if not self.gain >= 0:
            raise ValueError("sampler gain must be nonnegative")
        if self.kind in ("adversarial", "sector_adversarial") and (self.P is None or self.E is None):
            raise ValueError("adversarial samplers need P and E")

    def qi_matrix(self, n_q: int, n_p: int) -> np.ndarray:
        """The M of the class: [q; p]' M [q; p] >= 0 for every emitted pair."""
        if self.kind in ("norm_bounded", "adversarial"):
            return np.block([[self.gain ** 2 * np.eye(n_q), np.zeros((n_q, n_p))],
                             [np.zeros((n_p, n_q)), -np.eye(n_p)]])
        I = np.eye(n_p)
        return np.block([[np.zeros((n_q, n_q)), self.gain / 2 * I], [self.gain / 2 * I, -I]])


def adversarial_p(gain: float, P, E, x, q) -> np.ndarray:
    """p = gain ||q|| u with u = E'Px / ||E'Px||; zero when E'Px = 0 or q = 0."""
    g = np.atleast_2d(E).T @ np.atleast_2d(P) @ np.atleast_1d(x)
    ng = np.linalg.norm(g)
    nq = np.linalg.norm(q)
    if ng == 0.0 or nq == 0.0:
        return np.zeros_like(g)
    return gain * nq * g / ng


class _SamplerBatch:
    """Evaluates a list of samplers (one per run) on a batch of states."""

    def __init__(self, samplers, run_ids, t_final: float, n_q: int, n_p: int):
        self.n_p = n_p
        self.groups = []
        kinds = {}
        for b, s in enumerate(samplers):
            kinds.setdefault((s.kind, s.gain, s.switch_period, id(s.P), id(s.E)), []).append(b)
        for key, idx in kinds.items():
            s = samplers[idx[0]]
            idx = np.array(idx)
            table = None
            if s.kind in ("norm_bounded", "sector_scalar"):
                K = int(math.ceil(t_final / s.switch_period)) + 2
                table = []
                for b in idx:
                    rng = _rng(samplers[b].rng_seed, run_ids[b])
                    if s.kind == "norm_bounded":
                        raw = rng.standard_normal((K, n_p, n_q))
                        norms = np.linalg.norm(raw, ord=2, axis=(1, 2))
                        table.append(raw / norms[:, None, None] * (s.gain * rng.uniform(0, 1, K))[:, None, None])
                    else:
                        if n_p != n_q:
                            raise ValueError("sector sampler needs n_q == n_p")
                        table.append(s.gain * rng.uniform(0, 1, (K, n_p)))
                table = np.array(table)
            self.groups.append((s, idx, table))

    def __call__(self, t: float, X: np.ndarray, Qv: np.ndarray) -> np.ndarray:
        out = np.zeros((X.shape[0], self.n_p))
        for s, idx, table in self.groups:
            q = Qv[idx]
            if s.kind == "norm_bounded":
                k = min(int(t / s.switch_period), table.shape[1] - 1)
                out[idx] = np.einsum("bij,bj->bi", table[:, k], q)
            elif s.kind == "sector_scalar":
                k = min(int(t / s.switch_period), table.shape[1] - 1)
                out[idx] = table[:, k] * q
            else:
                g = X[idx] @ (s.P @ s.E)          # rows are (E'Px)'
                if s.kind == "adversarial":
                    ng = np.linalg.norm(g, axis=1)
                    nq = np.linalg.norm(q, axis=1)
                    safe = np.where(ng > 0, ng, 1.0)
                    out[idx] = np.where((ng > 0)[:, None], s.gain * (nq / safe)[:, None] * g, 0.0)
                else:
                    out[idx] = np.where(g * q > 0, s.gain * q, 0.0)
        return out


# --- disturbances ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DisturbanceSignal:
    """Bounded disturbance; ``||w(t)|| <= declared_bound`` is enforced by radial clipping."""
    kind: str
    declared_bound: float
    vector: np.ndarray | None = None
    amplitudes: np.ndarray | None = None
    frequencies: np.ndarray | None = None
    phases: np.ndarray | None = None
    switch_period: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DISTURBANCE_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if not self.declared_bound >= 0:
            raise ValueError("declared_bound must be nonnegative")
        for name in ("vector", "amplitudes", "frequencies", "phases"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.atleast_1d(np.asarray(v, dtype=float)))

    @property
    def continuous(self) -> bool:
        return self.kind != "piecewise"

    @classmethod
    def constant(cls, vector, bound: float | None = None):
        v = np.atleast_1d(np.asarray(vector, dtype=float))
        return cls("constant", float(np.linalg.norm(v)) if bound is None else bound, vector=v)

    @classmethod
    def zero(cls, n_w: int):
        return cls("zero", 0.0, vector=np.zeros(n_w))

    def __call__(self, t: float) -> np.ndarray:
        return _DisturbanceBatch([self], [0], t + 1.0, self._n_w())(t)[0]

    def _n_w(self) -> int:
        for v in (self.vector, self.amplitudes):
            if v is not None:
                return v.size
        raise ValueError("piecewise disturbance needs its dimension; pass it through a batch")


def _clip(W: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(W, axis=1)
    scale = np.where(n > bounds, bounds / np.where(n > 0, n, 1.0), 1.0)
    return W * scale[:, None]


class _DisturbanceBatch:
    def __init__(self, signals, run_ids, t_final: float, n_w: int):
        self.B, self.n_w = len(signals), n_w
        self.bounds = np.array([s.declared_bound for s in signals], dtype=float)
        self.const = np.zeros((self.B, n_w))
        self.sin_idx = np.array([b for b, s in enumerate(signals) if s.kind == "sinusoid"], dtype=int)
        self.pw_idx = np.array([b for b, s in enumerate(signals) if s.kind == "piecewise"], dtype=int)
        for b, s in enumerate(signals):
            if s.kind == "constant":
                self.const[b] = s.vector
        if self.sin_idx.size:
            self.amp = np.array([signals[b].amplitudes for b in self.sin_idx])
            self.freq = np.array([signals[b].frequencies for b in self.sin_idx])
            self.phase = np.array([signals[b].phases for b in self.sin_idx])
        if self.pw_idx.size:
            self.period = np.array([signals[b].switch_period for b in self.pw_idx])
            K = int(math.ceil(t_final / self.period.min())) + 2
            tables = []
            for b in self.pw_idx:
                rng = _rng(signals[b].seed, run_ids[b])
                d = rng.standard_normal((K, n_w))
                d /= np.linalg.norm(d, axis=1, keepdims=True)
                r = signals[b].declared_bound * rng.uniform(0, 1, K) ** (1.0 / n_w)
                tables.append(d * r[:, None])
            self.table = np.array(tables)

    def __call__(self, t: float) -> np.ndarray:
        W = self.const.copy()
        if self.sin_idx.size:
            W[self.sin_idx] = self.amp * np.sin(self.freq * t + self.phase)
        if self.pw_idx.size:
            k = np.minimum((t / self.period).astype(int), self.table.shape[1] - 1)
            W[self.pw_idx] = self.table[np.arange(self.pw_idx.size), k]
        return _clip(W, self.bounds)


# --- integration -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    V_values: np.ndarray
    q: np.ndarray
    p: np.ndarray
    w: np.ndarray
    P: np.ndarray
    deriv_bound: np.ndarray     # per step: largest RK4 stage derivative norm

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def _check_simulable(model: SystemModel):
    if np.any(model.D != 0):
        raise UnsupportedModelError("simulation needs D = 0 (q = C_q x + D p is an algebraic loop otherwise)")


def _grid(dt: float, t_final: float) -> np.ndarray:
    if not (dt > 0 and t_final > 0):
        raise ValueError("dt and t_final must be positive")
    N = int(math.ceil(t_final / dt - 1e-9))
    return dt * np.arange(N + 1)


def integrate_batch(model: SystemModel, p_fn, w_fn, X0: np.ndarray, dt: float, t_final: float):
    """RK4 on a batch of initial states. Returns times, states (B, N+1, n), q, p, w histories and stage bounds."""
    _check_simulable(model)
    A, E, G, C = model.A, model.E, model.G, model.C_q
    times = _grid(dt, t_final)
    X = np.array(X0, dtype=float).reshape(-1, model.n)
    B, N = X.shape[0], times.size - 1
    xs = np.empty((B, N + 1, model.n))
    qs = np.empty((B, N + 1, model.n_q))
    ps = np.empty((B, N + 1, model.n_p))
    ws = np.empty((B, N + 1, model.n_w))
    fb = np.empty((B, N))

    def f(t, Xs):
        Qv = Xs @ C.T
        Pv = p_fn(t, Xs, Qv)
        Wv = w_fn(t)
        return Xs @ A.T + Pv @ E.T + Wv @ G.T, Qv, Pv, Wv

    for k in range(N):
        t = times[k]
        k1, qs[:, k], ps[:, k], ws[:, k] = f(t, X)
        k2 = f(t + dt / 2, X + dt / 2 * k1)[0]
        k3 = f(t + dt / 2, X + dt / 2 * k2)[0]
        k4 = f(t + dt, X + dt * k3)[0]
        xs[:, k] = X
        fb[:, k] = np.max([np.linalg.norm(s, axis=1) for s in (k1, k2, k3, k4)], axis=0)
        X = X + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    xs[:, N] = X
    _, qs[:, N], ps[:, N], ws[:, N] = f(times[N], X)
    return times, xs, qs, ps, ws, fb


def _trajectory(times, xs, qs, ps, ws, fb, P) -> Trajectory:
    V = np.einsum("ki,ij,kj->k", xs, P, xs)
    return Trajectory(times, xs, V, qs, ps, ws, P, fb)


def integrate(model: SystemModel, sampler: ConicSampler, w: DisturbanceSignal, x0, dt: float, t_final: float,
              P=None) -> Trajectory:
    """Single trajectory of xdot = A x + E p + G w with p from ``sampler`` and w from ``w``."""
    _check_simulable(model)
    P = np.eye(model.n) if P is None else sym(np.atleast_2d(np.asarray(P, dtype=float)))
    p_fn = _SamplerBatch([sampler], [0], t_final, model.n_q, model.n_p)
    w_fn = _DisturbanceBatch([w], [0], t_final, model.n_w)
    out = integrate_batch(model, p_fn, w_fn, np.atleast_1d(x0)[None, :], dt, t_final)
    times, xs, qs, ps, ws, fb = out
    return _trajectory(times, xs[0], qs[0], ps[0], ws[0], fb[0], P)


# --- empirical checks ------------------------------------------------------


@dataclass(frozen=True)
class InvarianceReport:
    passed: bool
    started_inside: bool
    entered: bool
    entry_time: float | None
    max_excess: float            # max of V - level once inside (or over the run if started inside)
    max_increase_outside: float  # largest one-step increase of V before entry


def check_invariance(traj: Trajectory, P, level: float, margin: float) -> InvarianceReport:
    V = traj.V_values
    inside = V <= level
    if inside[0]:
        excess = float(np.max(V - level))
        return InvarianceReport(excess <= margin, True, True, float(traj.times[0]), excess, 0.0)
    if inside.any():
        k = int(np.argmax(inside))
        inc = float(np.max(np.diff(V[:k + 1]))) if k > 0 else 0.0
        excess = float(np.max(V[k:] - level))
        return InvarianceReport(inc <= margin and excess <= margin, False, True, float(traj.times[k]), excess, inc)
    inc = float(np.max(np.diff(V))) if V.size > 1 else 0.0
    return InvarianceReport(inc <= margin, False, False, None, float(np.max(V - level)), inc)


@dataclass(frozen=True)
class LimsupReport:
    passed: bool
    tail_max: float
    level: float
    horizon_ratio: float         # tail window length * decay_rate / 5; >= 1 meets the settling requirement


def check_limsup(traj: Trajectory, P, level: float, tail_fraction: float = 0.2, tol: float = 0.01,
                 decay: float | None = None) -> LimsupReport:
    T = traj.times[-1] - traj.times[0]
    start = traj.times[-1] - tail_fraction * T
    tail = traj.V_values[traj.times >= start - 1e-12]
    tail_max = float(tail.max())
    ratio = tail_fraction * T * decay / 5 if decay else math.nan
    return LimsupReport(tail_max <= level * (1 + tol), tail_max, float(level), float(ratio))


@dataclass(frozen=True)
class DecrementReport:
    passed: bool
    checked: int
    worst_ratio: float           # max over checked samples of residual / tolerance (<= 1 passes)
    max_residual: float


def lyapunov_decrement_check(traj: Trajectory, P, R_weighted, level: float, tol: float | None = None,
                             lam: float = 0.0, safety: float = 10.0) -> DecrementReport:
    """Finite-difference test of Vdot + x' R_weighted x <= 0 on samples with V >= level.

    Without an explicit ``tol`` each sample gets ``safety * dt * b_k`` with the
    local dynamics bound b_k = ||P|| f_k^2 + ||x_k|| f_k (||R_weighted|| + lam ||P||),
    f_k the largest RK4 stage derivative norm over the step.
    """
    P = np.atleast_2d(P)
    W = np.atleast_2d(R_weighted)
    dt = traj.dt
    V = traj.V_values
    xs = traj.states[:-1]
    mask = V[:-1] >= level
    if not mask.any():
        return DecrementReport(True, 0, 0.0, -math.inf)
    resid = (V[1:] - V[:-1]) / dt + np.einsum("ki,ij,kj->k", xs, W, xs)
    if tol is None:
        f = traj.deriv_bound
        nx = np.linalg.norm(xs, axis=1)
        nP, nW = np.linalg.norm(P, 2), np.linalg.norm(W, 2)
        tols = safety * dt * (nP * f ** 2 + nx * f * (nW + lam * nP))
        tols = np.maximum(tols, 1e-12 * np.maximum(V[:-1], 1e-300) / dt)
    else:
        tols = np.full(resid.shape, float(tol))
    r, t = resid[mask], tols[mask]
    ratio = r / np.where(t > 0, t, np.finfo(float).tiny)
    return DecrementReport(bool(np.all(r <= t)), int(mask.sum()), float(ratio.max()), float(r.max()))


def check_monotone(traj: Trajectory, rel_tol: float = 1e-9) -> tuple[bool, float]:
    """Whether V never increases by more than rel_tol * V(t0) per step (stability runs with w = 0)."""
    V = traj.V_values
    inc = float(np.max(np.diff(V))) if V.size > 1 else 0.0
    return inc <= rel_tol * max(V[0], np.finfo(float).tiny), inc


# --- Monte Carlo -----------------------------------------------------------


@dataclass(frozen=True)
class RunResult:
    run: int
    sampler: str
    disturbance: str
    V0: float
    invariance: bool
    limsup: bool | None
    decrement: bool
    monotone: bool | None
    tail_max: float
    invariance_excess: float
    decrement_ratio: float
    qi_min: float
    outside_hypotheses: bool
    error: str = ""

    @property
    def passed(self) -> bool:
        return (not self.error and self.invariance and self.decrement and self.limsup is not False
                and self.monotone is not False)


@dataclass
class MonteCarloReport:
    runs: list = field(default_factory=list)
    level: float = 0.0
    t_final: float = 0.0
    trajectories: list = field(default_factory=list)

    def _rate(self, attr) -> float | None:
        vals = [getattr(r, attr) for r in self.runs if not r.error and getattr(r, attr) is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    @property
    def errors(self) -> list:
        return [(r.run, r.error) for r in self.runs if r.error]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.runs)

    @property
    def empirical_level(self) -> float | None:
        vals = [r.tail_max for r in self.runs if not r.error]
        return float(min(vals)) if vals else None

    def summary(self) -> dict:
        ok = [r for r in self.runs if not r.error]
        return {
            "n_runs": self.n_runs,
            "level": self.level,
            "t_final": self.t_final,
            "invariance_pass_rate": self._rate("invariance"),
            "limsup_pass_rate": self._rate("limsup"),
            "decrement_pass_rate": self._rate("decrement"),
            "monotone_pass_rate": self._rate("monotone"),
            "all_passed": self.all_passed,
            "worst_invariance_excess": max((r.invariance_excess for r in ok), default=None),
            "worst_tail_max": max((r.tail_max for r in ok), default=None),
            "worst_decrement_ratio": max((r.decrement_ratio for r in ok), default=None),
            "min_qi_residual": min((r.qi_min for r in ok), default=None),
            "empirical_tightest_level": self.empirical_level,
            "runs_outside_hypotheses": sum(r.outside_hypotheses for r in self.runs),
            "errors": self.errors,
        }


def _disturbance_for(kind: str, bound: float, n_w: int, rng: np.random.Generator, seed: int, period: float):
    if kind == "zero" or bound == 0:
        return DisturbanceSignal.zero(n_w)
    d = rng.standard_normal(n_w)
    d /= np.linalg.norm(d)
    if kind == "constant":
        return DisturbanceSignal("constant", bound, vector=bound * d)
    if kind == "sinusoid":
        amp = rng.uniform(0, 1, n_w)
        amp *= bound / amp.sum()
        return DisturbanceSignal("sinusoid", bound, amplitudes=amp, frequencies=rng.uniform(0.1, 5, n_w),
                                 phases=rng.uniform(0, 2 * np.pi, n_w))
    return DisturbanceSignal("piecewise", bound, switch_period=period, seed=seed)


def _sampler_for(name: str, uclass: BuiltinClass, P, E, seed: int, period: float) -> ConicSampler:
    if name == "random":
        return ConicSampler(uclass.kind, uclass.value, seed, period)
    if name == "adversarial":
        kind = "adversarial" if uclass.kind == "norm_bounded" else "sector_adversarial"
        return ConicSampler(kind, uclass.value, seed, period, P, E)
    raise ValueError(f"unknown sampler {name!r}; use 'random' or 'adversarial'")


def monte_carlo(model: SystemModel, cert: AnalysisCertificate, uclass: BuiltinClass, w_bound: float,
                config: SimulationConfig | None = None) -> MonteCarloReport:
    """Simulate ``config.n_runs`` scenarios and run the invariance, limsup and decrement checks on each.

    Stability certificates (no lambda) or ``w_bound == 0`` simulate with w = 0
    and additionally check that V never increases.
    """
    config = config or SimulationConfig()
    P = sym(inv_checked(cert.Q, "Q"))
    W = sym(P @ cert.R @ P)
    stability = cert.lam is None or w_bound == 0
    level = 0.0 if stability else float(w_bound) ** 2
    report = MonteCarloReport(level=level, t_final=config.t_final)
    if config.n_runs == 0:
        return report
    _check_simulable(model)
    alpha = decay_rate(cert.Q, cert.R)
    Qh = np.linalg.cholesky(sym(cert.Q))
    M_class = ConicSampler(uclass.kind, uclass.value).qi_matrix(model.n_q, model.n_p)

    samplers, signals, X0, meta = [], [], [], []
    S = len(config.samplers)
    dist_kinds = ("zero",) if stability else config.disturbances
    for i in range(config.n_runs):
        rng = _rng(config.seed, i)
        sname = config.samplers[i % S]
        dname = dist_kinds[(i // S) % len(dist_kinds)]
        samplers.append(_sampler_for(sname, uclass, P, model.E, config.seed, config.switch_period))
        signals.append(_disturbance_for(dname, 0.0 if stability else w_bound, model.n_w, rng,
                                        config.seed, config.switch_period))
        lo, hi = config.x0_levels
        V0 = (1.0 if stability else level) * rng.uniform(lo, hi) if not stability else rng.uniform(0.1, 1.0)
        d = rng.standard_normal(model.n)
        X0.append(math.sqrt(V0) * Qh @ (d / np.linalg.norm(d)))
        meta.append((sname, dname, V0))

    run_ids = list(range(config.n_runs))
    try:
        p_fn = _SamplerBatch(samplers, run_ids, config.t_final, model.n_q, model.n_p)
        w_fn = _DisturbanceBatch(signals, run_ids, config.t_final, model.n_w)
        times, xs, qs, ps, ws, fb = integrate_batch(model, p_fn, w_fn, np.array(X0), config.dt, config.t_final)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        report.runs = [RunResult(i, m[0], m[1], m[2], False, None, False, None, math.nan, math.nan, math.nan,
                                 math.nan, False, str(exc)) for i, m in enumerate(meta)]
        return report

    margin = config.invariance_margin * level
    for i, (sname, dname, V0) in enumerate(meta):
        try:
            traj = _trajectory(times, xs[i], qs[i], ps[i], ws[i], fb[i], P)
            if not np.all(np.isfinite(traj.V_values)):
                raise FloatingPointError("trajectory diverged")
            qp = np.hstack([traj.q, traj.p])
            qi_min = float(np.min(np.einsum("ki,ij,kj->k", qp, M_class, qp)))
            if stability:
                mono, inc = check_monotone(traj)
                inv = check_invariance(traj, P, traj.V_values[0], 1e-9 * traj.V_values[0])
                dec = lyapunov_decrement_check(traj, P, W, 0.0)
                lim, monotone = None, mono
                tail = float(traj.V_values[traj.times >= traj.times[-1] * (1 - config.tail_fraction) - 1e-12].max())
            else:
                inv = check_invariance(traj, P, level, margin)
                limr = check_limsup(traj, P, level, config.tail_fraction, config.limsup_tol, alpha)
                dec = lyapunov_decrement_check(traj, P, W, level, lam=cert.lam)
                lim, monotone, tail = limr.passed, None, limr.tail_max
            report.runs.append(RunResult(i, sname, dname, V0, inv.passed, lim, dec.passed, monotone, tail,
                                         inv.max_excess, dec.worst_ratio, qi_min,
                                         not signals[i].continuous))
            if i < config.keep_trajectories:
                report.trajectories.append(traj)
        except (ValueError, FloatingPointError) as exc:
            report.runs.append(RunResult(i, sname, dname, V0, False, None, False, None, math.nan, math.nan,
                                         math.nan, math.nan, False, str(exc)))
    return report


def write_trajectory_csv(path, traj: Trajectory) -> None:
    n, n_q, n_p, n_w = traj.states.shape[1], traj.q.shape[1], traj.p.shape[1], traj.w.shape[1]
    header = ",".join(["t", *(f"x_{i + 1}" for i in range(n)), "V", *(f"q_{i + 1}" for i in range(n_q)),
                       *(f"p_{i + 1}" for i in range(n_p)), *(f"w_{i + 1}" for i in range(n_w))])
    data = np.column_stack([traj.times, traj.states, traj.V_values, traj.q, traj.p, traj.w])
    np.savetxt(Path(path), data, delimiter=",", fmt="%.17g", header=header, comments="")
