from __future__ import annotations

from dataclasses import dataclass, field, replace

OBJECTIVES = ("pure_feasibility", "min_trace_Q", "max_trace_R")


@dataclass(frozen=True)
class SolverOptions:
    """Settings for building and solving one fixed-lambda LMI problem.

    ``None`` for a tolerance means "derive from the model scale" (see
    :func:`conicbound.lmi.resolve_options`).
    """
    eps_margin: float | None = None       # default 1e-8 * model scale
    max_iters: int = 200
    duality_gap_tol: float = 1e-8
    objective: str = "pure_feasibility"
    deterministic_seed: int = 0
    fix_R: bool | None = None             # default: fixed unless objective is max_trace_R
    R_floor: float | None = None          # default 1e-6 * max(||A||, 1) * scale
    pd_floor: float | None = None         # lower bound on Q, X, Y eigenvalues
    var_bound: float = 1e4                # upper bound on Q, R, X, Y eigenvalues
    decay_floor: float = 0.0              # R is shifted by decay_floor * Q, so the decay rate is >= decay_floor

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        for name in ("eps_margin", "R_floor", "pd_floor"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if not self.decay_floor >= 0:
            raise ValueError("decay_floor must be nonnegative")
        if not (self.duality_gap_tol > 0 and self.var_bound > 0 and self.max_iters > 0):
            raise ValueError("tolerances, bounds and iteration caps must be positive")

    def replace(self, **kw) -> "SolverOptions":
        return replace(self, **kw)


@dataclass(frozen=True)
class LambdaGrid:
    min: float = 1e-3
    max: float = 1e3
    points: int = 16
    refine_iters: int = 20

    def __post_init__(self):
        if self.points < 1:
            raise ValueError("lambda grid is empty")
        if not 0 < self.min <= self.max:
            raise ValueError("lambda grid needs 0 < min <= max")


@dataclass(frozen=True)
class SimulationConfig:
    n_runs: int = 100
    dt: float = 1e-2
    t_final: float = 20.0
    seed: int = 0
    samplers: tuple[str, ...] = ("random", "adversarial")
    disturbances: tuple[str, ...] = ("constant", "sinusoid", "piecewise")
    x0_levels: tuple[float, float] = (0.0, 100.0)   # V(x0) / level drawn uniformly in this range
    switch_period: float = 0.5
    tail_fraction: float = 0.2
    invariance_margin: float = 1e-3                  # relative to the level
    limsup_tol: float = 0.01
    keep_trajectories: int = 0

    def __post_init__(self):
        if self.n_runs < 0 or not self.dt > 0 or not self.t_final > 0:
            raise ValueError("n_runs must be >= 0 and dt, t_final positive")
        if not 0 < self.tail_fraction <= 1:
            raise ValueError("tail_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class SweepSpec:
    name: str = "gain"
    min: float = 0.1
    max: float = 2.0
    bisection_tol: float = 0.005
    condition: str = "stability"
    grid: LambdaGrid = field(default_factory=LambdaGrid)

    def __post_init__(self):
        if self.condition not in ("stability", "ultimate"):
            raise ValueError("condition must be 'stability' or 'ultimate'")
        if not 0 < self.min <= self.max or not self.bisection_tol > 0:
            raise ValueError("sweep needs 0 < min <= max and a positive tolerance")
