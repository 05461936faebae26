"""Seeded random problem suite used by the soundness and Monte-Carlo experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import OBJECTIVES
from .model import BuiltinClass, DiagonalPD, FreePD, MultiplierStructure, SystemModel


@dataclass(frozen=True, eq=False)
class SuiteCase:
    index: int
    model: SystemModel
    structure: MultiplierStructure
    uclass: BuiltinClass | None
    objective: str


def _explicit_structure(rng: np.random.Generator, m: int) -> MultiplierStructure:
    T = np.eye(2 * m) + 0.3 * rng.standard_normal((2 * m, 2 * m))
    pairs = FreePD() if rng.uniform() < 0.5 else DiagonalPD()
    return MultiplierStructure(T[:m, :m], T[:m, m:], T[m:, :m], T[m:, m:], pairs)


def random_case(rng: np.random.Generator, index: int, with_feedthrough: bool) -> SuiteCase:
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    n_w = int(rng.integers(1, 3))
    A = rng.standard_normal((n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.3, 2.0)) * np.eye(n)
    E = 0.7 * rng.standard_normal((n, m))
    G = 0.7 * rng.standard_normal((n, n_w))
    C = 0.7 * rng.standard_normal((m, n))
    D = 0.2 * rng.standard_normal((m, m)) if with_feedthrough else np.zeros((m, m))
    model = SystemModel(A, E, G, C, D)
    kind = index % 3
    if kind == 0:
        uclass = BuiltinClass("norm_bounded", float(rng.uniform(0.1, 2.0)))
        structure = uclass.structure(model)
    elif kind == 1:
        uclass = BuiltinClass("sector_scalar", float(rng.uniform(0.2, 3.0)))
        structure = uclass.structure(model)
    else:
        uclass, structure = None, _explicit_structure(rng, m)
    return SuiteCase(index, model, structure, uclass, OBJECTIVES[(index // 3) % 3])


def random_suite(count: int = 50, seed: int = 2024, feedthrough_every: int = 5) -> list[SuiteCase]:
    """``count`` cases; every ``feedthrough_every``-th one has D != 0."""
    rng = np.random.default_rng(seed)
    return [random_case(rng, i, with_feedthrough=(i % feedthrough_every == feedthrough_every - 1))
            for i in range(count)]
