"""Problem data: the uncertain system, multiplier structures and the QI.

The system is

    xdot = A x + E p + G w,      q = C_q x + D p,

where the conic term ``p`` satisfies ``[q; p]^T M [q; p] >= 0`` for every
multiplier ``M`` of the form ``T^T blockdiag(X^-1, -Y^-1) T`` with ``(X, Y)``
drawn from a convex, LMI-representable set (one of the ``*Pair``/``*PD``
parameterizations below).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

MAX_COND = 1e12


class DimensionError(ValueError):
    """Two matrices of the problem data have incompatible shapes."""

    def __init__(self, first: str, second: str, detail: str):
        self.pair = (first, second)
        super().__init__(f"dimension mismatch between {first} and {second}: {detail}")


class SingularityError(ValueError):
    """A matrix that must be inverted is singular or badly conditioned."""


def as_matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got array of shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def inv_checked(M: np.ndarray, what: str, max_cond: float = MAX_COND) -> np.ndarray:
    """Invert ``M``, refusing when its 2-norm condition number exceeds ``max_cond``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] == 0.0 or s[0] / s[-1] > max_cond:
        cond = np.inf if s[-1] == 0.0 else s[0] / s[-1]
        raise SingularityError(f"{what} is singular or ill-conditioned (cond={cond:.3g})")
    return np.linalg.inv(M)


@dataclass(frozen=True, eq=False)
class SystemModel:
    A: np.ndarray
    E: np.ndarray
    G: np.ndarray
    C_q: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in ("A", "E", "G", "C_q", "D"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError("A", "A", f"A must be square, got {self.A.shape}")
        if self.E.shape[0] != n:
            raise DimensionError("A", "E", f"E has {self.E.shape[0]} rows, expected {n}")
        if self.G.shape[0] != n:
            raise DimensionError("A", "G", f"G has {self.G.shape[0]} rows, expected {n}")
        if self.C_q.shape[1] != n:
            raise DimensionError("A", "C_q", f"C_q has {self.C_q.shape[1]} columns, expected {n}")
        if self.D.shape != (self.C_q.shape[0], self.E.shape[1]):
            raise DimensionError(
                "C_q/E", "D",
                f"D is {self.D.shape}, expected {(self.C_q.shape[0], self.E.shape[1])}",
            )

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.E.shape[1]

    @property
    def n_q(self) -> int:
        return self.C_q.shape[0]

    @property
    def n_w(self) -> int:
        return self.G.shape[1]

    def scale(self) -> float:
        """Characteristic magnitude used to make tolerances relative."""
        norms = [np.linalg.norm(self.A, 2), np.linalg.norm(self.E, 2) * np.linalg.norm(self.C_q, 2),
                 np.linalg.norm(self.G, 2)]
        return float(max(1.0, *norms))


# --- parameterizations of the convex multiplier set ------------------------
#
# Every variant is affine: (X, Y) = (X0 + sum_i z_i Xi, Y0 + sum_i z_i Yi).
# Together with X > 0 and Y > 0 this is a finite set of LMIs in z.


def sym_basis(m: int) -> list[np.ndarray]:
    out = []
    for i in range(m):
        for j in range(i + 1):
            B = np.zeros((m, m))
            B[i, j] = B[j, i] = 1.0
            out.append(B)
    return out


def _link(link, n_q: int, n_p: int) -> np.ndarray:
    if link is None:
        if n_q != n_p:
            raise DimensionError("X", "Y", f"coupled variant needs n_q == n_p or an explicit link, got {n_q}, {n_p}")
        return np.eye(n_q)
    W = as_matrix(link, "link")
    if W.shape != (n_q, n_p):
        raise DimensionError("link", "Y", f"link is {W.shape}, expected {(n_q, n_p)}")
    return W


@dataclass(frozen=True, eq=False)
class FixedPair:
    """A single pair (X0, Y0); no free multiplier parameters."""
    X0: np.ndarray
    Y0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "X0", as_matrix(self.X0, "X0"))
        object.__setattr__(self, "Y0", as_matrix(self.Y0, "Y0"))

    def affine(self, n_q, n_p):
        return self.X0, self.Y0, [], []

    def default_params(self, n_q, n_p):
        return np.zeros(0)


@dataclass(frozen=True, eq=False)
class ScalarScaledPair:
    """(X, Y) = (s X_hat, s Y_hat) with a scalar s > 0."""
    X_hat: np.ndarray
    Y_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "X_hat", as_matrix(self.X_hat, "X_hat"))
        object.__setattr__(self, "Y_hat", as_matrix(self.Y_hat, "Y_hat"))

    def affine(self, n_q, n_p):
        return (np.zeros_like(self.X_hat), np.zeros_like(self.Y_hat),
                [self.X_hat], [self.Y_hat])

    def default_params(self, n_q, n_p):
        return np.ones(1)


@dataclass(frozen=True, eq=False)
class DiagonalPD:
    """Y = diag(d), X = W Y W^T with a fixed link W (identity by default)."""
    link: np.ndarray | None = None

    def affine(self, n_q, n_p):
        W = _link(self.link, n_q, n_p)
        Ys = [np.diag(e) for e in np.eye(n_p)]
        return np.zeros((n_q, n_q)), np.zeros((n_p, n_p)), [W @ B @ W.T for B in Ys], Ys

    def default_params(self, n_q, n_p):
        return np.ones(n_p)


@dataclass(frozen=True, eq=False)
class BlockDiagonalPD:
    """Y = blockdiag(S_1, ..., S_k) with full symmetric blocks, X = W Y W^T."""
    block_sizes: tuple[int, ...]
    link: np.ndarray | None = None

    def affine(self, n_q, n_p):
        if sum(self.block_sizes) != n_p or min(self.block_sizes) < 1:
            raise DimensionError("block_sizes", "Y", f"blocks {self.block_sizes} do not partition n_p={n_p}")
        W = _link(self.link, n_q, n_p)
        Ys = []
        start = 0
        for b in self.block_sizes:
            for B in sym_basis(b):
                full = np.zeros((n_p, n_p))
                full[start:start + b, start:start + b] = B
                Ys.append(full)
            start += b
        return np.zeros((n_q, n_q)), np.zeros((n_p, n_p)), [W @ B @ W.T for B in Ys], Ys

    def default_params(self, n_q, n_p):
        out = []
        for b in self.block_sizes:
            out.extend(1.0 if i == j else 0.0 for i in range(b) for j in range(i + 1))
        return np.array(out)


@dataclass(frozen=True, eq=False)
class FreePD:
    """Y any symmetric matrix, X = W Y W^T."""
    link: np.ndarray | None = None

    def affine(self, n_q, n_p):
        W = _link(self.link, n_q, n_p)
        Ys = sym_basis(n_p)
        return np.zeros((n_q, n_q)), np.zeros((n_p, n_p)), [W @ B @ W.T for B in Ys], Ys

    def default_params(self, n_q, n_p):
        return np.array([1.0 if i == j else 0.0 for i in range(n_p) for j in range(i + 1)])


PairSet = Union[FixedPair, ScalarScaledPair, DiagonalPD, BlockDiagonalPD, FreePD]


def pair_from_params(pairs: PairSet, z: np.ndarray, n_q: int, n_p: int) -> tuple[np.ndarray, np.ndarray]:
    X0, Y0, Xs, Ys = pairs.affine(n_q, n_p)
    X = X0 + sum((zi * Xi for zi, Xi in zip(z, Xs)), np.zeros_like(X0))
    Y = Y0 + sum((zi * Yi for zi, Yi in zip(z, Ys)), np.zeros_like(Y0))
    return X, Y


def pair_membership(pairs: PairSet, X, Y, n_q: int, n_p: int, tol: float = 1e-8) -> tuple[bool, float]:
    """Whether (X, Y) lies in the affine set of ``pairs`` and both are PD.

    Returns the flag and the relative least-squares residual of the fit.
    """
    X0, Y0, Xs, Ys = pairs.affine(n_q, n_p)
    target = np.concatenate([(X - X0).ravel(), (Y - Y0).ravel()])
    scale = max(1.0, np.linalg.norm(X), np.linalg.norm(Y))
    if Xs:
        basis = np.column_stack([np.concatenate([Xi.ravel(), Yi.ravel()]) for Xi, Yi in zip(Xs, Ys)])
        z, *_ = np.linalg.lstsq(basis, target, rcond=None)
        resid = np.linalg.norm(basis @ z - target) / scale
    else:
        resid = np.linalg.norm(target) / scale
    pd = np.linalg.eigvalsh(sym(X))[0] > 0 and np.linalg.eigvalsh(sym(Y))[0] > 0
    return bool(resid <= tol and pd), float(resid)


@dataclass(frozen=True, eq=False)
class MultiplierStructure:
    T11: np.ndarray
    T12: np.ndarray
    T21: np.ndarray
    T22: np.ndarray
    pairs: PairSet = field(default=None)

    def __post_init__(self):
        for name in ("T11", "T12", "T21", "T22"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        n_q, n_p = self.T11.shape[0], self.T22.shape[0]
        if self.T11.shape != (n_q, n_q):
            raise DimensionError("T11", "T11", f"T11 must be square, got {self.T11.shape}")
        if self.T22.shape != (n_p, n_p):
            raise DimensionError("T22", "T22", f"T22 must be square, got {self.T22.shape}")
        if self.T12.shape != (n_q, n_p):
            raise DimensionError("T11/T22", "T12", f"T12 is {self.T12.shape}, expected {(n_q, n_p)}")
        if self.T21.shape != (n_p, n_q):
            raise DimensionError("T11/T22", "T21", f"T21 is {self.T21.shape}, expected {(n_p, n_q)}")
        if self.pairs is None:
            raise ValueError("a multiplier structure needs a pair set")

    @property
    def n_q(self) -> int:
        return self.T11.shape[0]

    @property
    def n_p(self) -> int:
        return self.T22.shape[0]

    @property
    def T(self) -> np.ndarray:
        return np.block([[self.T11, self.T12], [self.T21, self.T22]])

    def with_pairs(self, pairs: PairSet) -> "MultiplierStructure":
        return MultiplierStructure(self.T11, self.T12, self.T21, self.T22, pairs)


def norm_bounded(gain: float, n_q: int = 1, n_p: int = 1) -> MultiplierStructure:
    """Structure for ||p|| <= gain * ||q||: T = I, (X, Y) = s (gain^-2 I, I)."""
    if not gain > 0:
        raise ValueError(f"gain must be positive, got {gain}")
    return MultiplierStructure(
        np.eye(n_q), np.zeros((n_q, n_p)), np.zeros((n_p, n_q)), np.eye(n_p),
        ScalarScaledPair(np.eye(n_q) / gain**2, np.eye(n_p)),
    )


def sector_scalar(k: float, m: int = 1) -> MultiplierStructure:
    """Structure for componentwise sectors p_i (k q_i - p_i) >= 0.

    Uses k q p - p^2 = (k q / 2)^2 - (p - k q / 2)^2 and one multiplier per
    channel, X = Y = diag(d).
    """
    if not k > 0:
        raise ValueError(f"sector slope must be positive, got {k}")
    I = np.eye(m)
    return MultiplierStructure(k / 2 * I, np.zeros((m, m)), -k / 2 * I, I, DiagonalPD())


# --- validation and derived quantities ------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def _rank_threshold(s: np.ndarray, rank_tol: float | None) -> float:
    return rank_tol if rank_tol is not None else 1e-9 * max(float(s[0]), np.finfo(float).tiny)


def check_dimensions(model: SystemModel, structure: MultiplierStructure) -> None:
    if structure.n_q != model.n_q:
        raise DimensionError("C_q", "T11", f"C_q has {model.n_q} rows but T11 is {structure.T11.shape}")
    if structure.n_p != model.n_p:
        raise DimensionError("E", "T22", f"E has {model.n_p} columns but T22 is {structure.T22.shape}")


def validate_model(model: SystemModel, structure: MultiplierStructure,
                   rank_tol: float | None = None) -> ValidationReport:
    check_dimensions(model, structure)
    checks = []

    s_T = np.linalg.svd(structure.T, compute_uv=False)
    tol = _rank_threshold(s_T, rank_tol)
    checks.append(Check("T nonsingular", bool(s_T[-1] > tol), float(s_T[-1]),
                        "" if s_T[-1] > tol else "T singular"))

    Gamma = structure.T21 @ model.D + structure.T22
    s_G = np.linalg.svd(Gamma, compute_uv=False)
    tol = _rank_threshold(s_G, rank_tol)
    if s_G[0] == 0.0:
        tol = rank_tol if rank_tol is not None else 0.0
    ok = bool(s_G[-1] > tol)
    checks.append(Check("Gamma nonsingular", ok, float(s_G[-1]), "" if ok else "Gamma singular"))

    n_q, n_p = model.n_q, model.n_p
    X0, Y0, Xs, Ys = structure.pairs.affine(n_q, n_p)
    shapes_ok = X0.shape == (n_q, n_q) and Y0.shape == (n_p, n_p) and all(
        Xi.shape == (n_q, n_q) and Yi.shape == (n_p, n_p) for Xi, Yi in zip(Xs, Ys))
    checks.append(Check("pair dimensions", shapes_ok, 0.0,
                        "" if shapes_ok else "X must be n_q x n_q and Y n_p x n_p"))
    if shapes_ok:
        X, Y = pair_from_params(structure.pairs, structure.pairs.default_params(n_q, n_p), n_q, n_p)
        sym_ok = np.allclose(X, X.T) and np.allclose(Y, Y.T) and all(
            np.allclose(B, B.T) for B in (*Xs, *Ys))
        checks.append(Check("pair symmetric", bool(sym_ok), 0.0))
        m = float(min(np.linalg.eigvalsh(sym(X))[0], np.linalg.eigvalsh(sym(Y))[0]))
        checks.append(Check("pair set has PD member", m > 0, m))
    return ValidationReport(tuple(checks))


@dataclass(frozen=True, eq=False)
class DerivedMaps:
    Gamma: np.ndarray
    Lambda: np.ndarray
    Sigma: np.ndarray
    Gamma_inv: np.ndarray
    T21: np.ndarray


def derived_maps(structure: MultiplierStructure, D, rank_tol: float | None = None) -> DerivedMaps:
    D = as_matrix(D, "D")
    if D.shape != (structure.n_q, structure.n_p):
        raise DimensionError("D", "T", f"D is {D.shape}, expected {(structure.n_q, structure.n_p)}")
    Gamma = structure.T21 @ D + structure.T22
    s = np.linalg.svd(Gamma, compute_uv=False)
    tol = _rank_threshold(s, rank_tol)
    if s[-1] <= tol or s[-1] == 0.0:
        raise SingularityError(f"Gamma = T21 D + T22 is singular (sigma_min={s[-1]:.3g})")
    Gi = inv_checked(Gamma, "Gamma")
    K = structure.T11 @ D + structure.T12
    Lambda = K @ Gi
    Sigma = structure.T11 - K @ Gi @ structure.T21
    return DerivedMaps(Gamma, Lambda, Sigma, Gi, structure.T21)


def multiplier_from_pair(structure: MultiplierStructure, X, Y) -> np.ndarray:
    X, Y = as_matrix(X, "X"), as_matrix(Y, "Y")
    if X.shape != (structure.n_q, structure.n_q) or Y.shape != (structure.n_p, structure.n_p):
        raise DimensionError("X/Y", "T", f"got X {X.shape}, Y {Y.shape}")
    for name, V in (("X", X), ("Y", Y)):
        if np.linalg.eigvalsh(sym(V))[0] <= 0:
            raise ValueError(f"{name} is not positive definite")
    T = structure.T
    mid = np.block([
        [inv_checked(X, "X"), np.zeros((structure.n_q, structure.n_p))],
        [np.zeros((structure.n_p, structure.n_q)), -inv_checked(Y, "Y")],
    ])
    return sym(T.T @ mid @ T)


def qi_residual(M: np.ndarray, q, p) -> float:
    v = np.concatenate([np.atleast_1d(np.asarray(q, dtype=float)).ravel(),
                        np.atleast_1d(np.asarray(p, dtype=float)).ravel()])
    M = np.atleast_2d(M)
    if M.shape != (v.size, v.size):
        raise DimensionError("M", "[q; p]", f"M is {M.shape}, vector has length {v.size}")
    return float(v @ M @ v)


def pd_min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(sym(np.atleast_2d(M)))[0])


@dataclass(frozen=True)
class BuiltinClass:
    """A named uncertainty class: ``norm_bounded`` (gain) or ``sector_scalar`` (slope k)."""
    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("norm_bounded", "sector_scalar"):
            raise ValueError(f"unknown uncertainty class {self.kind!r}")
        if not self.value > 0:
            raise ValueError(f"{self.kind} parameter must be positive, got {self.value}")

    def structure(self, model: SystemModel) -> MultiplierStructure:
        if self.kind == "norm_bounded":
            return norm_bounded(self.value, model.n_q, model.n_p)
        if model.n_q != model.n_p:
            raise DimensionError("C_q", "E", "sector class needs n_q == n_p")
        return sector_scalar(self.value, model.n_p)

    def with_value(self, value: float) -> "BuiltinClass":
        return BuiltinClass(self.kind, value)
