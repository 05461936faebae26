"""Assembly of the analysis LMIs and the block-matrix tools used to replay them.

Block ordering follows ``[x, p, q, w]`` for the ultimate-boundedness LMI and
``[x, p, q]`` for the stability LMI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SolverOptions
from .model import (
    DerivedMaps,
    DimensionError,
    FixedPair,
    MultiplierStructure,
    SingularityError,
    SystemModel,
    as_matrix,
    check_dimensions,
    derived_maps,
    pair_from_params,
    sym,
    sym_basis,
)


@dataclass(frozen=True, eq=False)
class BlockSymmetricMatrix:
    matrix: np.ndarray
    row_dims: tuple[int, ...]

    @classmethod
    def from_lower(cls, blocks: dict, row_dims) -> "BlockSymmetricMatrix":
        """Assemble from lower-triangular blocks ``{(i, j): B}`` with ``i >= j``; missing blocks are zero."""
        row_dims = tuple(int(d) for d in row_dims)
        offs = np.concatenate([[0], np.cumsum(row_dims)])
        M = np.zeros((offs[-1], offs[-1]))
        for (i, j), B in blocks.items():
            if i < j:
                raise ValueError("only lower-triangular blocks may be given")
            B = np.atleast_2d(np.asarray(B, dtype=float))
            if B.shape != (row_dims[i], row_dims[j]):
                raise DimensionError(f"block ({i},{j})", "row_dims",
                                     f"block is {B.shape}, expected {(row_dims[i], row_dims[j])}")
            if i == j:
                B = sym(B)
            M[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = B
            if i != j:
                M[offs[j]:offs[j + 1], offs[i]:offs[i + 1]] = B.T
        return cls(M, row_dims)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.row_dims)]).astype(int)

    def block(self, i: int, j: int) -> np.ndarray:
        o = self.offsets
        return self.matrix[o[i]:o[i + 1], o[j]:o[j + 1]]

    def indices(self, blocks) -> np.ndarray:
        o = self.offsets
        return np.concatenate([np.arange(o[b], o[b + 1]) for b in blocks]).astype(int)

    def max_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[-1])


def _closed_loop(model: SystemModel, maps: DerivedMaps) -> np.ndarray:
    """A - E Gamma^-1 T21 C_q."""
    return model.A - model.E @ maps.Gamma_inv @ maps.T21 @ model.C_q


def _check_vars(model: SystemModel, Q, X, Y, R):
    n, n_p, n_q = model.n, model.n_p, model.n_q
    Q, X, Y, R = (as_matrix(V, name) for V, name in ((Q, "Q"), (X, "X"), (Y, "Y"), (R, "R")))
    for V, name, m in ((Q, "Q", n), (R, "R", n), (X, "X", n_q), (Y, "Y", n_p)):
        if V.shape != (m, m):
            raise DimensionError(name, "model", f"{name} is {V.shape}, expected {(m, m)}")
    return Q, X, Y, R


def assemble_ultimate_lmi(model: SystemModel, maps: DerivedMaps, Q, X, Y, lam: float, R) -> BlockSymmetricMatrix:
    """The 4x4 block matrix whose negative semidefiniteness certifies ultimate boundedness."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    Q, X, Y, R = _check_vars(model, Q, X, Y, R)
    Acl = _closed_loop(model, maps)
    blocks = {
        (0, 0): Acl @ Q + Q @ Acl.T + lam * Q + R,
        (1, 0): Y @ maps.Gamma_inv.T @ model.E.T,
        (1, 1): -Y,
        (2, 0): maps.Sigma @ model.C_q @ Q,
        (2, 1): maps.Lambda @ Y,
        (2, 2): -X,
        (3, 0): model.G.T,
        (3, 3): -lam * np.eye(model.n_w),
    }
    return BlockSymmetricMatrix.from_lower(blocks, (model.n, model.n_p, model.n_q, model.n_w))


def assemble_stability_lmi(model: SystemModel, maps: DerivedMaps, Q, X, Y, R) -> BlockSymmetricMatrix:
    """The 3x3 block matrix of the quadratic-stability test (no disturbance, no lambda)."""
    Q, X, Y, R = _check_vars(model, Q, X, Y, R)
    Acl = _closed_loop(model, maps)
    blocks = {
        (0, 0): Acl @ Q + Q @ Acl.T + R,
        (1, 0): Y @ maps.Gamma_inv.T @ model.E.T,
        (1, 1): -Y,
        (2, 0): maps.Sigma @ model.C_q @ Q,
        (2, 1): maps.Lambda @ Y,
        (2, 2): -X,
    }
    return BlockSymmetricMatrix.from_lower(blocks, (model.n, model.n_p, model.n_q))


def congruence(M, U, max_cond: float = 1e12) -> np.ndarray:
    """U^T M U for nonsingular U, symmetrized."""
    M = M.matrix if isinstance(M, BlockSymmetricMatrix) else np.atleast_2d(np.asarray(M, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[0] != M.shape[0] or U.shape[0] != U.shape[1]:
        raise DimensionError("U", "M", f"U is {U.shape}, M is {M.shape}")
    s = np.linalg.svd(U, compute_uv=False)
    if s[-1] == 0.0 or s[0] / s[-1] > max_cond:
        raise SingularityError("congruence matrix U is singular")
    return sym(U.T @ M @ U)


def schur_reduce(M: BlockSymmetricMatrix, pivot_block: int, rank_tol: float | None = None) -> BlockSymmetricMatrix:
    """Schur complement of ``M`` with respect to diagonal block ``pivot_block`` (0-based).

    The pivot must be negative definite; then ``M <= 0`` iff the returned
    complement is ``<= 0``.
    """
    k = len(M.row_dims)
    if not 0 <= pivot_block < k:
        raise IndexError(f"pivot block {pivot_block} out of range for {k} blocks")
    P = M.block(pivot_block, pivot_block)
    tol = rank_tol if rank_tol is not None else 1e-12 * max(1.0, np.abs(M.matrix).max())
    top = np.linalg.eigvalsh(P)[-1]
    if not top < -tol:
        raise ValueError(f"pivot block {pivot_block} is not negative definite (max eig {top:.3g})")
    keep = [b for b in range(k) if b != pivot_block]
    ki = M.indices(keep)
    pi = M.indices([pivot_block])
    Mkk = M.matrix[np.ix_(ki, ki)]
    Mkp = M.matrix[np.ix_(ki, pi)]
    S = Mkk - Mkp @ np.linalg.solve(P, Mkp.T)
    return BlockSymmetricMatrix(sym(S), tuple(M.row_dims[b] for b in keep))


# --- affine canonical form -------------------------------------------------


@dataclass(frozen=True, eq=False)
class LmiConstraint:
    """``F0 + sum_i z_i F[i]`` is required ``<= -floor I`` (nsd) or ``>= floor I`` (psd)."""
    name: str
    F0: np.ndarray
    F: np.ndarray
    sense: str
    floor: float
    strict: bool = True

    def value(self, z: np.ndarray) -> np.ndarray:
        return self.F0 + np.tensordot(z, self.F, axes=1)

    def slack(self, z: np.ndarray) -> float:
        """Smallest eigenvalue of the 'should be >= 0' form; >= 0 means satisfied."""
        V = self.value(z)
        if self.sense == "nsd":
            return float(-np.linalg.eigvalsh(V)[-1] - self.floor)
        return float(np.linalg.eigvalsh(V)[0] - self.floor)


@dataclass(frozen=True, eq=False)
class AffineLmiProblem:
    model: SystemModel
    structure: MultiplierStructure
    maps: DerivedMaps
    lam: float | None
    options: SolverOptions
    slices: dict
    n_vars: int
    constraints: tuple
    objective: np.ndarray
    R_fixed: np.ndarray | None

    @property
    def kind(self) -> str:
        return "stability" if self.lam is None else "ultimate"

    @property
    def main(self) -> LmiConstraint:
        return self.constraints[0]

    def unpack(self, z) -> dict:
        z = np.asarray(z, dtype=float)
        n, n_q, n_p = self.model.n, self.model.n_q, self.model.n_p
        Q = _sym_from_vec(z[self.slices["Q"]], n)
        R = self.R_fixed if self.R_fixed is not None else _sym_from_vec(z[self.slices["R"]], n)
        if self.options.decay_floor:
            R = R + self.options.decay_floor * Q
        params = z[self.slices["N"]]
        X, Y = pair_from_params(self.structure.pairs, params, n_q, n_p)
        return {"Q": Q, "R": R, "X": X, "Y": Y, "params": params}

    def assemble(self, z) -> BlockSymmetricMatrix:
        """Main LMI at ``z`` through the direct (non-affine) assembly path."""
        v = self.unpack(z)
        if self.lam is None:
            return assemble_stability_lmi(self.model, self.maps, v["Q"], v["X"], v["Y"], v["R"])
        return assemble_ultimate_lmi(self.model, self.maps, v["Q"], v["X"], v["Y"], self.lam, v["R"])

    def variable_names(self) -> list[str]:
        names = []
        for key, sl in self.slices.items():
            names.extend(f"{key}[{i}]" for i in range(sl.stop - sl.start))
        return names


def _sym_from_vec(v, n: int) -> np.ndarray:
    S = np.zeros((n, n))
    k = 0
    for i in range(n):
        for j in range(i + 1):
            S[i, j] = S[j, i] = v[k]
            k += 1
    return S


def sym_to_vec(S) -> np.ndarray:
    S = np.atleast_2d(S)
    n = S.shape[0]
    return np.array([S[i, j] for i in range(n) for j in range(i + 1)])


def resolve_options(model: SystemModel, options: SolverOptions) -> SolverOptions:
    """Fill scale-dependent defaults."""
    scale = model.scale()
    eps = options.eps_margin if options.eps_margin is not None else 1e-8 * scale
    R_floor = options.R_floor if options.R_floor is not None else 1e-6 * max(1.0, np.linalg.norm(model.A, 2)) * scale
    pd_floor = options.pd_floor if options.pd_floor is not None else 1e-6 * scale
    fix_R = options.fix_R if options.fix_R is not None else options.objective != "max_trace_R"
    if fix_R and options.objective == "max_trace_R":
        raise ValueError("max_trace_R needs R as a decision variable")
    return options.replace(eps_margin=eps, R_floor=R_floor, pd_floor=pd_floor, fix_R=fix_R)


def build_affine_problem(model: SystemModel, structure: MultiplierStructure, lam: float | None,
                         options: SolverOptions | None = None) -> AffineLmiProblem:
    """Canonical affine form of the ultimate (``lam`` given) or stability (``lam is None``) LMI.

    The main constraint is decomposed by evaluating the direct assembly at the
    origin and at each unit vector, which is exact because the assembly is
    affine in (Q, R, X, Y) for fixed lambda.
    """
    check_dimensions(model, structure)
    options = resolve_options(model, options or SolverOptions())
    if lam is not None and not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    maps = derived_maps(structure, model.D)
    n, n_q, n_p = model.n, model.n_q, model.n_p
    try:
        X0, Y0, Xs, Ys = structure.pairs.affine(n_q, n_p)
    except AttributeError:
        raise TypeError(f"unsupported multiplier set variant {type(structure.pairs).__name__}") from None

    nQ = n * (n + 1) // 2
    nR = 0 if options.fix_R else nQ
    nN = len(Xs)
    slices = {"Q": slice(0, nQ), "R": slice(nQ, nQ + nR), "N": slice(nQ + nR, nQ + nR + nN)}
    k = nQ + nR + nN
    R_fixed = options.R_floor * np.eye(n) if options.fix_R else None

    probe = AffineLmiProblem(model, structure, maps, lam, options, slices, k, (), np.zeros(k), R_fixed)
    F0 = probe.assemble(np.zeros(k)).matrix
    F = np.array([probe.assemble(e).matrix - F0 for e in np.eye(k)]).reshape(k, *F0.shape)
    constraints = [LmiConstraint("main", F0, F, "nsd", options.eps_margin)]

    def var_block(basis, offset, size):
        out = np.zeros((k, size, size))
        for i, B in enumerate(basis):
            out[offset + i] = B
        return out

    QB = var_block(sym_basis(n), 0, n)
    bound = options.var_bound
    constraints.append(LmiConstraint("Q>0", np.zeros((n, n)), QB, "psd", options.pd_floor))
    constraints.append(LmiConstraint("Q<=bound", bound * np.eye(n), -QB, "psd", 0.0, strict=False))
    if not options.fix_R:
        RB = var_block(sym_basis(n), nQ, n)
        constraints.append(LmiConstraint("R>=floor", np.zeros((n, n)), RB, "psd", options.R_floor))
        constraints.append(LmiConstraint("R<=bound", bound * np.eye(n), -RB, "psd", 0.0, strict=False))
    if nN:
        XB = np.zeros((k, n_q, n_q))
        YB = np.zeros((k, n_p, n_p))
        for i, (Xi, Yi) in enumerate(zip(Xs, Ys)):
            XB[nQ + nR + i] = Xi
            YB[nQ + nR + i] = Yi
        constraints.append(LmiConstraint("X>0", X0, XB, "psd", options.pd_floor))
        constraints.append(LmiConstraint("Y>0", Y0, YB, "psd", options.pd_floor))
        constraints.append(LmiConstraint("X<=bound", bound * np.eye(n_q) - X0, -XB, "psd", 0.0, strict=False))
        constraints.append(LmiConstraint("Y<=bound", bound * np.eye(n_p) - Y0, -YB, "psd", 0.0, strict=False))
    elif not isinstance(structure.pairs, FixedPair):
        raise TypeError(f"multiplier set {type(structure.pairs).__name__} has no parameters")

    c = np.zeros(k)
    if options.objective == "min_trace_Q":
        c[slices["Q"]] = sym_to_vec(np.eye(n))
    elif options.objective == "max_trace_R":
        c[slices["R"]] = -sym_to_vec(np.eye(n))
    return AffineLmiProblem(model, structure, maps, lam, options, slices, k, tuple(constraints), c, R_fixed)
