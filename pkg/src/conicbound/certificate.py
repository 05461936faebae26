"""Independent verification of analysis certificates.

Nothing here calls into the solver. The checker re-assembles the LMI from the
raw problem data, and the proof-chain replay rebuilds each intermediate matrix
of the argument (permutation and congruence, Schur complement, regrouping,
T-congruence, final multiplier form) both by transformation and from its
closed-form expression, so a bug in either route shows up as a residual.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag, cholesky, solve_triangular

from .lmi import BlockSymmetricMatrix, assemble_stability_lmi, assemble_ultimate_lmi, congruence, schur_reduce
from .model import (
    Check,
    DimensionError,
    MultiplierStructure,
    SingularityError,
    SystemModel,
    as_matrix,
    check_dimensions,
    derived_maps,
    inv_checked,
    multiplier_from_pair,
    pair_membership,
    qi_residual,
    sym,
)

MATRIX_FIELDS = ("Q", "X", "Y", "R")


@dataclass(frozen=True, eq=False)
class AnalysisCertificate:
    Q: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    R: np.ndarray
    lam: float | None = None            # None for a quadratic-stability certificate
    margins: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in MATRIX_FIELDS:
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        if self.lam is not None:
            object.__setattr__(self, "lam", float(self.lam))

    @property
    def kind(self) -> str:
        return "stability" if self.lam is None else "ultimate"

    @classmethod
    def from_solution(cls, solution: dict, lam: float | None, margins: dict | None = None) -> "AnalysisCertificate":
        return cls(solution["Q"], solution["X"], solution["Y"], solution["R"], lam, dict(margins or {}))

    def replace(self, **kw) -> "AnalysisCertificate":
        d = {"Q": self.Q, "X": self.X, "Y": self.Y, "R": self.R, "lam": self.lam, "margins": self.margins}
        d.update(kw)
        return AnalysisCertificate(**d)

    def to_dict(self) -> dict:
        out = {name: getattr(self, name).tolist() for name in MATRIX_FIELDS}
        out["lambda"] = self.lam
        if self.margins:
            out["margins"] = {k: float(v) for k, v in self.margins.items()}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisCertificate":
        missing = [k for k in (*MATRIX_FIELDS, "lambda") if k not in d]
        if missing:
            raise KeyError(f"certificate is missing fields {missing}")
        return cls(d["Q"], d["X"], d["Y"], d["R"], d["lambda"], dict(d.get("margins", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AnalysisCertificate":
        return cls.from_dict(json.loads(text))

    def check_dimensions(self, model: SystemModel) -> None:
        expected = {"Q": model.n, "R": model.n, "X": model.n_q, "Y": model.n_p}
        for name, m in expected.items():
            if getattr(self, name).shape != (m, m):
                raise DimensionError(name, "model", f"certificate {name} is {getattr(self, name).shape}, expected {(m, m)}")


def _rel(value: float, M: np.ndarray) -> float:
    return value / max(np.linalg.norm(M, 2), np.finfo(float).tiny)


def assemble_for(model: SystemModel, structure: MultiplierStructure, cert: AnalysisCertificate) -> BlockSymmetricMatrix:
    maps = derived_maps(structure, model.D)
    if cert.lam is None:
        return assemble_stability_lmi(model, maps, cert.Q, cert.X, cert.Y, cert.R)
    return assemble_ultimate_lmi(model, maps, cert.Q, cert.X, cert.Y, cert.lam, cert.R)


@dataclass(frozen=True)
class CertificateReport:
    passed: bool
    max_eig: float
    relative_max_eig: float
    checks: tuple

    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def check_certificate(model: SystemModel, structure: MultiplierStructure, cert: AnalysisCertificate,
                      eig_tol: float = 1e-7) -> CertificateReport:
    """Pass iff the re-assembled LMI has max eigenvalue <= eig_tol * ||LMI|| and all side conditions hold."""
    checks = []
    try:
        check_dimensions(model, structure)
        cert.check_dimensions(model)
        if cert.lam is not None and not cert.lam > 0:
            raise ValueError(f"lambda must be positive, got {cert.lam}")
        L = assemble_for(model, structure, cert).matrix
    except (ValueError, np.linalg.LinAlgError) as exc:
        return CertificateReport(False, np.inf, np.inf, (Check("assembly", False, np.inf, str(exc)),))

    top = float(np.linalg.eigvalsh(L)[-1])
    rel = _rel(top, L)
    checks.append(Check("LMI <= 0", rel <= eig_tol, rel, f"max eig {top:.6g}"))
    for name in ("Q", "X", "Y"):
        m = float(np.linalg.eigvalsh(sym(getattr(cert, name)))[0])
        asym = float(np.abs(getattr(cert, name) - getattr(cert, name).T).max())
        checks.append(Check(f"{name} > 0", m > 0 and asym <= 1e-12 * max(1.0, np.abs(getattr(cert, name)).max()), m))
    mR = float(np.linalg.eigvalsh(sym(cert.R))[0])
    checks.append(Check("R >= 0", mR >= -eig_tol * max(1.0, np.linalg.norm(cert.R, 2)), mR))
    ok, resid = pair_membership(structure.pairs, cert.X, cert.Y, model.n_q, model.n_p)
    checks.append(Check("(X, Y) in pair set", ok, resid))
    passed = all(c.passed for c in checks)
    return CertificateReport(passed, top, rel, tuple(checks))


# --- proof-chain replay ----------------------------------------------------


class ProofChainError(ValueError):
    def __init__(self, step: str, detail: str):
        self.step = step
        super().__init__(f"{step}: {detail}")


@dataclass(frozen=True)
class StepResult:
    name: str
    max_eig: float
    relative_max_eig: float
    residual: float          # largest relative residual of the identities checked at this step
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ProofChainReport:
    steps: tuple

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.steps)

    def __getitem__(self, name: str) -> StepResult:
        for s in self.steps:
            if s.name == name:
                return s
        raise KeyError(name)


def _inv(M, step, what):
    try:
        return inv_checked(M, what)
    except SingularityError as exc:
        raise ProofChainError(step, str(exc)) from None


def _resid(A, B) -> float:
    return float(np.abs(A - B).max() / max(1.0, np.abs(A).max(), np.abs(B).max()))


def replay_proof_chain(model: SystemModel, structure: MultiplierStructure, cert: AnalysisCertificate,
                       tol: float = 1e-6, identity_tol: float = 1e-8) -> ProofChainReport:
    """Rebuild every intermediate inequality of the ultimate-boundedness argument.

    Steps: S1 permutation + congruence by blockdiag(Q^-1, Y^-1, I, I);
    S2 Schur complement on the -X block; S3 regrouping into the
    blockdiag(X^-1, -Y^-1) form; S4 congruence with [[I,0,0],[T21 C_q, Gamma, 0],[0,0,I]];
    S5 the multiplier inequality with M = T^T blockdiag(X^-1, -Y^-1) T.
    Stability certificates follow the same chain without the disturbance row.
    """
    check_dimensions(model, structure)
    cert.check_dimensions(model)
    try:
        maps = derived_maps(structure, model.D)
    except SingularityError as exc:
        raise ProofChainError("S4", str(exc)) from None
    A, E, G, C, D = model.A, model.E, model.G, model.C_q, model.D
    n, n_p, n_q, n_w = model.n, model.n_p, model.n_q, model.n_w
    has_w = cert.lam is not None
    lam = cert.lam if has_w else 0.0
    Qi = _inv(cert.Q, "S1", "Q")
    Yi = _inv(cert.Y, "S1", "Y")
    Xi = _inv(cert.X, "S2", "X")
    Gi, Lam, Sig = maps.Gamma_inv, maps.Lambda, maps.Sigma
    Acl = A - E @ Gi @ structure.T21 @ C
    steps = []

    def record(name, M, residual, detail=""):
        top = float(np.linalg.eigvalsh(M)[-1])
        rel = _rel(top, M)
        ok = rel <= tol and residual <= identity_tol
        steps.append(StepResult(name, top, rel, residual, bool(ok), detail))

    # S1: reorder [x, p, q, w] -> [x, p, w, q], then scale by blockdiag(Q^-1, Y^-1, I, I)
    L = assemble_for(model, structure, cert)
    if has_w:
        dims1 = (n, n_p, n_w, n_q)
        order = np.concatenate([L.indices([0, 1, 3]), L.indices([2])])
        Pi = np.eye(L.matrix.shape[0])[:, order]
        Dg = block_diag(Qi, Yi, np.eye(n_w), np.eye(n_q))
    else:
        dims1 = (n, n_p, n_q)
        Pi = np.eye(L.matrix.shape[0])
        Dg = block_diag(Qi, Yi, np.eye(n_q))
    M1 = congruence(L, Pi @ Dg)
    top_left = Qi @ Acl + Acl.T @ Qi + lam * Qi + Qi @ cert.R @ Qi
    blocks = {(0, 0): top_left, (1, 0): (Qi @ E @ Gi).T, (1, 1): -Yi}
    if has_w:
        blocks.update({(2, 0): G.T @ Qi, (2, 2): -lam * np.eye(n_w),
                       (3, 0): Sig @ C, (3, 1): Lam, (3, 3): -cert.X})
    else:
        blocks.update({(2, 0): Sig @ C, (2, 1): Lam, (2, 2): -cert.X})
    M1_closed = BlockSymmetricMatrix.from_lower(blocks, dims1).matrix
    record("S1", M1, _resid(M1, M1_closed), "permutation + congruence")

    # S2: Schur complement with respect to the -X block (last)
    B1 = BlockSymmetricMatrix(M1, dims1)
    try:
        M2 = schur_reduce(B1, len(dims1) - 1).matrix
    except ValueError as exc:
        raise ProofChainError("S2", str(exc)) from None
    k = M2.shape[0]
    H = np.zeros((n_q, k))
    H[:, :n] = Sig @ C
    H[:, n:n + n_p] = Lam
    M2_closed = M1[:k, :k] + H.T @ Xi @ H
    record("S2", M2, _resid(M2, M2_closed), "Schur complement on -X")

    # S3: base part with zero (p, p) block plus H_full^T blockdiag(X^-1, -Y^-1) H_full
    H_full = np.zeros((n_q + n_p, k))
    H_full[:n_q] = H
    H_full[n_q:, n:n + n_p] = np.eye(n_p)
    mid = block_diag(Xi, -Yi)
    base3 = M1[:k, :k].copy()
    base3[n:n + n_p, n:n + n_p] = 0.0
    M3 = sym(base3 + H_full.T @ mid @ H_full)
    left = np.block([[Sig, Lam], [np.zeros((n_p, n_q)), np.eye(n_p)]])
    right = np.zeros((n_q + n_p, k))
    right[:n_q, :n] = C
    right[n_q:, n:n + n_p] = np.eye(n_p)
    r3 = max(_resid(M3, M2), _resid(H_full, left @ right))
    record("S3", M3, r3, "regrouping into blockdiag(X^-1, -Y^-1)")

    # S4: congruence with U = [[I, 0, 0], [T21 C, Gamma, 0], [0, 0, I]]
    U = np.eye(k)
    U[n:n + n_p, :n] = structure.T21 @ C
    U[n:n + n_p, n:n + n_p] = maps.Gamma
    try:
        M4 = congruence(M3, U)
    except SingularityError as exc:
        raise ProofChainError("S4", str(exc)) from None
    N = np.zeros((n_q + n_p, k))
    N[:n_q, :n] = C
    N[:n_q, n:n + n_p] = D
    N[n_q:, n:n + n_p] = np.eye(n_p)
    r4 = _resid(H_full @ U, structure.T @ N)
    record("S4", M4, r4, "T-congruence; factorization residual checked")

    # S5: closed form of the multiplier inequality
    try:
        Mmult = multiplier_from_pair(structure, cert.X, cert.Y)
    except (ValueError, SingularityError) as exc:
        raise ProofChainError("S5", str(exc)) from None
    blocks5 = {(0, 0): Qi @ A + A.T @ Qi + lam * Qi + Qi @ cert.R @ Qi, (1, 0): (Qi @ E).T}
    if has_w:
        blocks5.update({(2, 0): G.T @ Qi, (2, 2): -lam * np.eye(n_w)})
        base5 = BlockSymmetricMatrix.from_lower(blocks5, (n, n_p, n_w)).matrix
    else:
        base5 = BlockSymmetricMatrix.from_lower(blocks5, (n, n_p)).matrix
    M5 = sym(base5 + N.T @ Mmult @ N)
    record("S5", M5, _resid(M5, M4), "multiplier inequality")
    return ProofChainReport(tuple(steps))


def multiplier_inequality_matrix(model: SystemModel, structure: MultiplierStructure,
                                 cert: AnalysisCertificate) -> np.ndarray:
    """The quadratic form in (x, p[, w]) whose nonpositivity precedes the S-procedure step."""
    Qi = inv_checked(cert.Q, "Q")
    lam = cert.lam or 0.0
    M = multiplier_from_pair(structure, cert.X, cert.Y)
    n, n_p, n_q, n_w = model.n, model.n_p, model.n_q, model.n_w
    has_w = cert.lam is not None
    k = n + n_p + (n_w if has_w else 0)
    base = np.zeros((k, k))
    base[:n, :n] = Qi @ model.A + model.A.T @ Qi + lam * Qi + Qi @ cert.R @ Qi
    base[:n, n:n + n_p] = Qi @ model.E
    base[n:n + n_p, :n] = model.E.T @ Qi
    if has_w:
        base[:n, n + n_p:] = Qi @ model.G
        base[n + n_p:, :n] = model.G.T @ Qi
        base[n + n_p:, n + n_p:] = -lam * np.eye(n_w)
    N = np.zeros((n_q + n_p, k))
    N[:n_q, :n] = model.C_q
    N[:n_q, n:n + n_p] = model.D
    N[n_q:, n:n + n_p] = np.eye(n_p)
    return sym(base + N.T @ M @ N)


def sprocedure_form(model: SystemModel, structure: MultiplierStructure, cert: AnalysisCertificate,
                    x, p, w=None) -> float:
    """2x'P(Ax+Ep+Gw) + x'PRPx + lam (x'Px - |w|^2) + [q;p]'M[q;p] with P = Q^-1, q = C_q x + D p."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    w = np.zeros(model.n_w) if w is None else np.atleast_1d(np.asarray(w, dtype=float))
    P = inv_checked(cert.Q, "Q")
    lam = cert.lam or 0.0
    q = model.C_q @ x + model.D @ p
    M = multiplier_from_pair(structure, cert.X, cert.Y)
    Px = P @ x
    return float(2 * Px @ (model.A @ x + model.E @ p + model.G @ w) + Px @ cert.R @ Px
                 + lam * (x @ Px - w @ w) + qi_residual(M, q, p))


@dataclass(frozen=True)
class SpotcheckReport:
    max_form: float               # max of the form over samples, normalized by |(x, p, w)|^2
    matrix_max_eig: float
    admissible_samples: int
    max_decay_violation: float    # max of Vdot + x'PRPx over admissible samples with V >= |w|^2, normalized
    passed: bool


def sprocedure_spotcheck(model: SystemModel, structure: MultiplierStructure, cert: AnalysisCertificate,
                         sample_count: int = 10_000, rng_seed: int = 0, tol: float = 1e-8) -> SpotcheckReport:
    rng = np.random.default_rng(rng_seed)
    n, n_p, n_w = model.n, model.n_p, model.n_w
    has_w = cert.lam is not None
    S = multiplier_inequality_matrix(model, structure, cert)
    scale = max(np.linalg.norm(S, 2), np.finfo(float).tiny)
    top = float(np.linalg.eigvalsh(S)[-1])

    xs = rng.standard_normal((sample_count, n))
    ps = rng.standard_normal((sample_count, n_p)) * np.exp(rng.uniform(-4, 2, (sample_count, 1)))
    ws = rng.standard_normal((sample_count, n_w)) if has_w else np.zeros((sample_count, n_w))
    P = inv_checked(cert.Q, "Q")
    M = multiplier_from_pair(structure, cert.X, cert.Y)
    lam = cert.lam or 0.0

    Px = xs @ P
    qs = xs @ model.C_q.T + ps @ model.D.T
    qp = np.hstack([qs, ps])
    qi = np.einsum("ij,jk,ik->i", qp, M, qp)
    V = np.einsum("ij,ij->i", Px, xs)
    ww = np.einsum("ij,ij->i", ws, ws)
    vdot = 2 * np.einsum("ij,ij->i", Px, xs @ model.A.T + ps @ model.E.T + ws @ model.G.T)
    decay = np.einsum("ij,jk,ik->i", Px, cert.R, Px)
    form = vdot + decay + lam * (V - ww) + qi
    norm2 = np.einsum("ij,ij->i", xs, xs) + np.einsum("ij,ij->i", ps, ps) + ww
    max_form = float(np.max(form / norm2)) / scale if sample_count else 0.0

    adm = (qi >= 0) & (V >= ww)
    if adm.any():
        viol = float(np.max((vdot[adm] + decay[adm]) / norm2[adm])) / scale
    else:
        viol = -np.inf
    passed = top / scale <= tol and max_form <= tol and viol <= tol
    return SpotcheckReport(max_form, top, int(adm.sum()), viol, bool(passed))


# --- ultimate bound ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UltimateBound:
    P: np.ndarray
    w_bound: float
    ellipsoid_level: float
    radius: float
    decay_rate: float

    def to_dict(self) -> dict:
        return {"P": self.P.tolist(), "w_bound": self.w_bound, "ellipsoid_level": self.ellipsoid_level,
                "radius": self.radius, "decay_rate": self.decay_rate}


def decay_rate(Q, R) -> float:
    """Largest a with R >= a Q, via Q = L L^T and eig(L^-1 R L^-T)."""
    L = cholesky(sym(Q), lower=True)
    Li_R = solve_triangular(L, sym(R), lower=True)
    K = solve_triangular(L, Li_R.T, lower=True)
    return float(np.linalg.eigvalsh(sym(K))[0])


def ultimate_bound(cert: AnalysisCertificate, w_bound: float) -> UltimateBound:
    if not w_bound >= 0:
        raise ValueError(f"w_bound must be nonnegative, got {w_bound}")
    P = sym(inv_checked(cert.Q, "Q"))
    if np.linalg.eigvalsh(sym(cert.Q))[0] <= 0:
        raise SingularityError("Q is not positive definite")
    qmax = float(np.linalg.eigvalsh(sym(cert.Q))[-1])
    return UltimateBound(P, float(w_bound), float(w_bound) ** 2, float(np.sqrt(qmax) * w_bound),
                         decay_rate(cert.Q, cert.R))
