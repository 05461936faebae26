"""Problem files: JSON with the system matrices, an uncertainty description,
the disturbance bound and optional solver and simulation settings.

Matrices are row-major nested lists. Omitted ``E`` and ``G`` become a single
zero column, omitted ``D`` and ``C_q`` become zeros of the implied shape.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .config import LambdaGrid, SimulationConfig, SolverOptions
from .model import (
    BlockDiagonalPD,
    BuiltinClass,
    DiagonalPD,
    FixedPair,
    FreePD,
    MultiplierStructure,
    ScalarScaledPair,
    SystemModel,
)


class ProblemError(ValueError):
    """Malformed or inconsistent problem file; ``field`` is a dotted path into the document."""

    def __init__(self, field: str, detail: str, byte_offset: int | None = None):
        self.field, self.detail, self.byte_offset = field, detail, byte_offset
        where = f"byte {byte_offset}" if byte_offset is not None else field
        super().__init__(f"{where}: {detail}")


@dataclass(frozen=True, eq=False)
class Problem:
    model: SystemModel
    structure: MultiplierStructure
    uclass: BuiltinClass | None          # set for built-in classes; needed for simulation
    disturbance_bound: float
    solver: SolverOptions
    lambda_grid: LambdaGrid
    simulation: SimulationConfig
    digest: str                          # sha256 of the file bytes
    raw: dict

    def with_gain(self, value: float) -> "Problem":
        if self.uclass is None:
            raise ProblemError("uncertainty", "sweeps need a built-in uncertainty class")
        uc = self.uclass.with_value(value)
        return Problem(self.model, uc.structure(self.model), uc, self.disturbance_bound, self.solver,
                       self.lambda_grid, self.simulation, self.digest, self.raw)


def decode_json(data: bytes):
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProblemError("", f"not UTF-8: {exc.reason}", exc.start) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise ProblemError("", f"malformed JSON ({exc.msg}) at line {exc.lineno} column {exc.colno}",
                           offset) from None


def _matrix(doc: dict, key: str, path: str, default=None) -> np.ndarray:
    if key not in doc or doc[key] is None:
        if default is None:
            raise ProblemError(f"{path}.{key}", "required matrix is missing")
        return default
    v = doc[key]
    try:
        a = np.array(v, dtype=float)
    except (ValueError, TypeError):
        raise ProblemError(f"{path}.{key}", "not a rectangular numeric array") from None
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ProblemError(f"{path}.{key}", f"expected a matrix, got {a.ndim}-d data")
    if not np.all(np.isfinite(a)):
        raise ProblemError(f"{path}.{key}", "contains NaN or infinity")
    return a


def _number(doc: dict, key: str, path: str, default=None, positive=False) -> float:
    v = doc.get(key, default)
    if v is None or isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProblemError(f"{path}.{key}", "expected a number" if key in doc else "required number is missing")
    if positive and not v > 0:
        raise ProblemError(f"{path}.{key}", f"must be positive, got {v}")
    return float(v)


def _section(doc: dict, key: str, path: str, required=True) -> dict:
    if key not in doc:
        if required:
            raise ProblemError(f"{path}{key}", "required section is missing")
        return {}
    v = doc[key]
    if not isinstance(v, dict):
        raise ProblemError(f"{path}{key}", "expected an object")
    return v


def parse_system(doc: dict) -> SystemModel:
    sysd = _section(doc, "system", "")
    A = _matrix(sysd, "A", "system")
    n = A.shape[0]
    E = _matrix(sysd, "E", "system", np.zeros((n, 1)))
    G = _matrix(sysd, "G", "system", np.zeros((n, 1)))
    ckey = "C" if "C" in sysd and "C_q" not in sysd else "C_q"
    C = _matrix(sysd, ckey, "system", np.zeros((1, n)))
    D = _matrix(sysd, "D", "system", np.zeros((C.shape[0], E.shape[1])))
    try:
        return SystemModel(A, E, G, C, D)
    except ValueError as exc:
        raise ProblemError("system", str(exc)) from None


def _variant(v: dict, path: str):
    kind = v.get("type")
    link = _matrix(v, "link", path) if "link" in v else None
    if kind == "fixed":
        return FixedPair(_matrix(v, "X0", path), _matrix(v, "Y0", path))
    if kind == "scalar_scaled":
        return ScalarScaledPair(_matrix(v, "X_hat", path), _matrix(v, "Y_hat", path))
    if kind == "diagonal":
        return DiagonalPD(link)
    if kind == "block_diagonal":
        sizes = v.get("block_sizes")
        if not isinstance(sizes, list) or not all(isinstance(s, int) and s > 0 for s in sizes):
            raise ProblemError(f"{path}.block_sizes", "expected a list of positive integers")
        return BlockDiagonalPD(tuple(sizes), link)
    if kind == "free":
        return FreePD(link)
    raise ProblemError(f"{path}.type", f"unknown variant {kind!r}; use fixed, scalar_scaled, diagonal, "
                                       "block_diagonal or free")


def parse_uncertainty(doc: dict, model: SystemModel) -> tuple[MultiplierStructure, BuiltinClass | None]:
    u = _section(doc, "uncertainty", "")
    kind = u.get("type")
    try:
        if kind == "norm_bounded":
            uc = BuiltinClass(kind, _number(u, "gain", "uncertainty", positive=True))
            return uc.structure(model), uc
        if kind == "sector_scalar":
            uc = BuiltinClass(kind, _number(u, "k", "uncertainty", positive=True))
            return uc.structure(model), uc
        if kind in ("explicit", None) and "T11" in u:
            blocks = [_matrix(u, k, "uncertainty") for k in ("T11", "T12", "T21", "T22")]
            variant = _section(u, "variant", "uncertainty.")
            return MultiplierStructure(*blocks, _variant(variant, "uncertainty.variant")), None
    except ProblemError:
        raise
    except ValueError as exc:
        raise ProblemError("uncertainty", str(exc)) from None
    raise ProblemError("uncertainty.type", f"unknown uncertainty {kind!r}; use norm_bounded, sector_scalar "
                                           "or explicit T blocks with a variant")


def _dataclass_from(cls, doc: dict, path: str, tuples=()):
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ProblemError(f"{path}.{sorted(unknown)[0]}", f"unknown setting; expected one of {sorted(names)}")
    kw = {k: (tuple(v) if k in tuples and isinstance(v, list) else v) for k, v in doc.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ProblemError(path, str(exc)) from None


def parse_problem(data: bytes) -> Problem:
    doc = decode_json(data)
    if not isinstance(doc, dict):
        raise ProblemError("", "top level must be a JSON object")
    model = parse_system(doc)
    structure, uclass = parse_uncertainty(doc, model)
    if structure.n_q != model.n_q or structure.n_p != model.n_p:
        raise ProblemError("uncertainty", f"T is sized for (n_q, n_p) = {(structure.n_q, structure.n_p)}, "
                                          f"system has {(model.n_q, model.n_p)}")
    w = _number(doc, "disturbance_bound", "", default=1.0) if "disturbance_bound" in doc else 1.0
    if w < 0:
        raise ProblemError("disturbance_bound", "must be nonnegative")
    opts = _section(doc, "options", "", required=False)
    solver = _dataclass_from(SolverOptions, _section(opts, "solver", "options.", False), "options.solver")
    grid = _dataclass_from(LambdaGrid, _section(opts, "lambda_grid", "options.", False), "options.lambda_grid")
    sim = _dataclass_from(SimulationConfig, _section(opts, "simulation", "options.", False), "options.simulation",
                          tuples=("samplers", "disturbances", "x0_levels"))
    return Problem(model, structure, uclass, w, solver, grid, sim, hashlib.sha256(data).hexdigest(), doc)


def load_problem(path) -> Problem:
    return parse_problem(Path(path).read_bytes())


def builtin_problem_dict(A, E, G, C_q, D=None, uncertainty=None, disturbance_bound=1.0, options=None) -> dict:
    """Problem document for the given data; handy for scripts and tests."""
    doc = {"system": {"A": np.asarray(A, float).tolist(), "E": np.asarray(E, float).tolist(),
                      "G": np.asarray(G, float).tolist(), "C_q": np.asarray(C_q, float).tolist()},
           "uncertainty": uncertainty or {"type": "norm_bounded", "gain": 0.5},
           "disturbance_bound": disturbance_bound}
    if D is not None:
        doc["system"]["D"] = np.asarray(D, float).tolist()
    if options:
        doc["options"] = options
    return doc
