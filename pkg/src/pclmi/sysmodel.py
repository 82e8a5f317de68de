"""Uncertain linear systems x' = A(delta) x + B(delta) u and their JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .params_basis import GAUSSIAN, UNIFORM, ParameterSpace, build_parameter_space


@dataclass(frozen=True)
class MatrixPolynomial:
    """Matrix-valued polynomial sum_e coeff_e * prod_k delta_k^e_k."""

    rows: int
    cols: int
    terms: tuple  # ((exponents, coeff), ...)

    @classmethod
    def from_terms(cls, terms, rows=None, cols=None, dims=None) -> "MatrixPolynomial":
        clean = []
        seen = set()
        for exps, coeff in terms:
            exps = tuple(int(e) for e in exps)
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            if exps in seen:
                raise ValueError(f"duplicate exponent tuple {exps}")
            seen.add(exps)
            coeff = np.array(coeff, dtype=float, ndmin=2)
            clean.append((exps, coeff))
        if not clean:
            if rows is None or cols is None:
                raise ValueError("empty polynomial needs explicit shape")
            return cls(rows, cols, ())
        shapes = {c.shape for _, c in clean}
        if len(shapes) != 1:
            raise ValueError(f"coefficient shapes differ: {sorted(shapes)}")
        r, c = shapes.pop()
        if (rows is not None and rows != r) or (cols is not None and cols != c):
            raise ValueError(f"coefficients are {r}x{c}, expected {rows}x{cols}")
        lens = {len(e) for e, _ in clean}
        if len(lens) != 1 or (dims is not None and lens != {dims}):
            raise ValueError("exponent tuples must all have one entry per parameter")
        return cls(r, c, tuple(sorted(clean, key=lambda t: (sum(t[0]), t[0]))))

    @classmethod
    def constant(cls, mat, dims: int = 0) -> "MatrixPolynomial":
        return cls.from_terms([((0,) * dims, mat)])

    @property
    def dims(self) -> int | None:
        return len(self.terms[0][0]) if self.terms else None

    @property
    def degree(self) -> int:
        return max((sum(e) for e, _ in self.terms), default=0)

    def max_exponent(self, k: int) -> int:
        return max((e[k] for e, _ in self.terms), default=0)

    def __add__(self, other: "MatrixPolynomial") -> "MatrixPolynomial":
        acc = {e: c.copy() for e, c in self.terms}
        for e, c in other.terms:
            acc[e] = acc[e] + c if e in acc else c.copy()
        return MatrixPolynomial.from_terms(acc.items(), self.rows, self.cols)

    def scale(self, alpha: float) -> "MatrixPolynomial":
        return MatrixPolynomial(self.rows, self.cols, tuple((e, alpha * c) for e, c in self.terms))

    def matmul(self, mat) -> "MatrixPolynomial":
        """Right-multiply every coefficient by a constant matrix."""
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        terms = tuple((e, c @ mat) for e, c in self.terms)
        return MatrixPolynomial(self.rows, mat.shape[1], terms)


def eval_matrix(poly: MatrixPolynomial, point) -> np.ndarray:
    point = np.asarray(point, dtype=float).reshape(-1)
    if poly.dims is not None and point.size != poly.dims:
        raise ValueError(f"polynomial has {poly.dims} parameters, point has {point.size}")
    out = np.zeros((poly.rows, poly.cols))
    for exps, coeff in poly.terms:
        out += coeff * np.prod(point ** np.array(exps, dtype=float))
    return out


def eval_matrices(poly: MatrixPolynomial, points) -> np.ndarray:
    """Evaluate at many points at once: ``(S, d)`` in, ``(S, rows, cols)`` out."""
    pts = np.asarray(points, dtype=float)
    out = np.zeros((pts.shape[0], poly.rows, poly.cols))
    for exps, coeff in poly.terms:
        mono = np.prod(pts ** np.array(exps, dtype=float), axis=1) if pts.shape[1] else np.ones(len(pts))
        out += mono[:, None, None] * coeff
    return out


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R"):
            mat = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if mat.shape[0] != mat.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.max(np.abs(mat - mat.T)) > 1e-14 * max(1.0, np.max(np.abs(mat))):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(mat)[0] <= 0:
                raise ValueError(f"{name} must be positive definite")
            object.__setattr__(self, name, mat)


@dataclass(frozen=True)
class UncertainLinearSystem:
    n: int
    m: int
    space: ParameterSpace
    A: MatrixPolynomial
    B: MatrixPolynomial

    def __post_init__(self):
        if (self.A.rows, self.A.cols) != (self.n, self.n):
            raise ValueError(f"A must be {self.n}x{self.n}")
        if (self.B.rows, self.B.cols) != (self.n, self.m):
            raise ValueError(f"B must be {self.n}x{self.m}")
        for label, poly in (("A", self.A), ("B", self.B)):
            if poly.dims is not None and poly.dims != self.space.dims:
                raise ValueError(
                    f"{label} exponents have {poly.dims} entries, system has {self.space.dims} parameters"
                )

    def closed_loop(self, K) -> MatrixPolynomial:
        """A(delta) + B(delta) K as a polynomial."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        if K.shape != (self.m, self.n):
            raise ValueError(f"gain must be {self.m}x{self.n}")
        return self.A + self.B.matmul(K)

    def with_A(self, A: MatrixPolynomial) -> "UncertainLinearSystem":
        return UncertainLinearSystem(self.n, self.m, self.space, A, self.B)


def sample_parameters(space: ParameterSpace, count: int, seed: int) -> np.ndarray:
    """``count`` i.i.d. draws from the joint density as a ``(count, d)`` array.

    Columns are drawn one parameter at a time from a single generator, so
    the draw order is fixed by (seed, count).
    """
    if count < 1:
        raise ValueError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    cols = []
    for marg in space.marginals:
        if marg.distribution == UNIFORM:
            cols.append(rng.uniform(marg.a, marg.b, size=count))
        else:
            cols.append(rng.normal(marg.a, marg.b, size=count))
    if not cols:
        return np.zeros((count, 0))
    return np.column_stack(cols)


def _matrix(value, label: str) -> np.ndarray:
    try:
        mat = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{label}: not a numeric matrix") from exc
    if mat.ndim == 0:
        mat = mat.reshape(1, 1)
    if mat.ndim != 2:
        raise ValueError(f"{label}: expected a nested 2-d array")
    return mat


def _poly(doc, label: str, rows: int, cols: int, dims: int) -> MatrixPolynomial:
    if not isinstance(doc, list) or not doc:
        raise ValueError(f"{label} must be a non-empty list of terms")
    terms = []
    for k, term in enumerate(doc):
        try:
            exps = term.get("exponents", [0] * dims)
            mat = _matrix(term["matrix"], f"{label}[{k}].matrix")
        except (AttributeError, KeyError) as exc:
            raise ValueError(f"{label}[{k}] needs 'matrix'") from exc
        if len(exps) != dims:
            raise ValueError(f"{label}[{k}]: exponents need {dims} entries")
        terms.append((exps, mat))
    return MatrixPolynomial.from_terms(terms, rows, cols, dims)


def parse_system(document: Mapping | str) -> tuple[UncertainLinearSystem, CostWeights | None]:
    """Build a system (and optional weights) from the JSON schema.

    ``document`` may be JSON text or an already-decoded mapping.
    """
    if isinstance(document, (str, bytes)):
        document = json.loads(document)
    try:
        n, m = int(document["n"]), int(document["m"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError("system needs integer 'n' and 'm'") from exc
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    space = build_parameter_space(document.get("parameters", []))
    d = space.dims
    if "A" not in document:
        raise ValueError("system needs 'A'")
    A = _poly(document["A"], "A", n, n, d)
    B = _poly(document.get("B", [{"exponents": [0] * d, "matrix": np.zeros((n, m)).tolist()}]), "B", n, m, d)
    system = UncertainLinearSystem(n, m, space, A, B)
    weights = None
    if "Q" in document or "R" in document:
        if "Q" not in document or "R" not in document:
            raise ValueError("Q and R must be given together")
        Q, R = _matrix(document["Q"], "Q"), _matrix(document["R"], "R")
        if Q.shape != (n, n) or R.shape != (m, m):
            raise ValueError(f"Q must be {n}x{n} and R {m}x{m}")
        weights = CostWeights(Q, R)
    return system, weights


def serialize_system(system: UncertainLinearSystem, weights: CostWeights | None = None) -> dict:
    params = []
    for marg in system.space.marginals:
        if marg.distribution == UNIFORM:
            params.append({"name": marg.name, "distribution": UNIFORM, "support": [marg.a, marg.b]})
        else:
            params.append({"name": marg.name, "distribution": GAUSSIAN, "mean": marg.a, "stddev": marg.b})

    def terms(poly):
        return [{"exponents": list(e), "matrix": c.tolist()} for e, c in poly.terms]

    doc = {"n": system.n, "m": system.m, "parameters": params, "A": terms(system.A), "B": terms(system.B)}
    if weights is not None:
        doc["Q"] = weights.Q.tolist()
        doc["R"] = weights.R.tolist()
    return doc


def load_system(path) -> tuple[UncertainLinearSystem, CostWeights | None]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_system(json.load(fh))


MODELS_DIR = Path(__file__).parent / "models"


def bundled_model(name: str) -> Path:
    """Path of a model file shipped with the package (e.g. ``"f16"``)."""
    path = MODELS_DIR / (name if name.endswith(".json") else f"{name}.json")
    if not path.exists():
        raise FileNotFoundError(path)
    return path
