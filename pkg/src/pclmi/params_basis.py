"""Parameter spaces, polynomial chaos bases and Gauss quadrature.

Each random parameter is an independent uniform or gaussian marginal. The
basis follows the Wiener-Askey pairing: Legendre polynomials for uniform
marginals and probabilists' Hermite polynomials for gaussian ones. Basis
functions are left unnormalized, so ``E[phi_i^2] = h_i^2`` is carried
explicitly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb, factorial
from typing import Callable, Sequence

import numpy as np

UNIFORM = "uniform"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class Marginal:
    name: str
    distribution: str
    a: float  # lower bound (uniform) or mean (gaussian)
    b: float  # upper bound (uniform) or stddev (gaussian)

    def __post_init__(self):
        if self.distribution == UNIFORM:
            if not (np.isfinite(self.a) and np.isfinite(self.b) and self.a < self.b):
                raise ValueError(f"parameter {self.name!r}: uniform support needs a < b")
        elif self.distribution == GAUSSIAN:
            if not (np.isfinite(self.a) and np.isfinite(self.b) and self.b > 0):
                raise ValueError(f"parameter {self.name!r}: gaussian stddev must be > 0")
        else:
            raise ValueError(
                f"parameter {self.name!r}: unsupported distribution {self.distribution!r}"
            )

    def standardize(self, x):
        """Map a physical value onto the reference variable of the family."""
        x = np.asarray(x, dtype=float)
        if self.distribution == UNIFORM:
            return (2.0 * x - (self.a + self.b)) / (self.b - self.a)
        return (x - self.a) / self.b

    def from_reference(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.distribution == UNIFORM:
            return 0.5 * (self.a + self.b) + 0.5 * (self.b - self.a) * xi
        return self.a + self.b * xi

    def density(self, x):
        x = np.asarray(x, dtype=float)
        if self.distribution == UNIFORM:
            inside = (x >= self.a) & (x <= self.b)
            return np.where(inside, 1.0 / (self.b - self.a), 0.0)
        return np.exp(-0.5 * ((x - self.a) / self.b) ** 2) / (self.b * np.sqrt(2 * np.pi))

    def polys(self, xi, order: int) -> np.ndarray:
        """Values of the family's polynomials 0..order at reference points.

        Returns an array of shape ``(order + 1,) + xi.shape``.
        """
        xi = np.asarray(xi, dtype=float)
        out = np.empty((order + 1,) + xi.shape)
        out[0] = 1.0
        if order >= 1:
            out[1] = xi
        for k in range(1, order):
            if self.distribution == UNIFORM:
                out[k + 1] = ((2 * k + 1) * xi * out[k] - k * out[k - 1]) / (k + 1)
            else:
                out[k + 1] = xi * out[k] - k * out[k - 1]
        return out

    def norm_sq(self, k: int) -> float:
        """Closed-form ``E[psi_k^2]``; used only to cross-check quadrature."""
        if self.distribution == UNIFORM:
            return 1.0 / (2 * k + 1)
        return float(factorial(k))

    def gauss_rule(self, q: int):
        """Reference nodes and probability weights of the q-point Gauss rule."""
        if self.distribution == UNIFORM:
            x, w = np.polynomial.legendre.leggauss(q)
            return x, w / 2.0
        x, w = np.polynomial.hermite_e.hermegauss(q)
        return x, w / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ParameterSpace:
    marginals: tuple = ()

    @property
    def dims(self) -> int:
        return len(self.marginals)

    @property
    def names(self) -> list:
        return [m.name for m in self.marginals]

    def density(self, point) -> float:
        point = np.asarray(point, dtype=float).reshape(-1)
        self._check_point(point)
        return float(np.prod([m.density(x) for m, x in zip(self.marginals, point)]))

    def _check_point(self, point):
        if point.shape != (self.dims,):
            raise ValueError(f"expected a {self.dims}-vector, got shape {point.shape}")


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray  # (K, d) physical coordinates
    weights: np.ndarray  # (K,), sum to one
    level: int

    def __len__(self):
        return len(self.weights)


def build_parameter_space(specs: Sequence[dict]) -> ParameterSpace:
    """Validate marginal descriptors and check the joint density integrates to one.

    Each descriptor has ``name``, ``distribution`` and either ``support``
    ``[a, b]`` (uniform) or ``mean``/``stddev`` (gaussian).
    """
    marginals = []
    for k, spec in enumerate(specs):
        name = str(spec.get("name", f"delta{k + 1}"))
        dist = spec.get("distribution")
        if dist == UNIFORM:
            try:
                a, b = (float(v) for v in spec["support"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"parameter {name!r}: uniform needs support [a, b]") from exc
            marginals.append(Marginal(name, UNIFORM, a, b))
        elif dist == GAUSSIAN:
            try:
                marginals.append(
                    Marginal(name, GAUSSIAN, float(spec["mean"]), float(spec["stddev"]))
                )
            except KeyError as exc:
                raise ValueError(f"parameter {name!r}: gaussian needs mean and stddev") from exc
        else:
            raise ValueError(f"parameter {name!r}: unsupported distribution {dist!r}")
    space = ParameterSpace(tuple(marginals))
    total = expectation_rule(quadrature(space, 4), lambda _: 1.0)
    if abs(total - 1.0) > 1e-10:
        raise ValueError(f"joint density integrates to {total}, not 1")
    return space


def quadrature(space: ParameterSpace, q: int) -> QuadratureRule:
    """Tensor-product Gauss rule with q nodes per dimension."""
    if q < 1:
        raise ValueError("quadrature level must be >= 1")
    if space.dims == 0:
        return QuadratureRule(np.zeros((1, 0)), np.ones(1), q)
    rules = [m.gauss_rule(q) for m in space.marginals]
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrid = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    ref = np.stack([g.reshape(-1) for g in grids], axis=1)
    weights = np.prod(np.stack([w.reshape(-1) for w in wgrid], axis=1), axis=1)
    nodes = np.column_stack([m.from_reference(ref[:, k]) for k, m in enumerate(space.marginals)])
    return QuadratureRule(nodes, weights, q)


def total_degree_indices(d: int, p: int) -> list:
    """Multi-indices of total degree <= p, graded then lexicographic."""
    idx = [t for t in itertools.product(range(p + 1), repeat=d) if sum(t) <= p]
    return sorted(idx, key=lambda t: (sum(t), t))


@dataclass(frozen=True)
class PCBasis:
    space: ParameterSpace
    order: int
    multi_indices: tuple
    norms_sq: np.ndarray
    rule: QuadratureRule = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.multi_indices)

    def evaluate(self, points) -> np.ndarray:
        """Basis values at many points: ``(K, d)`` in, ``(K, N+1)`` out."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, self.space.dims) if self.space.dims else pts.reshape(-1, 0)
        if pts.shape[1] != self.space.dims:
            raise ValueError(f"expected points with {self.space.dims} coordinates")
        out = np.ones((pts.shape[0], self.size))
        for k, marg in enumerate(self.space.marginals):
            table = marg.polys(marg.standardize(pts[:, k]), self.order)  # (p+1, K)
            degs = [mi[k] for mi in self.multi_indices]
            out *= table[degs].T
        return out


def build_basis(space: ParameterSpace, order: int, level: int | None = None) -> PCBasis:
    """Total-degree polynomial chaos basis with quadrature-computed norms.

    The default quadrature level is ``order + 2`` nodes per dimension.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    q = order + 2 if level is None else int(level)
    rule = quadrature(space, q)
    indices = tuple(total_degree_indices(space.dims, order))
    assert len(indices) == comb(space.dims + order, space.dims)
    basis = PCBasis(space, order, indices, np.ones(len(indices)), rule)
    vals = basis.evaluate(rule.nodes)
    gram = (vals * rule.weights[:, None]).T @ vals
    norms = np.diag(gram).copy()
    # scaled by sqrt(h_i^2 h_j^2): Hermite norms grow like k!
    off = (gram - np.diag(norms)) / np.sqrt(np.outer(norms, norms))
    if np.max(np.abs(off), initial=0.0) > 1e-10:
        raise ValueError("quadrature too coarse: basis not orthogonal to 1e-10")
    object.__setattr__(basis, "norms_sq", norms)
    return basis


def eval_basis(basis: PCBasis, point) -> np.ndarray:
    """The stacked basis vector (phi_0(point), ..., phi_N(point))."""
    point = np.asarray(point, dtype=float).reshape(-1)
    if point.shape != (basis.space.dims,):
        raise ValueError(
            f"point has {point.size} coordinates, basis has {basis.space.dims} dimensions"
        )
    return basis.evaluate(point.reshape(1, -1))[0]


def expectation_rule(rule: QuadratureRule, integrand: Callable) -> np.ndarray | float:
    """Weighted sum of ``integrand`` over the rule's nodes."""
    total = None
    shape = None
    for node, w in zip(rule.nodes, rule.weights):
        val = np.asarray(integrand(node), dtype=float)
        if shape is None:
            shape = val.shape
            total = w * val
        else:
            if val.shape != shape:
                raise ValueError(f"integrand shape changed from {shape} to {val.shape}")
            total = total + w * val
    return float(total) if shape == () else total


def expectation(basis: PCBasis, integrand: Callable) -> np.ndarray | float:
    """E[integrand(delta)] under the basis's parameter density."""
    return expectation_rule(basis.rule, integrand)
