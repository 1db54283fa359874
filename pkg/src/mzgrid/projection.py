"""Projection machinery for the reduced model.

Two projections appear:

* the delta projection, which freezes the unresolved variables at an anchor
  (:func:`project_state`);
* the finite-rank projection onto tensor Hermite polynomials of the resolved
  initial conditions, with inner products taken against a narrow Gaussian
  measure that is integrated with a Smolyak sparse grid.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

ORTHONORMAL = "orthonormal"
PHYSICISTS = "physicists"
CONVENTIONS = (ORTHONORMAL, PHYSICISTS)


@dataclass(frozen=True)
class Partition:
    resolved_indices: tuple[int, ...] = (0, 1, 2)
    unresolved_indices: tuple[int, ...] = (3, 4)
    unresolved_anchor: tuple[float, ...] = (-0.3, 0.8)

    def __post_init__(self):
        res, unres = set(self.resolved_indices), set(self.unresolved_indices)
        n = len(self.resolved_indices) + len(self.unresolved_indices)
        if res & unres or res | unres != set(range(n)):
            raise ValueError("resolved/unresolved indices must partition the state")
        if len(self.unresolved_anchor) != len(self.unresolved_indices):
            raise ValueError("anchor length must match the unresolved set")

    @property
    def n_state(self) -> int:
        return len(self.resolved_indices) + len(self.unresolved_indices)

    def lift(self, u_hat) -> np.ndarray:
        """Embed resolved values into a full state with unresolved at the anchor."""
        u_hat = np.asarray(u_hat, dtype=np.float64)
        u = np.empty(u_hat.shape[:-1] + (self.n_state,))
        u[..., list(self.resolved_indices)] = u_hat
        u[..., list(self.unresolved_indices)] = self.unresolved_anchor
        return u

    def resolved(self, u) -> np.ndarray:
        return np.asarray(u)[..., list(self.resolved_indices)]


def project_state(u, part: Partition) -> np.ndarray:
    u = np.array(u, dtype=np.float64)
    u[..., list(part.unresolved_indices)] = part.unresolved_anchor
    return u


def enumerate_multi_indices(dim: int, order: int) -> list[tuple[int, ...]]:
    """All multi-indices of total degree <= order, graded lexicographic.

    Degree 0 first, then degree 1, ...; within a degree the tuples are in
    descending lexicographic order so that ``(1, 0, 0)`` precedes ``(0, 1, 0)``.
    """
    if dim < 1 or order < 0:
        raise ValueError("need dim >= 1 and order >= 0")
    out = []
    for degree in range(order + 1):
        block = [nu for nu in itertools.product(range(degree + 1), repeat=dim) if sum(nu) == degree]
        out.extend(sorted(block, reverse=True))
    return out


def _hermite_orthonormal(n_max: int, z: np.ndarray) -> np.ndarray:
    """He_n(z)/sqrt(n!) for n = 0..n_max, stacked on a new last axis."""
    out = np.empty(z.shape + (n_max + 1,))
    out[..., 0] = 1.0
    if n_max >= 1:
        out[..., 1] = z
    for n in range(1, n_max):
        out[..., n + 1] = (z * out[..., n] - math.sqrt(n) * out[..., n - 1]) / math.sqrt(n + 1)
    return out


def _hermite_physicists(n_max: int, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape + (n_max + 1,))
    out[..., 0] = 1.0
    if n_max >= 1:
        out[..., 1] = 2.0 * x
    for n in range(1, n_max):
        out[..., n + 1] = 2.0 * x * out[..., n] - 2.0 * n * out[..., n - 1]
    return out


@dataclass(frozen=True)
class HermiteBasis:
    """Tensor Hermite polynomials of total degree <= ``order``.

    With ``convention="orthonormal"`` the factors are normalized probabilists'
    polynomials of ``z = (x - mean) / std``, orthonormal under the Gaussian
    measure.  ``"physicists"`` uses physicists' H_n of the raw variable,
    e.g. ``h^(1,0,0) = 2 * omega1``; that basis is not orthonormal.
    """

    dim: int
    order: int
    means: tuple[float, ...]
    stds: tuple[float, ...]
    convention: str = ORTHONORMAL

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown Hermite convention {self.convention!r}")
        if len(self.means) != self.dim or len(self.stds) != self.dim:
            raise ValueError("means/stds must have length dim")
        if any(s <= 0 for s in self.stds):
            raise ValueError("standard deviations must be positive")

    @classmethod
    def around(cls, u_hat0, order: int, variance: float = 1e-4, convention: str = ORTHONORMAL):
        u_hat0 = tuple(float(x) for x in u_hat0)
        std = math.sqrt(variance)
        return cls(len(u_hat0), order, u_hat0, (std,) * len(u_hat0), convention)

    @cached_property
    def index_set(self) -> list[tuple[int, ...]]:
        return enumerate_multi_indices(self.dim, self.order)

    @cached_property
    def _index_array(self) -> np.ndarray:
        return np.array(self.index_set, dtype=int).reshape(len(self.index_set), self.dim)

    @property
    def size(self) -> int:
        return len(self.index_set)

    def position(self, nu) -> int:
        try:
            return self.index_set.index(tuple(nu))
        except ValueError:
            raise KeyError(f"multi-index {tuple(nu)} is not in the basis (order {self.order})") from None

    def _univariate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-dimension values and derivatives, each ``(..., dim, order+1)``."""
        x = np.asarray(x, dtype=np.float64)
        mean, std = np.asarray(self.means), np.asarray(self.stds)
        if self.convention == ORTHONORMAL:
            vals = _hermite_orthonormal(self.order, (x - mean) / std)
            # d/dx [He_n(z)/sqrt(n!)] = sqrt(n) * He_{n-1}(z)/sqrt((n-1)!) / std
            scale = np.sqrt(np.arange(self.order + 1)) / std[:, None]
        else:
            vals = _hermite_physicists(self.order, x)
            # H_n' = 2 n H_{n-1}
            scale = np.broadcast_to(2.0 * np.arange(self.order + 1), (self.dim, self.order + 1))
        ders = np.zeros_like(vals)
        ders[..., 1:] = scale[:, 1:] * vals[..., :-1]
        return vals, ders

    def evaluate(self, u_hat) -> np.ndarray:
        """All basis functions at ``u_hat``; shape ``(..., size)``."""
        vals, _ = self._univariate(u_hat)
        idx = self._index_array
        out = np.ones(vals.shape[:-2] + (self.size,))
        for d in range(self.dim):
            out *= vals[..., d, idx[:, d]]
        return out

    def gradient(self, u_hat) -> np.ndarray:
        """Gradients of all basis functions; shape ``(..., size, dim)``."""
        vals, ders = self._univariate(u_hat)
        idx = self._index_array
        factors = [vals[..., d, idx[:, d]] for d in range(self.dim)]
        out = np.empty(vals.shape[:-2] + (self.size, self.dim))
        for k in range(self.dim):
            term = ders[..., k, idx[:, k]]
            for d in range(self.dim):
                if d != k:
                    term = term * factors[d]
            out[..., k] = term
        return out


def hermite_eval(basis: HermiteBasis, nu, u_hat):
    return basis.evaluate(u_hat)[..., basis.position(nu)]


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes in the resolved space and probability weights."""

    nodes: np.ndarray
    weights: np.ndarray
    level: int
    kind: str = "smolyak"

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values) -> np.ndarray:
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))


def _gauss_hermite_probabilists(n: int) -> tuple[np.ndarray, np.ndarray]:
    z, w = hermegauss(n)
    return z, w / math.sqrt(2.0 * math.pi)


def smolyak_standard(dim: int, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Smolyak combination of Gauss-Hermite rules in standard coordinates.

    The univariate rule at level ``l`` has ``l`` points (exact to degree
    ``2l - 1``), and levels enter the combination for
    ``dim <= |l| <= dim + level - 1``.  ``level=1`` is the single node at
    the origin.  In three dimensions ``level=7`` gives 681 distinct nodes and
    integrates total degree <= 13 exactly.
    """
    if level < 1:
        raise ValueError("sparse-grid level must be >= 1")
    q = dim + level - 1
    acc: dict[tuple, float] = {}
    points: dict[tuple, np.ndarray] = {}
    for ls in itertools.product(range(1, level + 1), repeat=dim):
        total = sum(ls)
        if not (q - dim + 1 <= total <= q):
            continue
        coeff = (-1) ** (q - total) * math.comb(dim - 1, q - total)
        rules = [_gauss_hermite_probabilists(l) for l in ls]
        for combo in itertools.product(*[range(l) for l in ls]):
            z = np.array([rules[d][0][combo[d]] for d in range(dim)])
            w = coeff * math.prod(rules[d][1][combo[d]] for d in range(dim))
            # odd Gauss rules share the origin; merge nodes that coincide
            key = tuple(np.round(z, 10) + 0.0)
            acc[key] = acc.get(key, 0.0) + w
            points.setdefault(key, z)
    keys = sorted(acc)
    return np.array([points[k] for k in keys]), np.array([acc[k] for k in keys])


def tensor_standard(dim: int, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    z, w = _gauss_hermite_probabilists(n_points)
    nodes = np.array(list(itertools.product(z, repeat=dim)))
    weights = np.array([math.prod(c) for c in itertools.product(w, repeat=dim)])
    return nodes, weights


def build_quadrature(basis: HermiteBasis, level: int = 7, kind: str = "smolyak") -> QuadratureRule:
    """Sparse (default) or full tensor Gauss-Hermite rule for the basis measure.

    For ``kind="tensor"``, ``level`` is the number of points per dimension.
    """
    if kind == "smolyak":
        z, w = smolyak_standard(basis.dim, level)
    elif kind == "tensor":
        if level < 1:
            raise ValueError("tensor rule needs at least one point per dimension")
        z, w = tensor_standard(basis.dim, level)
    else:
        raise ValueError(f"unknown quadrature kind {kind!r}")
    nodes = np.asarray(basis.means) + np.asarray(basis.stds) * z
    return QuadratureRule(nodes, w, level, kind)


def finite_rank_project(samples, basis: HermiteBasis, rule: QuadratureRule) -> np.ndarray:
    """Coefficients c_nu = sum_q w_q f(node_q) h^nu(node_q).

    ``samples`` has the node axis first; trailing axes are carried through.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] != len(rule):
        raise ValueError(f"expected {len(rule)} samples, got {samples.shape[0]}")
    h = basis.evaluate(rule.nodes)
    return np.tensordot(h * rule.weights[:, None], samples, axes=(0, 0))


def reconstruct(coeffs, basis: HermiteBasis, u_hat) -> np.ndarray:
    return np.tensordot(basis.evaluate(u_hat), coeffs, axes=(-1, 0))
