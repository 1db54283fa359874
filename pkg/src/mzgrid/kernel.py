"""Memory-kernel construction.

The pipeline is

1. propagate an ensemble of full-model trajectories started from the
   quadrature nodes (resolved part) and the anchor (unresolved part);
2. reduce it, sample by sample, to the tables

   ``f[t, j, mu]  = (L e^{tL} F_j(., 0), h^mu)``
   ``g[t, nu, mu] = (L e^{tL} h^nu, h^mu)``
   ``gamma[t, nu, mu] = (e^{tL} h^nu, h^mu)``

   where L acting on a function of the solution is evaluated through the
   chain rule ``L G(u(t)) = sum_r R_r(u(t)) dG/du_r(u(t))``;
3. solve the Volterra equation ``b = f - int_0^t b(s) g(t - s) ds``;
4. form ``M(t) = int_0^t b(s) gamma(t - s) ds``.

All tables are stored time-first: ``f`` is ``(n_t, n_resolved, n_basis)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
import scipy.fft
import scipy.linalg

from .dynamics import (GridParams, IntegrationError, assemble_matrix_a, hessian_vector, jacobian,
                       n_steps, rhs)
from .projection import HermiteBasis, Partition, QuadratureRule, project_state

log = logging.getLogger(__name__)

# below this block length the history sum is done directly
_DIRECT_BLOCK = 64


class VolterraError(ArithmeticError):
    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (time index {index})")
        self.index = index


def liouville_apply(G_gradient: Callable, u, p: GridParams) -> np.ndarray:
    """L G(u) = sum_r R_r(u) dG/du_r(u).

    ``G_gradient(u)`` returns ``(..., 5)`` for a scalar G or ``(..., k, 5)``
    for k functions at once.
    """
    u = np.asarray(u, dtype=np.float64)
    grad = np.asarray(G_gradient(u), dtype=np.float64)
    r = rhs(u, p)
    if grad.ndim == r.ndim:
        return np.sum(grad * r, axis=-1)
    return np.einsum("...kr,...r->...k", grad, r)


def initial_fluctuation(j: int, u, part: Partition, p: GridParams):
    """F_j(u, 0) = R_j(u) - R_j(Pu) for state index j."""
    return rhs(u, p)[..., j] - rhs(project_state(u, part), p)[..., j]


def fluctuation_gradient(u, part: Partition, p: GridParams) -> np.ndarray:
    """dF_j/du for every resolved j; shape ``(..., n_resolved, 5)``.

    Resolved columns get J(u) - J(Pu); unresolved columns only J(u) because
    Pu does not depend on them.
    """
    res = list(part.resolved_indices)
    jac = jacobian(u, p)[..., res, :]
    jac_p = jacobian(project_state(u, part), p)[..., res, :]
    out = jac.copy()
    out[..., res] -= jac_p[..., res]
    return out


@dataclass
class EnsembleRun:
    """Full-model runs from the quadrature nodes lifted to full states.

    Trajectories are streamed by :meth:`propagate` rather than stored; a
    681-node run over 4e4 steps would otherwise hold ~1 GB.
    """

    initial_states: np.ndarray
    dt: float
    horizon: float
    stride: int = 1
    params: GridParams = field(default_factory=GridParams)

    @classmethod
    def from_rule(cls, rule: QuadratureRule, part: Partition, dt: float, horizon: float,
                  stride: int = 1, params: GridParams | None = None) -> "EnsembleRun":
        return cls(part.lift(rule.nodes), dt, horizon, stride, params or GridParams())

    @property
    def dt_k(self) -> float:
        return self.dt * self.stride

    @property
    def n_samples(self) -> int:
        return n_steps(self.horizon, self.dt_k) + 1

    def propagate(self) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        """Yield ``(sample_index, states, rhs(states))`` every ``stride`` Euler steps."""
        u = np.array(self.initial_states, dtype=np.float64)
        r = rhs(u, self.params)
        yield 0, u, r
        for k in range(1, self.n_samples):
            for i in range(self.stride):
                if i:
                    r = rhs(u, self.params)
                u = u + self.dt * r
            bad = ~np.all(np.isfinite(u), axis=1) | ~(u[:, 4] > 0)
            if np.any(bad):
                node = int(np.flatnonzero(bad)[0])
                raise IntegrationError(f"ensemble trajectory for node {node} failed", k * self.dt_k)
            r = rhs(u, self.params)
            yield k, u, r

    def trajectories(self) -> np.ndarray:
        """Materialize all samples, ``(n_t, n_nodes, 5)``.  Small runs only."""
        return np.stack([u.copy() for _, u, _ in self.propagate()])


def compute_tables(ensemble: EnsembleRun, basis: HermiteBasis, rule: QuadratureRule,
                   part: Partition) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadrature reduction of the ensemble into ``f``, ``g``, ``gamma``."""
    p = ensemble.params
    res = list(part.resolved_indices)
    a_res = assemble_matrix_a(p)[res]
    mask = np.zeros(part.n_state)
    mask[res] = 1.0
    h0 = basis.evaluate(rule.nodes)
    wh0 = h0 * rule.weights[:, None]
    n_t, n_b, n_r = ensemble.n_samples, basis.size, len(res)
    f = np.empty((n_t, n_r, n_b))
    g = np.empty((n_t, n_b, n_b))
    gamma = np.empty((n_t, n_b, n_b))
    for k, u, r in ensemble.propagate():
        u_hat = u[:, res]
        h = basis.evaluate(u_hat)
        lh = np.einsum("qir,qr->qi", basis.gradient(u_hat), r[:, res])
        # sum_r R_r dF_j/du_r with dF/du = A (H(u) - H(Pu) diag(mask)), see fluctuation_gradient
        lf = (hessian_vector(u, r, p) - hessian_vector(project_state(u, part), r * mask, p)) @ a_res.T
        # fixed summation order over nodes: matmul over the node axis
        gamma[k] = h.T @ wh0
        g[k] = lh.T @ wh0
        f[k] = lf.T @ wh0
    return f, g, gamma


def _fft_len(n: int) -> int:
    return scipy.fft.next_fast_len(n, real=True)


def _convolve(a: np.ndarray, kern: np.ndarray, n_out: int) -> np.ndarray:
    """y[k] = sum_i a[i] @ kern[k - i] for k < n_out (matrix-valued series)."""
    nfft = _fft_len(len(a) + len(kern) - 1)
    fa = scipy.fft.rfft(a, n=nfft, axis=0)
    fk = scipy.fft.rfft(kern, n=nfft, axis=0)
    return scipy.fft.irfft(fa @ fk, n=nfft, axis=0)[:n_out]


def solve_volterra(f, g, dt_k: float) -> np.ndarray:
    """Trapezoidal solution of ``b(t) = f(t) - int_0^t b(s) g(t - s) ds``.

    ``f`` is ``(n_t, J, I)`` and ``g`` is ``(n_t, I, I)``; the product is
    ``b(s) @ g(t - s)``.  The newest value enters with weight ``dt_k/2``,
    so each step solves ``b_n (1 + dt_k/2 g_0) = rhs``.  The history sum
    is accumulated by recursive halving with FFT convolutions between
    halves, which gives the same discrete solution as the direct O(N^2)
    loop in O(N log^2 N).
    """
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape[0] != g.shape[0] or f.shape[2] != g.shape[1]:
        raise ValueError("f and g must share time sampling and basis size")
    n_t, _, n_b = f.shape
    step = np.eye(n_b) + 0.5 * dt_k * g[0]
    if n_t > 1:
        cond = np.linalg.cond(step)
        if not np.isfinite(cond) or cond > 1e14:
            raise VolterraError("singular Volterra step matrix", 1)
        lu = scipy.linalg.lu_factor(step.T)
    b = np.zeros_like(f)
    c = np.zeros_like(f)   # trapezoid-weighted b: c_0 = b_0/2, c_i = b_i
    hist = np.zeros_like(f)
    b[0] = f[0]
    c[0] = 0.5 * f[0]

    def direct(lo: int, hi: int) -> None:
        for n in range(max(lo, 1), hi):
            if n > lo:
                hist[n] += np.einsum("kji,kim->jm", c[lo:n], g[n - lo:0:-1])
            rhs_n = f[n] - dt_k * hist[n]
            b[n] = scipy.linalg.lu_solve(lu, rhs_n.T).T
            c[n] = b[n]
            if not np.all(np.isfinite(b[n])):
                raise VolterraError("non-finite Volterra solution", n)

    def solve(lo: int, hi: int) -> None:
        if hi - lo <= _DIRECT_BLOCK:
            direct(lo, hi)
            return
        mid = (lo + hi) // 2
        solve(lo, mid)
        hist[mid:hi] += _convolve(c[lo:mid], g[:hi - lo], hi - lo)[mid - lo:]
        solve(mid, hi)

    solve(0, n_t)
    return b


def volterra_residual(b, f, g, dt_k: float, indices=None) -> np.ndarray:
    """Direct residual of the discretized Volterra equation.

    Evaluated at every sample (O(N^2)) or only at ``indices``.
    """
    b, f, g = (np.asarray(x, dtype=np.float64) for x in (b, f, g))
    indices = range(len(b)) if indices is None else indices
    res = []
    for n in indices:
        if n == 0:
            res.append(np.max(np.abs(b[0] - f[0])))
            continue
        w = np.ones(n + 1)
        w[0] = w[n] = 0.5
        integral = np.einsum("k,kji,kim->jm", w, b[:n + 1], g[n::-1])
        res.append(np.max(np.abs(b[n] - f[n] + dt_k * integral)))
    return np.array(res)


def assemble_memory_matrix(b, gamma, dt_k: float, t_memory: float | None = None) -> np.ndarray:
    """M(t) = int_0^min(t, t_memory) b(s) gamma(t - s) ds by the trapezoid rule.

    ``t_memory=None`` is the infinite-memory case.  For samples with
    ``t <= t_memory`` the finite result is copied from the infinite one, so
    both modes agree bitwise there.
    """
    b = np.asarray(b, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    n_t = len(b)
    c = b.copy()
    c[0] *= 0.5
    full = _convolve(c, gamma, n_t)
    full -= 0.5 * np.einsum("nji,im->njm", b, gamma[0])
    full *= dt_k
    full[0] = 0.0
    if t_memory is None:
        return full
    k_mem = int(round(t_memory / dt_k))
    if k_mem < 0:
        raise ValueError("t_memory must be non-negative")
    if k_mem >= n_t - 1:
        return full
    out = full.copy()
    if k_mem == 0:
        out[:] = 0.0
        return out
    ck = c[:k_mem + 1].copy()
    ck[k_mem] *= 0.5
    out[k_mem + 1:] = dt_k * _convolve(ck, gamma, n_t)[k_mem + 1:]
    return out


def memory_matrix_direct(b, gamma, dt_k: float, t_memory: float | None = None) -> np.ndarray:
    """Reference O(N^2) trapezoid for :func:`assemble_memory_matrix`."""
    b = np.asarray(b, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    n_t = len(b)
    k_mem = n_t if t_memory is None else int(round(t_memory / dt_k))
    out = np.zeros((n_t,) + b.shape[1:2] + gamma.shape[2:])
    for n in range(1, n_t):
        m = min(n, k_mem)
        if m == 0:
            continue
        w = np.ones(m + 1)
        w[0] = w[m] = 0.5
        out[n] = dt_k * np.einsum("k,kji,kim->jm", w, b[:m + 1], gamma[n:n - m - 1 if n - m - 1 >= 0 else None:-1])
    return out


@dataclass
class KernelTables:
    """Sampled kernel tables plus the basis they were computed in."""

    dt_k: float
    horizon: float
    basis: HermiteBasis
    f: np.ndarray
    g: np.ndarray
    gamma: np.ndarray
    b: np.ndarray
    memory_matrix: np.ndarray
    partition: Partition = field(default_factory=Partition)
    params: GridParams = field(default_factory=GridParams)
    n_nodes: int = 0
    _finite_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_samples(self) -> int:
        return len(self.b)

    @property
    def times(self) -> np.ndarray:
        return self.dt_k * np.arange(self.n_samples)

    def memory(self, t_memory: float | None = None) -> np.ndarray:
        """Memory matrix for a memory length (None = infinite)."""
        if t_memory is not None and t_memory > self.horizon + 1e-12:
            raise ValueError(f"t_memory={t_memory} exceeds the kernel horizon {self.horizon}")
        if t_memory is None or t_memory >= self.horizon:
            return self.memory_matrix
        key = int(round(t_memory / self.dt_k))
        if key not in self._finite_cache:
            self._finite_cache[key] = assemble_memory_matrix(self.b, self.gamma, self.dt_k, t_memory)
        return self._finite_cache[key]

    def truncate(self, order: int) -> "KernelTables":
        """Tables for a lower basis order, re-solving the Volterra equation.

        f, g and gamma are inner products of the same basis functions, so a
        lower order only selects sub-blocks; b depends on the whole system
        and is recomputed.
        """
        if order > self.basis.order or order < 0:
            raise ValueError(f"order must be in [0, {self.basis.order}], got {order}")
        if order == self.basis.order:
            return self
        sub = HermiteBasis(self.basis.dim, order, self.basis.means, self.basis.stds, self.basis.convention)
        idx = np.array([self.basis.position(nu) for nu in sub.index_set])
        f = self.f[:, :, idx]
        g = self.g[:, idx][:, :, idx]
        gamma = self.gamma[:, idx][:, :, idx]
        b = solve_volterra(f, g, self.dt_k)
        mem = assemble_memory_matrix(b, gamma, self.dt_k)
        return KernelTables(self.dt_k, self.horizon, sub, f, g, gamma, b, mem,
                            self.partition, self.params, self.n_nodes)

    @classmethod
    def zeros(cls, basis: HermiteBasis, dt_k: float, horizon: float, n_resolved: int = 3) -> "KernelTables":
        n_t = n_steps(horizon, dt_k) + 1
        n_b = basis.size
        z3 = np.zeros((n_t, n_resolved, n_b))
        zb = np.zeros((n_t, n_b, n_b))
        return cls(dt_k, horizon, basis, z3, zb, zb.copy(), z3.copy(), z3.copy())


def build_kernel(u_hat0, basis: HermiteBasis, rule: QuadratureRule, part: Partition,
                 dt: float, horizon: float, stride: int = 1,
                 params: GridParams | None = None) -> KernelTables:
    """Ensemble -> tables -> Volterra -> memory matrix."""
    params = params or GridParams()
    ens = EnsembleRun.from_rule(rule, part, dt, horizon, stride, params)
    log.info("propagating %d nodes for %d samples", len(rule), ens.n_samples)
    f, g, gamma = compute_tables(ens, basis, rule, part)
    b = solve_volterra(f, g, ens.dt_k)
    mem = assemble_memory_matrix(b, gamma, ens.dt_k)
    return KernelTables(ens.dt_k, (ens.n_samples - 1) * ens.dt_k, basis, f, g, gamma, b, mem,
                        part, params, len(rule))


def kernel_diagnostics(tables: KernelTables, j: int = 0, window: float = 0.2) -> dict:
    """Late-time plateaus of the linear kernel coefficients for resolved j."""
    basis = tables.basis
    n_t = tables.n_samples
    start = int(np.floor((1.0 - window) * (n_t - 1)))
    report = {"window_start": start * tables.dt_k, "horizon": tables.horizon}
    linear = [nu for nu in basis.index_set if sum(nu) == 1]
    for nu in linear:
        series = tables.b[start:, j, basis.position(nu)]
        report["".join(map(str, nu))] = float(np.mean(series))
    if len(linear) >= 2:
        first, second = report["".join(map(str, linear[0]))], report["".join(map(str, linear[1]))]
        report["antisymmetry_ratio"] = first / second if second != 0 else float("nan")
    return report
