"""Particle linearly coupled to a bath of harmonic oscillators.

The reduced equation for the particle,

    dx/dt = p/m,
    dp/dt = -U'(x) - int_0^t K(s) p(t - s)/m ds + F_p(t),

is exact, so it serves as a ground truth for how memory truncation
degrades a reduced model.  Full state layout: ``[x, p, q_1..q_n, pq_1..pq_n]``.

Both integrators default to semi-implicit Euler (momenta from the old
positions, then positions from the new momenta).  Plain forward Euler is
available with ``scheme="forward"``; on the ``omega_j = 5`` oscillator at
``dt = 1e-3`` it inflates the bath energy enough to dominate the
full-versus-reduced comparison.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import Trajectory, n_steps


def _cos2(x):
    return np.cos(2.0 * x)


def _dcos2(x):
    return -2.0 * np.sin(2.0 * x)


@dataclass(frozen=True)
class BathParams:
    gammas: tuple[float, ...] = tuple(1.0 / (j / 3.0 + 1.0) for j in range(1, 6))
    omegas: tuple[float, ...] = tuple(float(j) for j in range(1, 6))
    mass: float = 1.0
    potential: Callable = field(default=_cos2, compare=False)
    potential_derivative: Callable = field(default=_dcos2, compare=False)

    def __post_init__(self):
        if len(self.gammas) != len(self.omegas):
            raise ValueError("gammas and omegas must have the same length")
        if any(w <= 0 for w in self.omegas) or self.mass <= 0:
            raise ValueError("frequencies and mass must be positive")

    @classmethod
    def default(cls, n_osc: int = 5) -> "BathParams":
        j = np.arange(1, n_osc + 1)
        return cls(tuple(1.0 / (j / 3.0 + 1.0)), tuple(j.astype(float)))

    @property
    def n_osc(self) -> int:
        return len(self.omegas)


@dataclass
class FullBathState:
    x: float
    p: float
    q: np.ndarray
    pq: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.concatenate([[self.x, self.p], self.q, self.pq])

    @classmethod
    def from_array(cls, s) -> "FullBathState":
        s = np.asarray(s, dtype=np.float64)
        n = (len(s) - 2) // 2
        return cls(float(s[0]), float(s[1]), s[2:2 + n].copy(), s[2 + n:].copy())

    @classmethod
    def reference_initial(cls, n_osc: int = 5) -> "FullBathState":
        return cls(0.0, 1.0, np.ones(n_osc), np.ones(n_osc))


def full_bath_rhs(s, bp: BathParams) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    n = bp.n_osc
    g, w = np.asarray(bp.gammas), np.asarray(bp.omegas)
    x, p = s[..., 0], s[..., 1]
    q, pq = s[..., 2:2 + n], s[..., 2 + n:]
    out = np.empty(s.shape)
    out[..., 0] = p / bp.mass
    out[..., 1] = -bp.potential_derivative(x) + np.sum(g * (q - (g / w**2) * x[..., None]), axis=-1)
    out[..., 2:2 + n] = pq
    out[..., 2 + n:] = -w**2 * q + g * x[..., None]
    return out


def hamiltonian(s, bp: BathParams):
    s = np.asarray(s, dtype=np.float64)
    n = bp.n_osc
    g, w = np.asarray(bp.gammas), np.asarray(bp.omegas)
    x, p = s[..., 0], s[..., 1]
    q, pq = s[..., 2:2 + n], s[..., 2 + n:]
    bath = np.sum(0.5 * pq**2 + 0.5 * w**2 * (q - (g / w**2) * x[..., None]) ** 2, axis=-1)
    return p**2 / (2.0 * bp.mass) + bp.potential(x) + bath


def memory_kernel_K(t, bp: BathParams):
    t = np.asarray(t, dtype=np.float64)
    g, w = np.asarray(bp.gammas), np.asarray(bp.omegas)
    return np.sum((g**2 / w**2) * np.cos(w * t[..., None]), axis=-1)


def noise_F_p(t, s0: FullBathState, bp: BathParams):
    t = np.asarray(t, dtype=np.float64)[..., None]
    g, w = np.asarray(bp.gammas), np.asarray(bp.omegas)
    return np.sum(
        g * s0.pq * np.sin(w * t) / w + g * (s0.q - (g / w**2) * s0.x) * np.cos(w * t),
        axis=-1,
    )


def bath_closed_form_q(t: float, j: int, x_history, s0: FullBathState, bp: BathParams, dt: float) -> float:
    """q_j(t) given the particle path, with the driving integral by trapezoid.

    ``x_history[k]`` is x(k dt) and must cover [0, t].
    """
    x_history = np.asarray(x_history, dtype=np.float64)
    n = int(round(t / dt))
    if n >= len(x_history):
        raise ValueError(f"x_history has {len(x_history)} samples, need {n + 1} to reach t={t}")
    w, g = bp.omegas[j], bp.gammas[j]
    free = s0.q[j] * np.cos(w * t) + s0.pq[j] * np.sin(w * t) / w
    if n == 0:
        return float(free)
    s = dt * np.arange(n + 1)
    integrand = x_history[:n + 1] * np.sin(w * (t - s)) / w
    return float(free + g * np.trapezoid(integrand, dx=dt))


SCHEMES = ("semi-implicit", "forward")


def simulate_full_bath(s0: FullBathState, bp: BathParams, dt: float = 1e-3, t_end: float = 10.0,
                       scheme: str = "semi-implicit") -> Trajectory:
    """First-order Euler run of the 2 + 2n dimensional system."""
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    n = n_steps(t_end, dt)
    nb = bp.n_osc
    pos = np.r_[0, 2:2 + nb]
    mom = np.r_[1, 2 + nb:2 + 2 * nb]
    s = s0.to_array()
    states = np.empty((n + 1, len(s)))
    states[0] = s
    for k in range(n):
        ds = full_bath_rhs(s, bp)
        if scheme == "forward":
            s = s + dt * ds
        else:
            s = s.copy()
            s[mom] += dt * ds[mom]
            s[pos] += dt * full_bath_rhs(s, bp)[pos]
        states[k + 1] = s
    labels = ("x", "p") + tuple(f"q{j + 1}" for j in range(bp.n_osc)) + tuple(f"pq{j + 1}" for j in range(bp.n_osc))
    if not np.all(np.isfinite(states)):
        raise FloatingPointError("full bath simulation overflowed")
    return Trajectory(dt, dt * np.arange(n + 1), states, labels)


def simulate_reduced_particle(x0: float, p0: float, bp: BathParams, dt: float = 1e-3, t_end: float = 10.0,
                              t_memory: float | None = None, s0: FullBathState | None = None,
                              kernel: Callable | None = None, noise: Callable | None = None,
                              scheme: str = "semi-implicit") -> Trajectory:
    """Euler for the particle with a trapezoidal memory convolution.

    The momentum update is explicit in the force, memory and noise at t_k;
    ``scheme="semi-implicit"`` then moves x with the new momentum,
    ``"forward"`` with the old one.

    ``t_memory=None`` keeps the whole history, ``t_memory=0`` drops the
    memory term.  ``s0`` supplies the bath initial condition for the noise
    (defaults to all ones, as in the reference experiment).  ``kernel`` and
    ``noise`` override K(t) and F_p(t).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    n = n_steps(t_end, dt)
    s0 = s0 or FullBathState(x0, p0, np.ones(bp.n_osc), np.ones(bp.n_osc))
    times = dt * np.arange(n + 1)
    k_vals = kernel(times) if kernel is not None else memory_kernel_K(times, bp)
    f_vals = noise(times) if noise is not None else noise_F_p(times, s0, bp)
    k_vals = np.broadcast_to(np.asarray(k_vals, dtype=np.float64), times.shape)
    f_vals = np.broadcast_to(np.asarray(f_vals, dtype=np.float64), times.shape)
    k_mem = n if t_memory is None else int(round(t_memory / dt))
    xs = np.empty(n + 1)
    ps = np.empty(n + 1)
    xs[0], ps[0] = x0, p0
    for k in range(n):
        m = min(k, k_mem)
        conv = 0.0
        if m > 0:
            # trapezoid over s in [0, m dt] of K(s) p(t_k - s)
            conv = np.dot(k_vals[:m + 1], ps[k - m:k + 1][::-1])
            conv -= 0.5 * (k_vals[0] * ps[k] + k_vals[m] * ps[k - m])
            conv *= dt / bp.mass
        ps[k + 1] = ps[k] + dt * (-bp.potential_derivative(xs[k]) - conv + f_vals[k])
        xs[k + 1] = xs[k] + dt * (ps[k + 1] if scheme == "semi-implicit" else ps[k]) / bp.mass
        if not (np.isfinite(xs[k + 1]) and np.isfinite(ps[k + 1])):
            raise FloatingPointError(f"reduced particle overflowed at t={times[k + 1]:.6g}")
    return Trajectory(dt, times, np.column_stack([xs, ps]), ("x", "p"))
