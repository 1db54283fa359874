"""Full DeMarco 3-bus model: energy, gradient, structure matrix, forward Euler.

All state functions accept arrays of shape ``(..., 5)`` so that an ensemble
of initial conditions can be propagated in one vectorized pass.  The state
ordering is ``(omega1, omega2, alpha2, alpha3, v3)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np

STATE_LABELS = ("omega1", "omega2", "alpha2", "alpha3", "v3")
N_STATE = 5

# reference initial condition for the full run
DEFAULT_U0 = np.array([0.0, 0.0, -0.16, -0.3, 0.8])


class DomainError(ValueError):
    """Raised when V3 leaves the positive half-line."""


class IntegrationError(RuntimeError):
    """Raised when a time integration leaves the admissible domain."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.6g}")
        self.time = time


@dataclass(frozen=True)
class GridParams:
    m1: float = 0.052
    m2: float = 0.0531
    b1: float = 10.0
    b2: float = 10.0
    b3: float = 10.0
    d1: float = 0.05
    d2: float = 0.05
    d3: float = 0.005
    p2: float = -2.0
    p3: float = 3.0
    q3: float = 0.1
    epsilon: float = 5.0
    v1: float = 0.9
    v2: float = 0.9

    def __post_init__(self):
        for name in ("m1", "m2", "d1", "d2", "d3", "epsilon", "v1", "v2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"GridParams.{name} must be positive, got {value}")

    def to_dict(self) -> dict:
        return asdict(self)


class EnergyModel(Protocol):
    """Gradient-structured dynamics du/dt = A grad(Phi)(u)."""

    def energy(self, u: np.ndarray) -> np.ndarray: ...

    def gradient(self, u: np.ndarray) -> np.ndarray: ...

    @property
    def structure_matrix(self) -> np.ndarray: ...


def _check_domain(u: np.ndarray) -> None:
    v3 = u[..., 4]
    if np.any(~(v3 > 0)):
        raise DomainError("V3 must be strictly positive")


def energy(u, p: GridParams):
    """Energy function of the 3-bus system (line-failure term omitted)."""
    u = np.asarray(u, dtype=np.float64)
    _check_domain(u)
    w1, w2, a2, a3, v3 = np.moveaxis(u, -1, 0)
    return (
        0.5 * p.m1 * w1**2
        + 0.5 * p.m2 * w2**2
        + 0.5 * (p.b1 + p.b2) * p.v1**2
        + 0.5 * (p.b1 + p.b3) * p.v2**2
        + 0.5 * (p.b2 + p.b3) * v3**2
        - p.b1 * p.v1 * p.v2 * np.cos(a2)
        - p.b2 * p.v1 * v3 * np.cos(a3)
        - p.b3 * p.v2 * v3 * np.cos(a3 - a2)
        + p.p2 * a2
        + p.p3 * a3
        + p.q3 * np.log(v3)
    )


def gradient(u, p: GridParams) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    _check_domain(u)
    w1, w2, a2, a3, v3 = np.moveaxis(u, -1, 0)
    out = np.empty(u.shape)
    out[..., 0] = p.m1 * w1
    out[..., 1] = p.m2 * w2
    out[..., 2] = p.b1 * p.v1 * p.v2 * np.sin(a2) + p.b3 * p.v2 * v3 * np.sin(a2 - a3) + p.p2
    out[..., 3] = p.b2 * p.v1 * v3 * np.sin(a3) + p.b3 * p.v2 * v3 * np.sin(a3 - a2) + p.p3
    out[..., 4] = (
        (p.b2 + p.b3) * v3
        - p.b2 * p.v1 * np.cos(a3)
        - p.b3 * p.v2 * np.cos(a3 - a2)
        + p.q3 / v3
    )
    return out


def hessian(u, p: GridParams) -> np.ndarray:
    """Second derivatives of the energy, shape ``(..., 5, 5)``."""
    u = np.asarray(u, dtype=np.float64)
    _check_domain(u)
    _, _, a2, a3, v3 = np.moveaxis(u, -1, 0)
    h = np.zeros(u.shape + (N_STATE,))
    c23 = np.cos(a2 - a3)
    s23 = np.sin(a2 - a3)
    h[..., 0, 0] = p.m1
    h[..., 1, 1] = p.m2
    h[..., 2, 2] = p.b1 * p.v1 * p.v2 * np.cos(a2) + p.b3 * p.v2 * v3 * c23
    h[..., 2, 3] = h[..., 3, 2] = -p.b3 * p.v2 * v3 * c23
    h[..., 2, 4] = h[..., 4, 2] = p.b3 * p.v2 * s23
    h[..., 3, 3] = p.b2 * p.v1 * v3 * np.cos(a3) + p.b3 * p.v2 * v3 * c23
    h[..., 3, 4] = h[..., 4, 3] = p.b2 * p.v1 * np.sin(a3) - p.b3 * p.v2 * s23
    h[..., 4, 4] = (p.b2 + p.b3) - p.q3 / v3**2
    return h


def hessian_vector(u, v, p: GridParams) -> np.ndarray:
    """hessian(u) @ v without forming the matrices."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _, _, a2, a3, v3 = np.moveaxis(u, -1, 0)
    c23 = p.b3 * p.v2 * np.cos(a2 - a3)
    s23 = p.b3 * p.v2 * np.sin(a2 - a3)
    h22 = p.b1 * p.v1 * p.v2 * np.cos(a2) + c23 * v3
    h23 = -c23 * v3
    h33 = p.b2 * p.v1 * v3 * np.cos(a3) + c23 * v3
    h34 = p.b2 * p.v1 * np.sin(a3) - s23
    h44 = (p.b2 + p.b3) - p.q3 / v3**2
    x2, x3, x4 = v[..., 2], v[..., 3], v[..., 4]
    out = np.empty(np.broadcast_shapes(u.shape, v.shape))
    out[..., 0] = p.m1 * v[..., 0]
    out[..., 1] = p.m2 * v[..., 1]
    out[..., 2] = h22 * x2 + h23 * x3 + s23 * x4
    out[..., 3] = h23 * x2 + h33 * x3 + h34 * x4
    out[..., 4] = s23 * x2 + h34 * x3 + h44 * x4
    return out


def assemble_matrix_a(p: GridParams) -> np.ndarray:
    a = np.zeros((N_STATE, N_STATE))
    a[0, 0] = -p.d1 / p.m1**2
    a[0, 2] = 1.0 / p.m1
    a[0, 3] = 1.0 / p.m1
    a[1, 1] = -p.d2 / p.m2**2
    a[1, 2] = -1.0 / p.m2
    a[2, 0] = -1.0 / p.m1
    a[2, 1] = 1.0 / p.m2
    a[3, 0] = -1.0 / p.m1
    a[3, 3] = -1.0 / p.d3
    a[4, 4] = -1.0 / p.epsilon
    return a


def rhs(u, p: GridParams) -> np.ndarray:
    """Right-hand side written out term by term (R1..R5).

    Independent of :func:`assemble_matrix_a`; the product ``A @ gradient``
    is the cross-check.
    """
    g = gradient(u, p)
    inv_m1, inv_m2 = 1.0 / p.m1, 1.0 / p.m2
    out = np.empty(g.shape)
    out[..., 0] = -p.d1 * inv_m1**2 * g[..., 0] + inv_m1 * (g[..., 2] + g[..., 3])
    out[..., 1] = -p.d2 * inv_m2**2 * g[..., 1] - inv_m2 * g[..., 2]
    out[..., 2] = -inv_m1 * g[..., 0] + inv_m2 * g[..., 1]
    out[..., 3] = -inv_m1 * g[..., 0] - g[..., 3] / p.d3
    out[..., 4] = -g[..., 4] / p.epsilon
    return out


def jacobian(u, p: GridParams) -> np.ndarray:
    """d rhs / du = A @ hessian(u), shape ``(..., 5, 5)``."""
    return assemble_matrix_a(p) @ hessian(u, p)


def dissipation_rate(u, p: GridParams):
    g = gradient(u, p)
    a = assemble_matrix_a(p)
    return np.einsum("...i,ij,...j->...", g, a, g)


def fixed_point_residual(u, p: GridParams):
    return np.linalg.norm(gradient(u, p), axis=-1)


@dataclass
class DeMarco3Bus:
    """Concrete :class:`EnergyModel` for the 3-bus grid."""

    params: GridParams = field(default_factory=GridParams)

    def energy(self, u):
        return energy(u, self.params)

    def gradient(self, u):
        return gradient(u, self.params)

    @property
    def structure_matrix(self) -> np.ndarray:
        return assemble_matrix_a(self.params)

    def rhs(self, u):
        return rhs(u, self.params)


@dataclass
class Trajectory:
    """Uniformly sampled time series of a state vector."""

    dt: float
    times: np.ndarray
    states: np.ndarray
    labels: tuple[str, ...] = STATE_LABELS

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have the same length")
        if self.states.shape[1] != len(self.labels):
            raise ValueError("label count does not match state dimension")

    def __len__(self) -> int:
        return len(self.times)

    def column(self, label: str) -> np.ndarray:
        return self.states[:, self.labels.index(label)]

    def every(self, stride: int) -> "Trajectory":
        return Trajectory(self.dt * stride, self.times[::stride], self.states[::stride], self.labels)


def step_euler(u, dt: float, p: GridParams, t: float = 0.0) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=np.float64)
    new = u + dt * rhs(u, p)
    if np.any(~(new[..., 4] > 0)) or not np.all(np.isfinite(new)):
        raise IntegrationError("V3 left the positive half-line", t + dt)
    return new


def n_steps(t_end: float, dt: float) -> int:
    # tolerant floor so that t_end/dt = 40000.000000001 does not drop a step
    return int(np.floor(t_end / dt + 1e-9))


def simulate_full(u0, dt: float, t_end: float = 2.0, p: GridParams | None = None) -> Trajectory:
    """Forward Euler run of the full model; returns floor(t_end/dt)+1 samples."""
    p = p or GridParams()
    if dt <= 0 or t_end < 0:
        raise ValueError("dt must be positive and t_end non-negative")
    u = np.asarray(u0, dtype=np.float64)
    _check_domain(u)
    n = n_steps(t_end, dt)
    states = np.empty((n + 1, N_STATE))
    states[0] = u
    for k in range(n):
        u = step_euler(u, dt, p, t=k * dt)
        states[k + 1] = u
    return Trajectory(dt, dt * np.arange(n + 1), states)
