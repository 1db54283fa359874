"""Reduced model for (omega1, omega2, alpha2) with a precomputed memory term.

    d u_hat/dt = R_hat(u_hat) + M(t) h(u_hat0)

``M`` comes from :class:`mzgrid.kernel.KernelTables`; since the forcing only
depends on the initial resolved state, neither scheme needs a nonlinear
solve.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import GridParams, Trajectory, n_steps, rhs
from .kernel import KernelTables
from .projection import Partition

RESOLVED_LABELS = ("omega1", "omega2", "alpha2")
MEMORY_MODES = ("infinite", "finite", "none")
SCHEMES = ("explicit", "implicit")


@dataclass(frozen=True)
class ReducedConfig:
    dt: float = 5e-5
    t_end: float = 2.0
    memory_mode: str = "infinite"
    t_memory: float | None = None
    scheme: str = "explicit"
    basis_order: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.t_end < 0:
            raise ValueError("dt must be positive and t_end non-negative")
        if self.memory_mode not in MEMORY_MODES:
            raise ValueError(f"memory_mode must be one of {MEMORY_MODES}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.memory_mode == "finite" and (self.t_memory is None or self.t_memory < 0):
            raise ValueError("finite memory needs a non-negative t_memory")

    @property
    def memory_length(self) -> float | None:
        return self.t_memory if self.memory_mode == "finite" else None


def markovian_rhs(u_hat, p: GridParams, part: Partition) -> np.ndarray:
    """Resolved rhs with the unresolved variables frozen at the anchor."""
    u_hat = np.asarray(u_hat, dtype=np.float64)
    return rhs(part.lift(u_hat), p)[..., list(part.resolved_indices)]


def _sample(table: np.ndarray, t: float, dt_k: float) -> np.ndarray:
    x = t / dt_k
    k = int(round(x))
    if abs(x - k) < 1e-9:
        return table[k]
    # off-grid: linear interpolation between kernel samples
    k = int(np.floor(x))
    w = x - k
    return (1.0 - w) * table[k] + w * table[k + 1]


def memory_forcing(t: float, tables: KernelTables, h0, mode: str = "infinite",
                   t_memory: float | None = None) -> np.ndarray:
    """M(t) h0 for the chosen memory mode; zero when mode is ``"none"``."""
    n_res = tables.memory_matrix.shape[1]
    if t > tables.horizon + 1e-9 * max(1.0, tables.horizon):
        raise ValueError(f"t={t} is beyond the kernel horizon {tables.horizon}; tables are not extrapolated")
    if mode == "none":
        return np.zeros(n_res)
    if mode not in ("infinite", "finite"):
        raise ValueError(f"unknown memory mode {mode!r}")
    table = tables.memory(t_memory if mode == "finite" else None)
    return _sample(table, min(t, tables.horizon), tables.dt_k) @ np.asarray(h0)


@dataclass
class ReducedRun:
    trajectory: Trajectory
    memory: np.ndarray  # forcing applied at each step, (n_t, 3)


def _forcing_series(cfg: ReducedConfig, tables: KernelTables, h0: np.ndarray, n: int) -> np.ndarray:
    """Forcing at t_0..t_n (entry k is M(t_k) h0)."""
    out = np.zeros((n + 1, tables.memory_matrix.shape[1]))
    if cfg.memory_mode == "none":
        return out
    needed = n * cfg.dt
    if needed > tables.horizon + 1e-9 * max(1.0, tables.horizon):
        raise ValueError(f"kernel horizon {tables.horizon} does not cover t_end={needed}")
    table = tables.memory(cfg.memory_length)
    ratio = cfg.dt / tables.dt_k
    if abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1:
        stride = int(round(ratio))
        out[:] = table[: stride * n + 1: stride] @ h0
    else:
        for k in range(n + 1):
            out[k] = _sample(table, min(k * cfg.dt, tables.horizon), tables.dt_k) @ h0
    return out


def step_reduced_explicit(u_hat, n: int, cfg: ReducedConfig, forcing: np.ndarray,
                          p: GridParams, part: Partition) -> np.ndarray:
    """Forward Euler with the memory convolution evaluated at t_n."""
    return u_hat + cfg.dt * (markovian_rhs(u_hat, p, part) + forcing[n])


def step_reduced_implicit(u_hat, n: int, cfg: ReducedConfig, forcing: np.ndarray,
                          p: GridParams, part: Partition) -> np.ndarray:
    """Markovian term at t_n, memory convolution at t_{n+1}."""
    return u_hat + cfg.dt * (markovian_rhs(u_hat, p, part) + forcing[n + 1])


def simulate_reduced(u_hat0, cfg: ReducedConfig, tables: KernelTables,
                     p: GridParams | None = None, part: Partition | None = None) -> ReducedRun:
    p = p or tables.params
    part = part or tables.partition
    u = np.asarray(u_hat0, dtype=np.float64)
    h0 = tables.basis.evaluate(u)
    n = n_steps(cfg.t_end, cfg.dt)
    forcing = _forcing_series(cfg, tables, h0, n)
    step = step_reduced_explicit if cfg.scheme == "explicit" else step_reduced_implicit
    states = np.empty((n + 1, len(u)))
    applied = np.zeros((n + 1, len(u)))
    states[0] = u
    for k in range(n):
        u = step(u, k, cfg, forcing, p, part)
        states[k + 1] = u
        applied[k] = forcing[k] if cfg.scheme == "explicit" else forcing[k + 1]
    applied[n] = forcing[n]
    traj = Trajectory(cfg.dt, cfg.dt * np.arange(n + 1), states, RESOLVED_LABELS)
    return ReducedRun(traj, applied)


def memory_forcing_double_sum(n: int, tables: KernelTables, h0, dt: float, implicit: bool = False) -> np.ndarray:
    """Memory increment written as the double trapezoid sum of the two schemes.

    Returns the term added to u_hat(t_{n+1}), i.e. ``dt^2/2 * sum(...)``.
    Only for kernel sampling equal to ``dt``; O(n) per call.
    """
    b, gamma = tables.b, tables.gamma
    m = n + 1 if implicit else n
    total = np.zeros(b.shape[1:2] + gamma.shape[2:])
    for i in range(m):
        total += b[i] @ gamma[m - i] + b[i + 1] @ gamma[m - i - 1]
    return 0.5 * dt * dt * total @ np.asarray(h0)


@dataclass
class ErrorReport:
    rel_l2: dict
    sup: dict
    bounded: bool

    def as_dict(self) -> dict:
        return {"rel_l2": self.rel_l2, "sup": self.sup, "bounded": self.bounded}


def _align(a: Trajectory, b: Trajectory, resample: bool) -> tuple[np.ndarray, np.ndarray]:
    if np.isclose(a.dt, b.dt, rtol=1e-12):
        n = min(len(a), len(b))
        if not resample and len(a) != len(b):
            raise ValueError("trajectories have different lengths")
        return np.arange(n), np.arange(n)
    if not resample:
        raise ValueError(f"incompatible grids dt={a.dt} vs dt={b.dt}; pass resample=True")
    coarse, fine = (a, b) if a.dt > b.dt else (b, a)
    ratio = coarse.dt / fine.dt
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("resampling requires an integer ratio of timesteps")
    stride = int(round(ratio))
    n = min(len(coarse), (len(fine) - 1) // stride + 1)
    ic, i_f = np.arange(n), stride * np.arange(n)
    return (ic, i_f) if coarse is a else (i_f, ic)


def compare_trajectories(a: Trajectory, b: Trajectory, labels=None, resample: bool = False,
                         bound_factor: float = 10.0) -> ErrorReport:
    """Errors of ``b`` against the reference ``a`` per variable.

    ``bounded`` is true when b stays finite and within ``bound_factor``
    times the reference amplitude for every compared variable.
    """
    labels = labels or [lab for lab in b.labels if lab in a.labels]
    ia, ib = _align(a, b, resample)
    rel, sup, bounded = {}, {}, True
    for lab in labels:
        x, y = a.column(lab)[ia], b.column(lab)[ib]
        diff = y - x
        norm = np.linalg.norm(x)
        rel[lab] = float(np.linalg.norm(diff) / norm) if norm > 0 else float(np.linalg.norm(diff))
        sup[lab] = float(np.max(np.abs(diff)))
        amp = np.max(np.abs(x))
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > bound_factor * max(amp, 1e-300):
            bounded = False
    return ErrorReport(rel, sup, bounded)
