"""CSV output and the kernel bundle format.

Kernel bundle layout (``.npz``, format version 1):

``header``
    JSON string: format, version, dt_k, horizon, n_basis, order,
    index_set (graded lexicographic), convention, means, stds, anchor,
    resolved/unresolved indices, grid params, n_nodes, config_hash.
``f``, ``g``, ``gamma``, ``b``, ``memory_matrix``
    float64 arrays, time-major (row k is t = k * dt_k).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dynamics import GridParams, Trajectory
from .kernel import KernelTables
from .projection import HermiteBasis, Partition, QuadratureRule

BUNDLE_FORMAT = "mzgrid-kernel"
BUNDLE_VERSION = 1
_FMT = "%.16e"
_TABLES = ("f", "g", "gamma", "b", "memory_matrix")


class BundleError(ValueError):
    pass


def write_csv(path, columns: dict) -> Path:
    """Write equal-length columns with a header line, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=np.float64) for n in names])
    np.savetxt(path, data, fmt=_FMT, delimiter=",", header=",".join(names), comments="")
    return path


def read_csv(path) -> dict:
    path = Path(path)
    with path.open() as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {n: data[:, i] for i, n in enumerate(names)}


def write_trajectory(path, traj: Trajectory, extra: dict | None = None) -> Path:
    cols = {"t": traj.times}
    cols.update({lab: traj.states[:, i] for i, lab in enumerate(traj.labels)})
    if extra:
        cols.update(extra)
    return write_csv(path, cols)


def read_trajectory(path, labels=None) -> Trajectory:
    cols = read_csv(path)
    times = cols.pop("t")
    labels = tuple(labels or cols)
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
    return Trajectory(dt, times, np.column_stack([cols[lab] for lab in labels]), labels)


def write_reduced(path, traj: Trajectory, memory: np.ndarray, stride: int = 10) -> Path:
    """Reduced-run CSV: ``t,omega1,omega2,alpha2,mem1,mem2,mem3``."""
    sub = traj.every(stride)
    mem = np.asarray(memory)[::stride]
    return write_trajectory(path, sub, {f"mem{j + 1}": mem[:, j] for j in range(mem.shape[1])})


def export_quadrature(path, rule: QuadratureRule, names=("omega1", "omega2", "alpha2")) -> Path:
    cols = {n: rule.nodes[:, i] for i, n in enumerate(names[: rule.nodes.shape[1]])}
    cols["weight"] = rule.weights
    return write_csv(path, cols)


def emit_plot_data(path, runs: dict, labels=None, resample: bool = False) -> Path:
    """Wide CSV with ``t`` then one column per (run, variable), named ``run:var``."""
    if not runs:
        raise ValueError("no trajectories to emit")
    items = list(runs.items())
    ref = min((tr for _, tr in items), key=lambda tr: (-tr.dt, len(tr)))
    cols = {}
    for name, tr in items:
        if np.isclose(tr.dt, ref.dt, rtol=1e-12):
            idx = np.arange(len(ref))
        else:
            ratio = ref.dt / tr.dt
            if not resample or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"run {name!r} has dt={tr.dt}, incompatible with dt={ref.dt}")
            idx = int(round(ratio)) * np.arange(len(ref))
        if idx[-1] >= len(tr):
            raise ValueError(f"run {name!r} is shorter than the reference grid")
        for lab in labels or tr.labels:
            if lab in tr.labels:
                cols[f"{name}:{lab}"] = tr.column(lab)[idx]
    return write_csv(path, {"t": ref.times, **cols})


def save_kernel(path, tables: KernelTables, config_hash: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    basis = tables.basis
    header = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "dt_k": tables.dt_k,
        "horizon": tables.horizon,
        "n_basis": basis.size,
        "order": basis.order,
        "enumeration": "graded-lexicographic",
        "index_set": [list(nu) for nu in basis.index_set],
        "convention": basis.convention,
        "means": list(basis.means),
        "stds": list(basis.stds),
        "anchor": list(tables.partition.unresolved_anchor),
        "resolved_indices": list(tables.partition.resolved_indices),
        "unresolved_indices": list(tables.partition.unresolved_indices),
        "params": tables.params.to_dict(),
        "n_nodes": tables.n_nodes,
        "config_hash": config_hash,
    }
    arrays = {name: getattr(tables, name) for name in _TABLES}
    with path.open("wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)
    return path


def read_kernel_header(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        return json.loads(str(data["header"]))


def load_kernel(path, expected_hash: str | None = None) -> KernelTables:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        arrays = {name: np.array(data[name]) for name in _TABLES}
    if header.get("format") != BUNDLE_FORMAT:
        raise BundleError(f"{path}: not a kernel bundle")
    if header.get("version") != BUNDLE_VERSION:
        raise BundleError(f"{path}: unsupported bundle version {header.get('version')}")
    if expected_hash is not None and header.get("config_hash") != expected_hash:
        raise BundleError(f"{path}: config hash mismatch (bundle {header.get('config_hash')[:12]}..., "
                          f"expected {expected_hash[:12]}...)")
    basis = HermiteBasis(len(header["means"]), header["order"], tuple(header["means"]),
                         tuple(header["stds"]), header["convention"])
    if [list(nu) for nu in basis.index_set] != header["index_set"]:
        raise BundleError(f"{path}: basis enumeration does not match this version")
    part = Partition(tuple(header["resolved_indices"]), tuple(header["unresolved_indices"]),
                     tuple(header["anchor"]))
    return KernelTables(header["dt_k"], header["horizon"], basis, partition=part,
                        params=GridParams(**header["params"]), n_nodes=header["n_nodes"], **arrays)
