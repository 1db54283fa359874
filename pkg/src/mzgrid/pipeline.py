"""Orchestration: full run, kernel, reduced runs, comparison and reports.

Every stage runs inside :func:`stage`, which re-raises failures as
:class:`StageError` tagged with the stage name.  Artifacts written by earlier
stages are left on disk.
"""
from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig
from .dynamics import Trajectory, simulate_full
from .heatbath import BathParams, FullBathState, simulate_full_bath, simulate_reduced_particle
from .kernel import KernelTables, build_kernel, kernel_diagnostics
from .projection import HermiteBasis, Partition, build_quadrature
from .reduced import RESOLVED_LABELS, ReducedConfig, ReducedRun, compare_trajectories, simulate_reduced

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def output_dir(cfg: RunConfig, override=None) -> Path:
    out = Path(override or cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def kernel_path(cfg: RunConfig, out: Path | None = None) -> Path:
    path = Path(cfg.paths.kernel)
    if path.is_absolute() or out is None:
        return path
    return out / path


def partition_for(cfg: RunConfig) -> Partition:
    return Partition(unresolved_anchor=tuple(cfg.projection.anchor))


def basis_for(cfg: RunConfig) -> HermiteBasis:
    pc = cfg.projection
    return HermiteBasis.around(cfg.initial_state[:3], pc.order, pc.variance, pc.convention)


def run_full(cfg: RunConfig) -> Trajectory:
    ic = cfg.integration
    return simulate_full(cfg.initial_state, ic.dt, ic.t_end, cfg.grid)


def make_kernel(cfg: RunConfig) -> KernelTables:
    basis = basis_for(cfg)
    rule = build_quadrature(basis, cfg.projection.sparse_level, cfg.projection.quadrature)
    ic = cfg.integration
    return build_kernel(cfg.initial_state[:3], basis, rule, partition_for(cfg), ic.dt,
                        cfg.kernel_horizon, ic.kernel_stride, cfg.grid)


def load_or_build_kernel(cfg: RunConfig, path: Path, rebuild: bool = False) -> KernelTables:
    """Reuse a bundle at ``path`` when its config hash matches, else build and save."""
    if path.exists() and not rebuild:
        header = io.read_kernel_header(path)
        if header.get("config_hash") == cfg.kernel_hash():
            log.info("reusing kernel bundle %s", path)
            return io.load_kernel(path, cfg.kernel_hash())
        log.info("kernel bundle %s is stale, rebuilding", path)
    tables = make_kernel(cfg)
    io.save_kernel(path, tables, cfg.kernel_hash())
    return tables


def run_reduced(cfg: RunConfig, tables: KernelTables, memory_mode: str | None = None,
                t_memory: float | None = None, scheme: str | None = None) -> ReducedRun:
    ic = cfg.integration
    mode = memory_mode or ic.memory_mode
    rc = ReducedConfig(ic.dt, ic.t_end, mode, t_memory if t_memory is not None else ic.t_memory,
                       scheme or ic.scheme, tables.basis.order)
    return simulate_reduced(cfg.initial_state[:3], rc, tables, cfg.grid, tables.partition)


def _run_name(mode: str, t_memory: float | None = None, order: int | None = None) -> str:
    name = "reduced_" + (f"tm{t_memory:g}" if mode == "finite" else mode)
    return name if order is None else f"{name}_p{order}"


def _error_row(full: Trajectory, run: Trajectory) -> dict:
    rep = compare_trajectories(full, run, list(RESOLVED_LABELS))
    return rep.as_dict()


def _write_summary(out: Path, summary: dict, lines: list[str]) -> None:
    text = "\n".join(lines) + "\n\n" + json.dumps(summary, indent=2, sort_keys=True) + "\n"
    (out / "summary.txt").write_text(text)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _format_errors(errors: dict) -> list[str]:
    w = max(len("run"), *map(len, errors)) + 2
    lines = [f"{'run':<{w}}{'var':<8}{'rel_l2':>14}{'sup':>14}  bounded"]
    for name, row in errors.items():
        for lab in row["rel_l2"]:
            lines.append(f"{name:<{w}}{lab:<8}{row['rel_l2'][lab]:>14.6e}{row['sup'][lab]:>14.6e}  {row['bounded']}")
    return lines


def run_pipeline(cfg: RunConfig, out_dir=None, rebuild_kernel: bool = False) -> dict:
    """Run the experiment described by ``cfg`` and write its artifacts."""
    if cfg.model_type == "heat-bath":
        return run_heat_bath_pipeline(cfg, out_dir)
    out = output_dir(cfg, out_dir)
    ic = cfg.integration
    stride = ic.output_stride

    with stage("simulate-full"):
        full = run_full(cfg)
        io.write_trajectory(out / "full.csv", full.every(stride))

    with stage("build-kernel"):
        tables = load_or_build_kernel(cfg, kernel_path(cfg, out), rebuild_kernel)
        diag = kernel_diagnostics(tables)

    runs: dict[str, ReducedRun] = {}
    with stage("simulate-reduced"):
        plan = [("infinite", None), ("none", None)]
        plan += [("finite", tm) for tm in ic.memory_sweep]
        for mode, tm in plan:
            runs[_run_name(mode, tm)] = run_reduced(cfg, tables, mode, tm)
        if ic.scheme == "explicit" and not ic.memory_sweep:
            runs["reduced_infinite_implicit"] = run_reduced(cfg, tables, "infinite", scheme="implicit")
        for order in cfg.projection.order_sweep:
            if order != tables.basis.order:
                runs[_run_name("infinite", order=order)] = run_reduced(cfg, tables.truncate(order), "infinite")
        for name, run in runs.items():
            io.write_reduced(out / f"{name}.csv", run.trajectory, run.memory, stride)

    with stage("compare"):
        errors = {name: _error_row(full, run.trajectory) for name, run in runs.items()}
        sub = {"full": full.every(stride)}
        sub.update({name: run.trajectory.every(stride) for name, run in runs.items()})
        figures = {"fig_memory": ["full", "reduced_infinite", "reduced_none"]}
        if ic.memory_sweep:
            figures["fig_memory_sweep"] = ["full", "reduced_none"] + [
                _run_name("finite", tm) for tm in ic.memory_sweep] + ["reduced_infinite"]
        if cfg.projection.order_sweep:
            figures["fig_order_sweep"] = ["full"] + [
                "reduced_infinite" if q == tables.basis.order else _run_name("infinite", order=q)
                for q in cfg.projection.order_sweep]
        for fig, names in figures.items():
            io.emit_plot_data(out / f"{fig}.csv", {n: sub[n] for n in names}, labels=RESOLVED_LABELS)

    summary = {
        "model": "3bus",
        "config": cfg.source,
        "kernel": {"path": cfg.paths.kernel, "config_hash": cfg.kernel_hash(),
                   "n_basis": tables.basis.size, "dt_k": tables.dt_k, "horizon": tables.horizon,
                   "plateaus_b1": diag},
        "errors": errors,
        "bounded": {name: row["bounded"] for name, row in errors.items()},
        "figures": sorted(f"{fig}.csv" for fig in figures),
    }
    lines = [f"3-bus reduced model, dt={ic.dt:g}, t_end={ic.t_end:g}, basis order {tables.basis.order} "
             f"({tables.basis.size} functions), {tables.n_nodes} nodes", ""]
    lines += _format_errors(errors)
    lines += ["", "late-time b_1 plateaus: " + ", ".join(
        f"{k}={v:.6g}" for k, v in diag.items() if k not in ("window_start", "horizon"))]
    _write_summary(out, summary, lines)
    return summary


def running_sup_error(a: Trajectory, b: Trajectory, label: str) -> np.ndarray:
    """max_{s <= t} |a(s) - b(s)| at every sample t."""
    return np.maximum.accumulate(np.abs(a.column(label) - b.column(label)))


def bath_setup(cfg: RunConfig) -> tuple[BathParams, FullBathState]:
    bc = cfg.bath
    bp = BathParams.default(bc.n_osc)
    bp = BathParams(bp.gammas, bp.omegas, bc.mass)
    s0 = FullBathState(bc.x0, bc.p0, np.full(bc.n_osc, bc.q0), np.full(bc.n_osc, bc.pq0))
    return bp, s0


def run_heat_bath_reduced(cfg: RunConfig, t_memory: float | None = None) -> Trajectory:
    bp, s0 = bath_setup(cfg)
    ic = cfg.integration
    return simulate_reduced_particle(s0.x, s0.p, bp, ic.dt, ic.t_end, t_memory, s0)


def run_heat_bath_pipeline(cfg: RunConfig, out_dir=None) -> dict:
    """Full bath versus reduced particle for no/finite/infinite memory."""
    out = output_dir(cfg, out_dir)
    ic = cfg.integration
    stride = ic.output_stride
    bp, s0 = bath_setup(cfg)

    with stage("heat-bath-full"):
        full = simulate_full_bath(s0, bp, ic.dt, ic.t_end)
        io.write_trajectory(out / "bath_full.csv", full.every(stride))

    runs: dict[str, Trajectory] = {}
    with stage("heat-bath-reduced"):
        runs["reduced_infinite"] = run_heat_bath_reduced(cfg, None)
        runs["reduced_none"] = run_heat_bath_reduced(cfg, 0.0)
        for tm in ic.memory_sweep:
            runs[f"reduced_tm{tm:g}"] = run_heat_bath_reduced(cfg, tm)
        for name, tr in runs.items():
            io.write_trajectory(out / f"bath_{name}.csv", tr.every(stride))

    with stage("compare"):
        particle = Trajectory(full.dt, full.times, full.states[:, :2], ("x", "p"))
        errors = {}
        for name, tr in runs.items():
            row = {}
            for lab in ("x", "p"):
                err = running_sup_error(particle, tr, lab)
                row[lab] = {"sup": float(err[-1])}
                for tm in ic.memory_sweep:
                    for t in (tm, tm + 2.0):
                        k = int(round(t / ic.dt))
                        if k < len(err):
                            row[lab][f"sup_to_t{t:g}"] = float(err[k])
            errors[name] = row
        sub = {"full": particle.every(stride)}
        sub.update({name: tr.every(stride) for name, tr in runs.items()})
        io.emit_plot_data(out / "fig_heat_bath.csv", sub)

    summary = {
        "model": "heat-bath",
        "config": cfg.source,
        "bath": asdict(cfg.bath),
        "dt": ic.dt,
        "t_end": ic.t_end,
        "errors": errors,
        "figures": ["fig_heat_bath.csv"],
    }
    lines = [f"heat bath, {bp.n_osc} oscillators, dt={ic.dt:g}, t_end={ic.t_end:g}", "",
             f"{'run':<20}{'sup|dx|':>14}{'sup|dp|':>14}"]
    for name, row in errors.items():
        lines.append(f"{name:<20}{row['x']['sup']:>14.6e}{row['p']['sup']:>14.6e}")
    _write_summary(out, summary, lines)
    return summary
