"""Command-line entry point ``mzgrid``.

Exit status is 0 on success, 2 for configuration errors and 1 when a
stage fails; diagnostics go to stderr prefixed with the stage name.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import io, pipeline
from .config import ConfigError, RunConfig, load_config
from .reduced import MEMORY_MODES, SCHEMES, compare_trajectories

log = logging.getLogger("mzgrid")


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    ic = cfg.integration
    over = {}
    for key in ("dt", "t_end", "scheme", "memory_mode", "t_memory", "kernel_stride"):
        value = getattr(args, key, None)
        if value is not None:
            over[key] = value
    if over:
        if over.get("t_memory") is not None and "memory_mode" not in over:
            over["memory_mode"] = "finite"
        ic = replace(ic, **over)
    proj = cfg.projection
    if getattr(args, "order", None) is not None:
        proj = replace(proj, order=args.order)
    if getattr(args, "convention", None) is not None:
        proj = replace(proj, convention=args.convention)
    return replace(cfg, integration=ic, projection=proj)


def _need_3bus(cfg: RunConfig, command: str) -> None:
    if cfg.model_type != "3bus":
        raise ConfigError(f"{command} needs a 3bus config, got model.type={cfg.model_type!r}")


def cmd_simulate_full(args) -> int:
    cfg = _config(args)
    _need_3bus(cfg, "simulate-full")
    with pipeline.stage("simulate-full"):
        traj = pipeline.run_full(cfg)
        out = Path(args.out or Path(cfg.paths.output_dir) / "full.csv")
        io.write_trajectory(out, traj if args.full_resolution else traj.every(cfg.integration.output_stride))
    print(out)
    return 0


def cmd_build_kernel(args) -> int:
    cfg = _config(args)
    _need_3bus(cfg, "build-kernel")
    out = Path(args.out) if args.out else pipeline.kernel_path(cfg, Path(cfg.paths.output_dir))
    with pipeline.stage("build-kernel"):
        if args.export_nodes:
            basis = pipeline.basis_for(cfg)
            rule = pipeline.build_quadrature(basis, cfg.projection.sparse_level, cfg.projection.quadrature)
            io.export_quadrature(args.export_nodes, rule)
        tables = pipeline.make_kernel(cfg)
        io.save_kernel(out, tables, cfg.kernel_hash())
    print(out)
    return 0


def cmd_simulate_reduced(args) -> int:
    cfg = _config(args)
    _need_3bus(cfg, "simulate-reduced")
    ic = cfg.integration
    path = Path(args.kernel) if args.kernel else pipeline.kernel_path(cfg, Path(cfg.paths.output_dir))
    with pipeline.stage("load-kernel"):
        tables = io.load_kernel(path, cfg.kernel_hash())
    with pipeline.stage("simulate-reduced"):
        run = pipeline.run_reduced(cfg, tables)
        name = pipeline._run_name(ic.memory_mode, ic.t_memory)
        out = Path(args.out or Path(cfg.paths.output_dir) / f"{name}.csv")
        io.write_reduced(out, run.trajectory, run.memory, 1 if args.full_resolution else ic.output_stride)
    print(out)
    return 0


def cmd_heat_bath(args) -> int:
    cfg = _config(args)
    if cfg.model_type != "heat-bath":
        raise ConfigError("heat-bath needs a heat-bath config")
    if args.t_memory is None and not args.full_only:
        summary = pipeline.run_heat_bath_pipeline(cfg, args.out_dir)
        print(json.dumps(summary["errors"], indent=2, sort_keys=True))
        return 0
    out = pipeline.output_dir(cfg, args.out_dir)
    stride = cfg.integration.output_stride
    with pipeline.stage("heat-bath"):
        if args.full_only:
            bp, s0 = pipeline.bath_setup(cfg)
            traj = pipeline.simulate_full_bath(s0, bp, cfg.integration.dt, cfg.integration.t_end)
            path = io.write_trajectory(out / "bath_full.csv", traj.every(stride))
        else:
            traj = pipeline.run_heat_bath_reduced(cfg, args.t_memory)
            path = io.write_trajectory(out / f"bath_reduced_tm{args.t_memory:g}.csv", traj.every(stride))
    print(path)
    return 0


def cmd_compare(args) -> int:
    with pipeline.stage("compare"):
        ref = io.read_trajectory(args.reference)
        cand = io.read_trajectory(args.candidate)
        labels = args.labels.split(",") if args.labels else None
        if labels is None:
            labels = [lab for lab in cand.labels if lab in ref.labels]
        report = compare_trajectories(ref, cand, labels, resample=args.resample)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    summary = pipeline.run_pipeline(cfg, args.out_dir, rebuild_kernel=args.rebuild_kernel)
    out = pipeline.output_dir(cfg, args.out_dir)
    print((out / "summary.txt").read_text(), end="")
    return 0 if all(summary.get("bounded", {}).values()) or not args.strict else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mzgrid", description="Mori-Zwanzig reduced models of a 3-bus grid")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_, config_required=True):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=config_required,
                       help="config file or bundled name (e.g. 3bus_default)")
        p.set_defaults(func=func)
        return p

    def integration_flags(p):
        p.add_argument("--dt", type=float)
        p.add_argument("--t-end", dest="t_end", type=float)

    p = add("simulate-full", cmd_simulate_full, "forward Euler run of the full model")
    integration_flags(p)
    p.add_argument("--out", help="CSV path (default <output_dir>/full.csv)")
    p.add_argument("--full-resolution", action="store_true", help="write every step")

    p = add("build-kernel", cmd_build_kernel, "ensemble, Volterra solve and memory tables")
    integration_flags(p)
    p.add_argument("--order", type=int, help="basis order p")
    p.add_argument("--convention", choices=("orthonormal", "physicists"))
    p.add_argument("--kernel-stride", dest="kernel_stride", type=int)
    p.add_argument("--out", help="kernel bundle path")
    p.add_argument("--export-nodes", help="also write the quadrature nodes to this CSV")

    p = add("simulate-reduced", cmd_simulate_reduced, "reduced model from a kernel bundle")
    integration_flags(p)
    p.add_argument("--order", type=int)
    p.add_argument("--convention", choices=("orthonormal", "physicists"))
    p.add_argument("--kernel-stride", dest="kernel_stride", type=int)
    p.add_argument("--kernel", help="kernel bundle path")
    p.add_argument("--memory-mode", dest="memory_mode", choices=MEMORY_MODES)
    p.add_argument("--t-memory", dest="t_memory", type=float)
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--out")
    p.add_argument("--full-resolution", action="store_true")

    p = add("heat-bath", cmd_heat_bath, "particle in a harmonic bath, full and reduced")
    integration_flags(p)
    p.add_argument("--t-memory", dest="t_memory", type=float,
                   help="single reduced run with this memory length (0 = memoryless)")
    p.add_argument("--full-only", action="store_true", help="only the full system")
    p.add_argument("--out-dir")

    p = add("compare", cmd_compare, "error table between two trajectory CSVs", config_required=False)
    p.add_argument("reference")
    p.add_argument("candidate")
    p.add_argument("--labels", help="comma-separated columns (default: shared columns)")
    p.add_argument("--resample", action="store_true", help="allow integer-ratio subsampling")

    p = add("pipeline", cmd_pipeline, "full -> kernel -> reduced -> compare with reports")
    integration_flags(p)
    p.add_argument("--out-dir")
    p.add_argument("--rebuild-kernel", action="store_true")
    p.add_argument("--strict", action="store_true", help="exit 1 if any reduced run is unbounded")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"[config] error: {exc}", file=sys.stderr)
        return 2
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"[{args.command}] error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
