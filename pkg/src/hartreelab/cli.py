"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure
(convergence, truncation, divergence or a failed self-test), 4 capacity error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import CapacityError, ConfigError, NumericalError, ParameterError, ShapeError
from .experiments import (
    _jsonable,
    coherent_rate_scan,
    fluctuation_suite,
    hartree_trajectory,
    nbody_distances,
    rate_scan,
    versions,
    write_rate_csv,
    write_summary_json,
)
from .hartree import energy, evolve, strichartz_norm, write_trajectory_csv

__all__ = ["main", "run", "build_parser"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CAPACITY = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hartreelab", description="Mean-field lattice laboratory")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file (defaults are used when omitted)")
    common.add_argument("--out", type=Path, default=Path("run"), help="output directory")
    common.add_argument("--threads", type=int, default=None, help="worker threads for scans")
    common.add_argument("--seed", type=int, default=None, help="seed for randomized checks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("hartree", "evolve the Hartree equation and write diagnostics"),
        ("nbody", "trace distance of one N-body evolution against Hartree"),
        ("rate", "1/N rate scan from product states"),
        ("coherent-rate", "1/N rate scan from coherent states"),
        ("fluctuation", "fluctuation-dynamics probes"),
        ("selftest", "run the invariant suite"),
        ("default-config", "print the default configuration"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
    changes = {}
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        changes["run_threads"] = args.threads
    if args.seed is not None:
        changes["run_seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _echo_header(cfg):
    return ["config " + json.dumps(_jsonable(cfg.echo()), sort_keys=True)]


def _cmd_hartree(cfg, out: Path) -> str:
    stride = cfg.hartree_stride
    n_steps = int(round(cfg.hartree_T / cfg.hartree_dt))
    if n_steps % stride:
        stride = 1
    traj = evolve(cfg.initial_state(), cfg.potential, cfg.hartree_dt, cfg.hartree_T, stride=stride)
    with open(out / "hartree.csv", "w", newline="") as fh:
        write_trajectory_csv(traj, cfg.potential, fh, _echo_header(cfg))
    e0 = energy(traj.field(0), cfg.potential)
    e1 = energy(traj.field(len(traj) - 1), cfg.potential)
    summary = {
        "config": cfg.echo(),
        "mass_drift": abs(traj.field(len(traj) - 1).mass - 1.0),
        "energy_drift": abs(e1 - e0),
        "strichartz_norm": strichartz_norm(traj),
        "versions": versions(),
    }
    _write_json(out / "summary.json", summary)
    return f"hartree: {len(traj)} samples to T={traj.T:g}, energy drift {summary['energy_drift']:.2e}"


def _cmd_nbody(cfg, out: Path) -> str:
    traj = hartree_trajectory(cfg, cfg.hartree_T)
    n_steps = len(traj) - 1
    stride = cfg.hartree_stride if n_steps % cfg.hartree_stride == 0 else 1
    times = [float(t) for t in traj.times[stride::stride]]
    D, basis = nbody_distances(traj, cfg.potential, cfg.nbody_N, times, cfg.fock_krylov_tol)
    with open(out / "nbody.csv", "w", newline="") as fh:
        for line in _echo_header(cfg):
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["N", "t", "D"])
        for t, d in zip(times, D):
            writer.writerow([cfg.nbody_N, repr(t), repr(float(d))])
    _write_json(out / "summary.json", {"config": cfg.echo(), "N": cfg.nbody_N,
                                      "sector_dim": basis.sector_dim(cfg.nbody_N),
                                      "max_D": float(np.max(D)) if len(D) else 0.0, "versions": versions()})
    return f"nbody: N={cfg.nbody_N}, {len(times)} times, max D {np.max(D) if len(D) else 0.0:.3e}"


def _cmd_rate(cfg, out: Path, coherent=False) -> str:
    report = coherent_rate_scan(cfg) if coherent else rate_scan(cfg)
    name = "coherent_rate" if coherent else "rate"
    with open(out / f"{name}.csv", "w", newline="") as fh:
        write_rate_csv(report, fh)
    with open(out / "summary.json", "w") as fh:
        write_summary_json(report, fh)
    slopes = ", ".join(
        f"t={t:g}: " + ("degenerate" if f.degenerate else f"{f.slope:.3f}") for t, f in zip(report.t_list, report.fits)
    )
    return f"{report.kind}: slopes {slopes}"


def _cmd_fluctuation(cfg, out: Path) -> str:
    report = fluctuation_suite(cfg)
    _write_json(out / "fluctuation.json", {**report.as_dict(), "versions": versions()})
    with open(out / "moments.csv", "w", newline="") as fh:
        for line in _echo_header(cfg):
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "N", "j", "t", "moment", "leakage"])
        for r in report.moments:
            writer.writerow([r["kind"], r["N"], r["j"], repr(r["t"]), repr(r["moment"]), repr(r["leakage"])])
    odd = max(r["odd_mass"] for r in report.parity)
    return (f"fluctuation: L3 slope {report.cubic_fit.slope:.6f}, field-difference slope "
            f"{report.field_fit.slope:.3f}, max odd mass {odd:.1e}")


def _cmd_selftest(cfg, out: Path) -> tuple[str, bool]:
    from .selftest import run_selftest

    results = run_selftest(cfg.run_seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    _write_json(out / "selftest.json", [r.__dict__ for r in results] if cfg.run_record_timing
                else [{k: v for k, v in r.__dict__.items() if k != "seconds"} for r in results])
    failed = [r.name for r in results if not r.passed]
    summary = "selftest: all groups passed" if not failed else f"selftest: failed {', '.join(failed)}"
    return summary, not failed


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = _config(args)
        if args.command == "default-config":
            from .config import DEFAULT_CONFIG_TEXT

            sys.stdout.write(DEFAULT_CONFIG_TEXT)
            return EXIT_OK
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        ok = True
        if args.command == "hartree":
            summary = _cmd_hartree(cfg, out)
        elif args.command == "nbody":
            summary = _cmd_nbody(cfg, out)
        elif args.command == "rate":
            summary = _cmd_rate(cfg, out)
        elif args.command == "coherent-rate":
            summary = _cmd_rate(cfg, out, coherent=True)
        elif args.command == "fluctuation":
            summary = _cmd_fluctuation(cfg, out)
        else:
            summary, ok = _cmd_selftest(cfg, out)
        print(summary)
        return EXIT_OK if ok else EXIT_NUMERICAL
    except (ConfigError, ParameterError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
