"""Experiment drivers: rate scans, fluctuation probes, identity and convergence checks."""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy

from . import __version__
from .coherent import coherent_state, product_state, tail_rule_cutoff
from .config import ExperimentConfig
from .errors import CapacityError, LabError, ParameterError
from .fock import (
    FockState,
    OccupationBasis,
    apply_number_power,
    basis_size,
    boundary_mass,
    number_moment,
    parity_norms,
    vacuum,
)
from .generators import FluctuationOperators
from .hartree import HartreeTrajectory, evolve
from .krylov import expm_multiply_hermitian
from .observe import (
    DensityMatrix,
    FluctuationContext,
    E_pair,
    apply_field,
    direct_trace,
    reduced_density,
    trace_distance,
)
from .propagate import evolve_fluctuation

__all__ = [
    "DEGENERATE_FLOOR",
    "SlopeFit",
    "fit_loglog",
    "fit_envelope",
    "RateReport",
    "hartree_trajectory",
    "nbody_distances",
    "rate_scan",
    "coherent_rate_scan",
    "FluctuationReport",
    "fluctuation_suite",
    "ConvergenceReport",
    "convergence_order",
    "identity_check",
    "random_hermitian",
    "write_rate_csv",
    "write_summary_json",
    "versions",
]

DEGENERATE_FLOOR = 1e-14


@dataclass
class SlopeFit:
    """Least-squares line ``ln y = intercept + slope * ln x``."""

    slope: float
    intercept: float
    r2: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "degenerate": self.degenerate}


def _line_fit(x, y) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + slope * x)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def fit_loglog(x, y, floor: float = DEGENERATE_FLOOR) -> SlopeFit:
    """Fit ``ln y`` against ``ln x``.

    The fit is degenerate (slope reported as NaN) when fewer than three
    points are given or any ``y`` is at or below ``floor``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ParameterError("x and y must have the same length")
    if x.size < 3 or np.any(~np.isfinite(y)) or np.any(y <= floor):
        return SlopeFit(math.nan, math.nan, math.nan, degenerate=True)
    return SlopeFit(*_line_fit(np.log(x), np.log(y)))


def fit_envelope(t, values, power: float = 1.5) -> SlopeFit:
    """Fit ``ln(1 + running max of values)`` against ``t**power``.

    ``slope`` is the growth rate ``K`` of an envelope ``C exp(K t^power)``.
    """
    t = np.asarray(t, dtype=float)
    env = np.log1p(np.maximum.accumulate(np.asarray(values, dtype=float)))
    if t.size < 3:
        return SlopeFit(math.nan, math.nan, math.nan, degenerate=True)
    return SlopeFit(*_line_fit(np.abs(t) ** power, env))


@dataclass
class RateReport:
    """Trace distances ``D[N][t]`` and per-time slope fits."""

    kind: str
    config: dict
    N_list: list
    t_list: list
    D: np.ndarray
    basis_dim: list
    leakage: list
    wall_seconds: list
    fits: list = field(default_factory=list)
    runtime: float = 0.0

    def rows(self):
        for i, N in enumerate(self.N_list):
            for k, t in enumerate(self.t_list):
                yield N, t, float(self.D[i, k]), self.basis_dim[i], self.leakage[i], self.wall_seconds[i]


def hartree_trajectory(cfg: ExperimentConfig, T: float, grid=None, dt: float | None = None) -> HartreeTrajectory:
    """Hartree solution of the configured initial state, stored at every step."""
    grid = grid or cfg.grid
    dt = cfg.hartree_dt if dt is None else dt
    return evolve(cfg.initial_state(grid), cfg.potential, dt, T)


def _sector_hamiltonian(ops: FluctuationOperators, N: int):
    s = ops.basis.sector_slice(N)
    return ops.hamiltonian(N)[s, s].tocsr(), s


def nbody_distances(traj: HartreeTrajectory, V, N: int, t_list, tol: float = 1e-10):
    """``Tr|gamma_{N,t} - |phi_t><phi_t||`` for the product initial state.

    The sector ``N`` block of ``H_N`` is propagated exactly with Lanczos;
    ``phi_t`` is read from ``traj``.  Returns ``(D, basis)``.
    """
    grid = traj.grid
    basis = OccupationBasis(grid.M, N)
    ops = FluctuationOperators(grid, V, basis, N)
    H, s = _sector_hamiltonian(ops, N)
    psi0 = product_state(traj.field(0), N, basis)
    vec = psi0.amplitudes[s]
    out, t_prev = [], 0.0
    for t in t_list:
        vec = expm_multiply_hermitian(H, vec, t - t_prev, tol=tol)
        t_prev = t
        full = np.zeros(basis.dim, dtype=complex)
        full[s] = vec
        gamma = reduced_density(FockState(basis, full))
        out.append(trace_distance(gamma, DensityMatrix.pure(traj.at(t))))
    return np.array(out), basis


def _run_parallel(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _labelled(N, fn):
    try:
        return fn()
    except LabError as exc:
        exc.args = (f"N={N}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
        raise


def rate_scan(cfg: ExperimentConfig, threads: int | None = None) -> RateReport:
    """Fixed-``N`` rate experiment: product state under ``H_N`` against Hartree."""
    start = time.perf_counter()
    t_list = list(cfg.scan_t_list)
    traj = hartree_trajectory(cfg, max(t_list, default=0.0))
    V = cfg.potential

    def one(N):
        def work():
            if basis_size(cfg.grid.M, N) > 5_000_000:
                raise CapacityError(f"basis for N={N} on {cfg.grid.M} sites is too large")
            t0 = time.perf_counter()
            D, basis = nbody_distances(traj, V, N, t_list, cfg.fock_krylov_tol)
            return D, basis.sector_dim(N), time.perf_counter() - t0

        return _labelled(N, work)

    results = _run_parallel(one, list(cfg.scan_N_list), threads or cfg.run_threads)
    return _finish_report("rate", cfg, t_list, results, [0.0] * len(results), start)


def _finish_report(kind, cfg, t_list, results, leakage, start):
    D = np.array([r[0] for r in results]).reshape(len(results), len(t_list))
    timing = cfg.run_record_timing
    report = RateReport(
        kind=kind,
        config=cfg.echo(),
        N_list=[int(n) for n in (cfg.scan_N_list if kind == "rate" else cfg.coherent_N_list)],
        t_list=[float(t) for t in t_list],
        D=D,
        basis_dim=[int(r[1]) for r in results],
        leakage=[float(x) for x in leakage],
        wall_seconds=[float(r[2]) if timing else 0.0 for r in results],
    )
    report.fits = [fit_loglog(report.N_list, D[:, k]) for k in range(len(t_list))]
    if cfg.potential.is_zero:
        # free flow: D is round-off only, so no rate can be read off
        report.fits = [SlopeFit(math.nan, math.nan, math.nan, degenerate=True) for _ in t_list]
    report.runtime = time.perf_counter() - start if timing else 0.0
    return report


def _coherent_cutoff(cfg: ExperimentConfig, N: int) -> int:
    rule = cfg.fock_N_cut_rule
    return tail_rule_cutoff(float(N)) if rule == "tail" else int(rule.split(":")[1])


def coherent_rate_scan(cfg: ExperimentConfig, threads: int | None = None) -> RateReport:
    """Rate experiment started from the coherent state ``W(sqrt(N) phi) Omega``.

    Runs on a grid with ``coherent.L`` sites per axis; the state lives on
    the whole truncated Fock space and is propagated with ``H_N``.
    """
    start = time.perf_counter()
    grid = cfg.grid.__class__(cfg.grid_d, cfg.coherent_L, cfg.grid_h)
    t_list = list(cfg.coherent_t_list)
    traj = hartree_trajectory(cfg, max(t_list, default=0.0), grid=grid)
    V = cfg.potential

    def one(N):
        def work():
            t0 = time.perf_counter()
            n_cut = _coherent_cutoff(cfg, N)
            if basis_size(grid.M, n_cut) > 5_000_000:
                raise CapacityError(f"basis for N_cut={n_cut} on {grid.M} sites is too large")
            basis = OccupationBasis(grid.M, n_cut)
            ops = FluctuationOperators(grid, V, basis, N)
            H = ops.hamiltonian(N)
            psi = coherent_state(np.sqrt(N) * traj.field(0).modes, basis)
            leak = psi.leakage
            D, t_prev, vec = [], 0.0, psi.amplitudes
            for t in t_list:
                # H_N preserves sectors, so truncation does not grow in time
                vec = expm_multiply_hermitian(H, vec, t - t_prev, tol=cfg.fock_krylov_tol)
                t_prev = t
                gamma = reduced_density(FockState(basis, vec))
                D.append(trace_distance(gamma, DensityMatrix.pure(traj.at(t))))
            return np.array(D), basis.dim, time.perf_counter() - t0, leak

        return _labelled(N, work)

    results = _run_parallel(one, list(cfg.coherent_N_list), threads or cfg.run_threads)
    return _finish_report("coherent-rate", cfg, t_list, results, [r[3] for r in results], start)


@dataclass
class FluctuationReport:
    """Tables produced by :func:`fluctuation_suite`; each is a list of dict rows."""

    config: dict
    moments: list = field(default_factory=list)
    envelopes: list = field(default_factory=list)
    parity: list = field(default_factory=list)
    cubic: list = field(default_factory=list)
    cubic_fit: SlopeFit | None = None
    field_difference: list = field(default_factory=list)
    field_fit: SlopeFit | None = None
    truncation: list = field(default_factory=list)

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["cubic_fit"] = self.cubic_fit.as_dict() if self.cubic_fit else None
        out["field_fit"] = self.field_fit.as_dict() if self.field_fit else None
        return out


def _random_low_state(basis: OccupationBasis, rng, max_sector: int) -> FockState:
    amps = np.zeros(basis.dim, dtype=complex)
    low = basis.totals <= max_sector
    amps[low] = rng.normal(size=low.sum()) + 1j * rng.normal(size=low.sum())
    return FockState(basis, amps / np.linalg.norm(amps))


def _chained(kind, traj, V, N, psi0, t_list, dt, ops, budget, M_cutoff=None):
    """``[(t, U(t;0) psi0)]`` for ascending ``t_list`` (``t = 0`` included)."""
    out, psi, t_prev = [(0.0, psi0)], psi0, 0.0
    for t in t_list:
        if t == 0:
            continue
        psi = evolve_fluctuation(kind, traj, V, N, psi, t_prev, t, dt, M_cutoff=M_cutoff,
                                 leakage_budget=budget, operators=ops)
        out.append((t, psi))
        t_prev = t
    return out


def field_difference(traj, V, N, basis, t, dt, j: int = 0, f=None, ops=None, budget=1e-8) -> float:
    """``||(N+1)^(j/2) (U^* phi(f) U - U_tilde^* phi(f) U_tilde) Omega||`` with ``f = phi_t`` by default."""
    ops = ops or FluctuationOperators(traj.grid, V, basis, N)
    f = traj.at(t).modes if f is None else f
    pulled = {}
    for kind in ("U", "U_tilde"):
        chi = evolve_fluctuation(kind, traj, V, N, vacuum(basis), 0.0, t, dt, leakage_budget=budget, operators=ops)
        chi = apply_field(f, chi)
        pulled[kind] = evolve_fluctuation(kind, traj, V, N, chi, t, 0.0, dt, leakage_budget=budget, operators=ops)
    diff = pulled["U"] - pulled["U_tilde"]
    return apply_number_power(diff, j / 2.0, shift=1.0).norm()


def fluctuation_suite(cfg: ExperimentConfig) -> FluctuationReport:
    """Number moments, parity, cubic-term and truncation probes of the fluctuation flows."""
    grid = cfg.grid.__class__(cfg.grid_d, cfg.fluctuation_L, cfg.grid_h)
    if grid.M > 6:
        raise CapacityError(f"fluctuation suite needs at most 6 sites, got {grid.M}")
    V = cfg.potential
    dt = cfg.fluctuation_dt
    t_list = sorted(cfg.fluctuation_t_list)
    traj = hartree_trajectory(cfg, max(t_list), grid=grid, dt=dt / 2)
    field_traj = hartree_trajectory(cfg, cfg.fluctuation_field_t, grid=grid, dt=cfg.fluctuation_field_dt / 2)
    budget = cfg.fluctuation_leakage_budget
    rng = np.random.default_rng(cfg.run_seed)
    report = FluctuationReport(config=cfg.echo())
    basis = OccupationBasis(grid.M, cfg.fluctuation_N_cut)

    # number moments under U and U_tilde from the vacuum
    for N in cfg.fluctuation_N_list:
        ops = FluctuationOperators(grid, V, basis, N)
        for kind in ("U", "U_tilde"):
            states = _chained(kind, traj, V, N, vacuum(basis), t_list, dt, ops, budget)
            for j in cfg.fluctuation_j_list:
                values = []
                for t, psi in states:
                    m = number_moment(j, psi)
                    values.append(m)
                    report.moments.append(
                        {"kind": kind, "N": N, "j": j, "t": t, "moment": m, "leakage": boundary_mass(psi)}
                    )
                power = 1.5 if kind == "U" else 1.0
                fit = fit_envelope([t for t, _ in states], values, power)
                report.envelopes.append({"kind": kind, "N": N, "j": j, "power": power, **fit.as_dict()})

    # parity under U_tilde
    pbasis = OccupationBasis(grid.M, cfg.fluctuation_parity_N_cut)
    pops = FluctuationOperators(grid, V, pbasis, cfg.fluctuation_N_list[0])
    for t, psi in _chained("U_tilde", traj, V, cfg.fluctuation_N_list[0], vacuum(pbasis), t_list, dt, pops, 1.0):
        p = parity_norms(psi)
        report.parity.append({"t": t, "even_mass": p["even"] ** 2, "odd_mass": p["odd"] ** 2,
                              "leakage": boundary_mass(psi)})

    # cubic term: ||(N+1)^{j/2} L3 psi|| relative to (||phi_t||_inf + 1) ||(N+1)^{(j+3)/2} psi|| / sqrt(N)
    probe = _random_low_state(basis, rng, 3)
    t_probe = t_list[len(t_list) // 2]
    u = traj.at(t_probe).modes
    sup = float(np.max(np.abs(traj.at(t_probe).values)))
    norms = []
    for N in cfg.fluctuation_N_list:
        ops = FluctuationOperators(grid, V, basis, N)
        L3psi = probe.with_amplitudes(ops.L3(u) @ probe.amplitudes)
        norms.append(L3psi.norm())
        for j in cfg.fluctuation_j_list:
            lhs = apply_number_power(L3psi, j / 2.0, shift=1.0).norm()
            rhs = (sup + 1.0) / np.sqrt(N) * apply_number_power(probe, (j + 3) / 2.0, shift=1.0).norm()
            report.cubic.append({"N": N, "j": j, "t": t_probe, "norm": lhs, "constant": float(lhs / rhs)})
    report.cubic_fit = fit_loglog(cfg.fluctuation_N_list, norms)

    # U versus U_tilde on the field operator
    fbasis = OccupationBasis(grid.M, cfg.fluctuation_field_N_cut)
    diffs = []
    for N in cfg.fluctuation_N_list:
        d = field_difference(field_traj, V, N, fbasis, cfg.fluctuation_field_t, cfg.fluctuation_field_dt)
        diffs.append(d)
        report.field_difference.append({"N": N, "t": cfg.fluctuation_field_t, "norm": d, "scaled": float(d * np.sqrt(N))})
    report.field_fit = fit_loglog(cfg.fluctuation_N_list, diffs)

    # U against the truncated flow U^(M)
    N = cfg.fluctuation_N_list[0]
    ops = FluctuationOperators(grid, V, basis, N)
    full = dict(_chained("U", traj, V, N, vacuum(basis), t_list, dt, ops, budget))
    n_cut = basis.N_cut
    for M_cut in sorted({0, n_cut // 4, n_cut}):
        trunc = dict(_chained("U_trunc", traj, V, N, vacuum(basis), t_list, dt, ops, budget, M_cutoff=M_cut))
        for t in t_list:
            a, b = full[t], trunc[t]
            overlap = a.inner(apply_number_power(a - b, 1.0))
            report.truncation.append({"M_cutoff": M_cut, "t": t, "overlap_difference": abs(overlap),
                                      "state_difference": (a - b).norm()})
    return report


@dataclass
class ConvergenceReport:
    """Trace distances at successively halved Hartree steps."""

    dt_list: list
    D: list
    differences: list
    ratios: list


def convergence_order(cfg: ExperimentConfig) -> ConvergenceReport:
    """Self-convergence of ``D(N, t)`` in the Hartree step.

    The many-body side is propagated exactly, so the differences
    ``|D(dt) - D(dt/2)|`` isolate the splitting error; for a second order
    scheme successive differences shrink by a factor close to 4.
    """
    dts = list(cfg.convergence_dt_list)
    if len(dts) < 3:
        raise ParameterError("convergence check needs at least three step sizes")
    t = cfg.convergence_t
    D = []
    for dt in dts:
        traj = hartree_trajectory(cfg, t, dt=dt)
        d, _ = nbody_distances(traj, cfg.potential, cfg.convergence_N, [t], cfg.fock_krylov_tol)
        D.append(float(d[0]))
    diffs = [abs(D[k] - D[k + 1]) for k in range(len(D) - 1)]
    ratios = [diffs[k] / diffs[k + 1] if diffs[k + 1] > 0 else math.inf for k in range(len(diffs) - 1)]
    return ConvergenceReport(dts, D, diffs, ratios)


def random_hermitian(M: int, rng) -> np.ndarray:
    A = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    return 0.5 * (A + A.conj().T)


def identity_check(cfg: ExperimentConfig, N: int, t: float, J_list, L: int | None = None,
                   N_cut: int = 24, dt: float = 0.002) -> list[dict]:
    """Compare ``Tr J (gamma_{N,t} - |phi_t><phi_t|)`` with ``E1 + E2`` for each ``J``.

    The left side propagates the product state with ``H_N``; the right side
    uses the fluctuation flow.  Both read ``phi_t`` from one trajectory.
    """
    grid = cfg.grid.__class__(cfg.grid_d, L or cfg.grid_L, cfg.grid_h)
    V = cfg.potential
    traj = hartree_trajectory(cfg, t, grid=grid, dt=dt / 2)
    basis = OccupationBasis(grid.M, N_cut)
    ctx = FluctuationContext(traj, V, N, basis, dt, tol=cfg.fock_krylov_tol, leakage_budget=cfg.fock_leakage_budget)
    H, s = _sector_hamiltonian(ctx.operators, N)
    psi = product_state(traj.field(0), N, basis)
    vec = np.zeros(basis.dim, dtype=complex)
    vec[s] = expm_multiply_hermitian(H, psi.amplitudes[s], t, tol=1e-12)
    gamma = reduced_density(FockState(basis, vec))
    rows = []
    for J in J_list:
        e1, e2 = E_pair(J, t, ctx)
        direct = direct_trace(J, gamma, traj.at(t))
        norm = float(np.linalg.norm(J, 2))
        rows.append({"direct": direct, "E1": e1, "E2": e2, "J_norm": norm,
                     "residual": abs(direct - e1 - e2) / norm})
    return rows


def versions() -> dict:
    return {"hartreelab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _echo_lines(config: dict):
    yield "config " + json.dumps(config, sort_keys=True)


def write_rate_csv(report: RateReport, stream) -> None:
    """One row per ``(N, t)``, preceded by ``#`` lines echoing the config."""
    for line in _echo_lines(report.config):
        stream.write(f"# {line}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["N", "t", "D", "basis_dim", "leakage", "wall_seconds"])
    for N, t, D, dim, leak, wall in report.rows():
        writer.writerow([N, repr(t), repr(D), dim, repr(leak), repr(wall)])


def write_summary_json(report: RateReport, stream) -> None:
    summary = {
        "kind": report.kind,
        "config": report.config,
        "N_list": report.N_list,
        "t_list": report.t_list,
        "fits": [{"t": t, **fit.as_dict()} for t, fit in zip(report.t_list, report.fits)],
        "runtime_seconds": report.runtime,
        "versions": versions(),
    }
    json.dump(_jsonable(summary), stream, indent=2, sort_keys=True)
    stream.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, SlopeFit):
        return _jsonable(obj.as_dict())
    return obj
