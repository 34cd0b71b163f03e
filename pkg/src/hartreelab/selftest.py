"""Fast invariant suite run by ``hartreelab selftest``.

Each group returns a :class:`CheckResult`; the groups use small instances
so that the whole suite finishes in well under a minute.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .coherent import apply_weyl, coherent_state, d_N, sector_norms_of_displaced_product
from .config import ExperimentConfig
from .fock import (
    FockState,
    OccupationBasis,
    annihilate,
    create,
    number_moment,
    parity_norms,
    second_quantization_matrix,
    vacuum,
)
from .generators import FluctuationOperators
from .hartree import energy, evolve
from .krylov import expm_multiply_hermitian
from .lattice import Grid, PotentialSpec, gaussian_packet
from .experiments import hartree_trajectory, nbody_distances
from .propagate import evolve_fluctuation

__all__ = ["CheckResult", "GROUPS", "run_selftest"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _random_state(basis, rng, max_sector=None):
    amps = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    if max_sector is not None:
        amps[basis.totals > max_sector] = 0
    return FockState(basis, amps / np.linalg.norm(amps))


def check_algebra(rng) -> tuple[bool, str]:
    basis = OccupationBasis(3, 6)
    worst = 0.0
    for _ in range(20):
        psi = _random_state(basis, rng, max_sector=basis.N_cut - 1)
        i, j = rng.integers(0, 3, size=2)
        a_i, c_j = basis.annihilator(i), basis.creator(j)
        comm = a_i @ (c_j @ psi.amplitudes) - c_j @ (a_i @ psi.amplitudes)
        worst = max(worst, np.linalg.norm(comm - (i == j) * psi.amplitudes))
        worst = max(worst, abs(basis.creator(i) - basis.annihilator(i).T).max())
    number = second_quantization_matrix(np.eye(3), basis)
    worst = max(worst, np.abs(number.diagonal() - basis.number_diagonal).max())
    return worst < 1e-9, f"max defect {worst:.1e}"


def check_bounds(rng) -> tuple[bool, str]:
    basis = OccupationBasis(3, 6)
    violations = 0
    for _ in range(50):
        psi = _random_state(basis, rng)
        f = rng.normal(size=3) + 1j * rng.normal(size=3)
        nf = np.linalg.norm(f)
        n_half = np.sqrt(number_moment(1, psi))
        n1_half = np.sqrt(number_moment(1, psi) + 1.0)
        violations += annihilate(f, psi).norm() > nf * n_half * (1 + 1e-12)
        violations += create(f, psi).norm() > nf * n1_half * (1 + 1e-12)
    return violations == 0, f"{violations} violations"


def check_poisson(rng) -> tuple[bool, str]:
    from .coherent import tail_rule_cutoff

    worst = 0.0
    for lam in (0.5, 2.0, 8.0):
        f = np.array([np.sqrt(lam)])
        basis = OccupationBasis(1, tail_rule_cutoff(lam))
        psi = coherent_state(f, basis)
        mean = number_moment(1, psi)
        var = number_moment(2, psi) - mean**2
        worst = max(worst, abs(mean - lam), abs(var - lam))
    return worst < 1e-8, f"max deviation {worst:.1e}"


def check_weyl(rng) -> tuple[bool, str]:
    basis = OccupationBasis(2, 24)
    f = 0.6 * (rng.normal(size=2) + 1j * rng.normal(size=2))
    direct = coherent_state(f, basis)
    via_krylov = apply_weyl(f, vacuum(basis))
    err = np.linalg.norm(direct.amplitudes - via_krylov.amplitudes)
    return err < 1e-9, f"W(f) Omega vs coherent formula {err:.1e}"


def check_sector_norms(rng) -> tuple[bool, str]:
    bad = 0
    for N in (16, 64):
        norms = sector_norms_of_displaced_product(None, N)
        dn = d_N(N)
        for k in range(int(0.5 * N ** (1 / 3)) + 1):
            bad += norms[2 * k] > 2 / dn
            bad += norms[2 * k + 1] > 2 * (k + 1) ** 1.5 / (dn * np.sqrt(N))
    return bad == 0, f"{bad} violations"


def check_free_null(rng) -> tuple[bool, str]:
    cfg = ExperimentConfig(potential_terms=(), grid_L=4)
    traj = hartree_trajectory(cfg, 0.5)
    worst = max(float(np.max(nbody_distances(traj, cfg.potential, N, [0.25, 0.5])[0])) for N in (2, 3))
    return worst < 1e-9, f"max D {worst:.1e}"


def check_krylov(rng) -> tuple[bool, str]:
    A = rng.normal(size=(60, 60)) + 1j * rng.normal(size=(60, 60))
    A = A + A.conj().T
    v = rng.normal(size=60) + 0j
    err = np.linalg.norm(expm_multiply_hermitian(A, v, 0.7) - expm(-0.7j * A) @ v)
    return err < 1e-9, f"vs dense expm {err:.1e}"


def check_hartree(rng) -> tuple[bool, str]:
    grid = Grid(1, 8, 1.0)
    V = PotentialSpec.coulomb()
    phi = gaussian_packet(grid)
    traj = evolve(phi, V, 0.01, 1.0)
    mass = abs(traj.field(len(traj) - 1).mass - 1.0)
    e_drift = abs(energy(traj.field(len(traj) - 1), V) - energy(phi, V))
    return mass < 1e-12 and e_drift < 1e-4, f"mass drift {mass:.1e}, energy drift {e_drift:.1e}"


def check_generators(rng) -> tuple[bool, str]:
    grid = Grid(1, 3, 1.0)
    V = PotentialSpec.coulomb()
    basis = OccupationBasis(3, 6)
    ops = FluctuationOperators(grid, V, basis, 3)
    u = gaussian_packet(grid).modes
    worst = 0.0
    for kind in ("U", "U_tilde"):
        G = ops.generator(kind, u)
        worst = max(worst, abs(G - G.getH()).max())
    same = abs(ops.generator("U_trunc", u, M_cutoff=basis.N_cut) - ops.generator("U", u)).max()
    return worst < 1e-12 and same == 0, f"hermiticity {worst:.1e}, U_trunc(N_cut) - U {same:.1e}"


def check_parity(rng) -> tuple[bool, str]:
    cfg = ExperimentConfig(grid_L=4)
    traj = hartree_trajectory(cfg, 0.5, dt=0.005)
    basis = OccupationBasis(4, 8)
    psi = evolve_fluctuation("U_tilde", traj, cfg.potential, 2, vacuum(basis), 0.0, 0.5, 0.01, leakage_budget=1.0)
    odd = parity_norms(psi)["odd"] ** 2
    return odd <= 1e-10, f"odd mass {odd:.1e}"


GROUPS = {
    "algebra": check_algebra,
    "operator-bounds": check_bounds,
    "poisson": check_poisson,
    "weyl": check_weyl,
    "sector-norms": check_sector_norms,
    "free-null": check_free_null,
    "krylov": check_krylov,
    "hartree": check_hartree,
    "generators": check_generators,
    "parity": check_parity,
}


def run_selftest(seed: int = 1) -> list[CheckResult]:
    out = []
    for name, fn in GROUPS.items():
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        passed, detail = fn(rng)
        out.append(CheckResult(name, bool(passed), detail, time.perf_counter() - t0))
    return out
