"""Unitary propagation on the truncated Fock space.

Time-independent generators are exponentiated directly with the Lanczos
scheme.  The fluctuation flows ``U``, ``U_tilde`` and ``U_trunc`` have
generators that depend on ``phi_t``; they are stepped with the exponential
midpoint rule, which is unitary per step and second order.  Midpoints are
read from a stored Hartree trajectory, so the generator step must be an even
multiple of the trajectory spacing.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .coherent import apply_weyl
from .errors import ParameterError, TruncationError
from .fock import FockState, OccupationBasis, boundary_mass
from .generators import FluctuationOperators, SparseGenerator
from .hartree import HartreeTrajectory
from .krylov import expm_multiply_hermitian
from .lattice import PotentialSpec

__all__ = [
    "FLUCTUATION_KINDS",
    "expm_apply",
    "propagate_hamiltonian",
    "midpoint_schedule",
    "evolve_fluctuation",
    "conjugated_annihilation_identity_check",
]

FLUCTUATION_KINDS = ("U", "U_tilde", "U_trunc")
DEFAULT_TOL = 1e-10
DEFAULT_LEAKAGE_BUDGET = 1e-8


def expm_apply(G, psi: FockState, tau: float, tol: float = DEFAULT_TOL) -> FockState:
    """``exp(-i tau G) psi`` for Hermitian ``G`` (a :class:`SparseGenerator` or sparse matrix)."""
    if tol <= 0:
        raise ParameterError("tol must be positive")
    A = G.matrix if isinstance(G, SparseGenerator) else G
    if A.shape != (psi.basis.dim, psi.basis.dim):
        raise ParameterError(f"generator shape {A.shape} does not match basis dimension {psi.basis.dim}")
    if (A.nnz == 0) if sp.issparse(A) else not np.any(A):
        return psi.with_amplitudes(psi.amplitudes.copy())
    out = expm_multiply_hermitian(A, psi.amplitudes, tau, tol=tol)
    return psi.with_amplitudes(out)


def propagate_hamiltonian(H, psi: FockState, times, tol: float = DEFAULT_TOL) -> list[FockState]:
    """States ``exp(-i H t) psi`` at each of the ascending ``times`` (chained from the previous time)."""
    out, current, t_prev = [], psi, 0.0
    for t in times:
        current = expm_apply(H, current, t - t_prev, tol)
        out.append(current)
        t_prev = t
    return out


def midpoint_schedule(traj: HartreeTrajectory, s: float, t: float, dt: float):
    """Trajectory indices of the step midpoints for stepping from ``s`` to ``t``.

    Returns ``(indices, signed_step)``.  The stepping from ``t`` back to ``s``
    visits the same midpoints in reverse, so the computed backward flow is
    the exact inverse of the computed forward flow.
    """
    if dt <= 0:
        raise ParameterError("dt must be positive")
    if not traj.covers(s, t):
        raise ParameterError(f"trajectory [{traj.times[0]}, {traj.T}] does not cover [{s}, {t}]")
    spacing = abs(float(traj.times[1] - traj.times[0])) if len(traj) > 1 else traj.dt * traj.stride
    half = dt / (2.0 * spacing)
    if abs(half - round(half)) > 1e-9 or round(half) < 1:
        raise ParameterError(
            f"generator step {dt} must be an even multiple of the trajectory spacing {spacing}"
        )
    n = int(round(abs(t - s) / dt))
    if abs(n * dt - abs(t - s)) > 1e-9 * max(1.0, abs(t - s)):
        raise ParameterError(f"interval [{s}, {t}] is not a multiple of dt={dt}")
    sign = 1.0 if t >= s else -1.0
    mids = [traj.step_index(s + sign * (k + 0.5) * dt) for k in range(n)]
    return mids, sign * dt


def evolve_fluctuation(
    kind: str,
    traj: HartreeTrajectory,
    V: PotentialSpec,
    N: int,
    psi0: FockState,
    s: float,
    t: float,
    dt: float,
    M_cutoff: int | None = None,
    tol: float = DEFAULT_TOL,
    leakage_budget: float = DEFAULT_LEAKAGE_BUDGET,
    operators: FluctuationOperators | None = None,
) -> FockState:
    """Apply ``U(t;s)``, ``U_tilde(t;s)`` or ``U^(M)(t;s)`` to ``psi0``.

    ``t < s`` gives the backward flow, i.e. the adjoint ``U(s;t)^*``.  The
    scalar phase generated by ``L0`` is not included; it cancels in every
    conjugation ``U^* A U``.

    Parameters
    ----------
    kind : {"U", "U_tilde", "U_trunc"}
    traj : HartreeTrajectory
        Must contain the step midpoints (``dt`` an even multiple of its spacing).
    V, N
        Interaction and particle number.
    psi0 : FockState
    s, t : float
        Initial and final time.
    dt : float
        Generator step.
    M_cutoff : int, optional
        Sector bound of the truncated cubic term, required for ``U_trunc``.
    tol : float
        Krylov tolerance per step.
    leakage_budget : float
        Largest admissible weight in the two sectors below ``N_cut``,
        relative to ``||psi0||^2``.

    Raises
    ------
    TruncationError
        If the evolved state reaches the basis cutoff.
    """
    if kind not in FLUCTUATION_KINDS:
        raise ParameterError(f"unknown fluctuation kind {kind!r}")
    if kind == "U_trunc" and M_cutoff is None:
        raise ParameterError("U_trunc needs M_cutoff")
    basis = psi0.basis
    ops = operators or FluctuationOperators(traj.grid, V, basis, N)
    if ops.basis is not basis:
        raise ParameterError("operators were built for a different basis")
    mids, step = midpoint_schedule(traj, s, t, dt)
    psi = psi0.with_amplitudes(psi0.amplitudes.copy())
    worst = psi0.leakage
    scale = max(psi0.norm() ** 2, np.finfo(float).tiny)
    for k in mids:
        u = traj.states[k] * np.sqrt(traj.grid.cell_volume)
        G = ops.generator(kind, u, N, M_cutoff)
        psi = expm_apply(G, psi, step, tol)
        edge = boundary_mass(psi) / scale
        if edge > leakage_budget:
            raise TruncationError(
                f"{kind} evolution reached the cutoff N_cut={basis.N_cut} "
                f"(weight {edge:.2e} at t={traj.times[k]:.4g})"
            )
        worst = max(worst, edge)
    psi.leakage = worst
    return psi


def conjugated_annihilation_identity_check(
    traj: HartreeTrajectory,
    V: PotentialSpec,
    N: int,
    t: float,
    x: int,
    basis: OccupationBasis,
    dt: float,
    test_state: FockState | None = None,
    seed: int = 1,
    test_sector: int = 2,
    tol: float = 1e-12,
) -> float:
    """Residual of ``W^* e^{iHt} (a_x - sqrt(N) u_t(x)) e^{-iHt} W = U^*(t) a_x U(t)``.

    Both sides act on a random state supported in sectors ``<= test_sector``
    (or on ``test_state``), with ``W = W(sqrt(N) u_0)`` and ``s = 0``.
    Returns the Euclidean norm of the difference.
    """
    ops = FluctuationOperators(traj.grid, V, basis, N)
    if test_state is None:
        rng = np.random.default_rng(seed)
        amps = np.zeros(basis.dim, dtype=complex)
        low = basis.totals <= test_sector
        amps[low] = rng.normal(size=low.sum()) + 1j * rng.normal(size=low.sum())
        test_state = FockState(basis, amps / np.linalg.norm(amps))
    chi = test_state
    h_half = np.sqrt(traj.grid.cell_volume)
    u0 = traj.states[traj.step_index(0.0)] * h_half
    ut = traj.states[traj.step_index(t)] * h_half
    f0 = np.sqrt(N) * u0
    H = ops.hamiltonian(N)
    budget = 1e-10

    lhs = apply_weyl(f0, chi, tol=tol, leakage_budget=budget)
    lhs = expm_apply(H, lhs, t, tol)
    lowered = basis.annihilator(x) @ lhs.amplitudes - np.sqrt(N) * ut[x] * lhs.amplitudes
    lhs = expm_apply(H, lhs.with_amplitudes(lowered), -t, tol)
    lhs = apply_weyl(-f0, lhs, tol=tol, leakage_budget=budget)

    rhs = evolve_fluctuation("U", traj, V, N, chi, 0.0, t, dt, tol=tol, leakage_budget=budget, operators=ops)
    rhs = rhs.with_amplitudes(basis.annihilator(x) @ rhs.amplitudes)
    rhs = evolve_fluctuation("U", traj, V, N, rhs, t, 0.0, dt, tol=tol, leakage_budget=budget, operators=ops)
    return float(np.linalg.norm(lhs.amplitudes - rhs.amplitudes))
