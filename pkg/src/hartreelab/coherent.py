"""Coherent states, Weyl operators and factorized N-particle states.

Mode vectors ``f`` are in mode coordinates (see :mod:`hartreelab.lattice`);
a :class:`~hartreelab.lattice.FieldVector` is converted automatically.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln
from scipy.stats import poisson

from .errors import CapacityError, ParameterError, TruncationError
from .fock import (
    FockState,
    OccupationBasis,
    as_modes,
    boundary_mass,
)
from .krylov import expm_multiply_hermitian

__all__ = [
    "tail_rule_cutoff",
    "coherent_state",
    "weyl_generator",
    "apply_weyl",
    "product_state",
    "d_N",
    "log_d_N",
    "single_mode_cutoff",
    "displaced_product_amplitudes",
    "sector_norms_of_displaced_product",
    "embed_single_mode",
    "displaced_product_state",
]


TAIL_MASS = 1e-13


def tail_rule_cutoff(norm_sq: float, tail_mass: float = TAIL_MASS) -> int:
    """Cutoff for a coherent state of mean particle number ``norm_sq``.

    At least ``||f||^2 + 8 ||f||``, and large enough that the Poisson weight
    above the cutoff is below ``tail_mass``.
    """
    floor = int(math.ceil(norm_sq + 8.0 * math.sqrt(norm_sq) - 1e-12))
    if norm_sq <= 0:
        return floor
    n = np.arange(floor, floor + 64 + int(16 * math.sqrt(norm_sq) + norm_sq))
    ok = n[poisson.logsf(n, norm_sq) < math.log(tail_mass)]
    return int(ok[0]) if ok.size else int(n[-1])


def _check_tail(f: np.ndarray, basis: OccupationBasis):
    norm_sq = float(np.vdot(f, f).real)
    need = tail_rule_cutoff(norm_sq)
    if basis.N_cut < need:
        raise TruncationError(
            f"cutoff {basis.N_cut} too small for ||f||^2={norm_sq:.4g}; need N_cut >= {need}",
            required_cutoff=need,
        )
    return norm_sq


def coherent_state(f, basis: OccupationBasis) -> FockState:
    """``psi(f) = exp(-||f||^2/2) sum_n prod_i f_i^{n_i} / sqrt(n_i!)``.

    The weight missing from the truncated expansion is stored as ``leakage``.
    """
    f = as_modes(f, basis.M)
    norm_sq = _check_tail(f, basis)
    occ = basis.occupations.astype(np.int64)
    log_mag = -0.5 * norm_sq - 0.5 * gammaln(occ + 1.0).sum(axis=1)
    amps = np.exp(log_mag) * np.prod(f[None, :] ** occ, axis=1)
    state = FockState(basis, amps)
    state.leakage = max(0.0, 1.0 - state.norm() ** 2)
    return state


def weyl_generator(f, basis: OccupationBasis) -> sp.csr_matrix:
    """Hermitian ``G = i (a^*(f) - a(f))`` so that ``W(f) = exp(-i G)``."""
    f = as_modes(f, basis.M)
    G = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for i in np.nonzero(f)[0]:
        G = G + 1j * (f[i] * basis.creator(i) - np.conj(f[i]) * basis.annihilator(i))
    return G.tocsr()


def apply_weyl(f, psi: FockState, tol: float = 1e-12, leakage_budget: float = 1e-8) -> FockState:
    """``W(f) psi = exp(a^*(f) - a(f)) psi`` on the truncated space.

    The truncated generator is still skew-Hermitian, so the result is
    unitary; its accuracy is audited by the weight in the two sectors below
    the cutoff, which must stay within ``leakage_budget``.
    """
    basis = psi.basis
    f = as_modes(f, basis.M)
    if not np.any(f):
        return psi.with_amplitudes(psi.amplitudes.copy())
    out = expm_multiply_hermitian(weyl_generator(f, basis), psi.amplitudes, 1.0, tol=tol)
    result = psi.with_amplitudes(out)
    edge = boundary_mass(result)
    if edge > leakage_budget:
        raise TruncationError(
            f"Weyl displacement reached the cutoff (weight {edge:.2e} near N_cut={basis.N_cut})"
        )
    result.leakage = max(psi.leakage, edge)
    return result


def product_state(phi, N: int, basis: OccupationBasis) -> FockState:
    """``(a^*(phi))^N / sqrt(N!) Omega``: amplitude ``sqrt(N!/prod n_i!) prod phi_i^{n_i}``."""
    if N > basis.N_cut:
        raise CapacityError(f"N={N} exceeds basis cutoff {basis.N_cut}")
    if N < 0:
        raise ParameterError("particle number must be non-negative")
    u = as_modes(phi, basis.M)
    amps = np.zeros(basis.dim, dtype=complex)
    s = basis.sector_slice(N)
    occ = basis.occupations[s].astype(np.int64)
    coef = np.exp(0.5 * (gammaln(N + 1.0) - gammaln(occ + 1.0).sum(axis=1)))
    amps[s] = coef * np.prod(u[None, :] ** occ, axis=1)
    return FockState(basis, amps)


def log_d_N(N) -> np.ndarray | float:
    N = np.asarray(N, dtype=float)
    if np.any(N < 1):
        raise ParameterError("d_N needs N >= 1")
    out = 0.5 * gammaln(N + 1.0) - 0.5 * N * np.log(N) + 0.5 * N
    return float(out) if out.ndim == 0 else out


def d_N(N) -> np.ndarray | float:
    """``sqrt(N!) / (N^(N/2) exp(-N/2))``, evaluated through log-gamma."""
    return np.exp(log_d_N(N))


def single_mode_cutoff(N: int) -> int:
    """Cutoff for ``W^*(sqrt(N) phi) |N>`` in the single mode ``phi``.

    The displaced number state is spread over occupations up to roughly
    ``(2 sqrt(N))^2``; eight extra units of amplitude make the tail negligible.
    """
    return int(math.ceil((2.0 * math.sqrt(N) + 8.0) ** 2))


def displaced_product_amplitudes(N: int, cutoff: int | None = None, tol: float = 1e-13) -> np.ndarray:
    """Amplitudes ``<m| W^*(sqrt(N) phi) |N>`` in the single mode spanned by ``phi``.

    Uses ``exp(beta (a^* - a)) = S exp(-i beta T) S^*`` with ``S = diag(i^m)``
    and ``T`` the real tridiagonal matrix with off-diagonal ``sqrt(m+1)``.
    """
    if N < 0:
        raise ParameterError("particle number must be non-negative")
    cutoff = single_mode_cutoff(N) if cutoff is None else int(cutoff)
    if cutoff < N:
        raise TruncationError(f"cutoff {cutoff} below N={N}", required_cutoff=single_mode_cutoff(N))
    off = np.sqrt(np.arange(1, cutoff + 1, dtype=float))
    T = sp.diags([off, off], [-1, 1], format="csr")
    start = np.zeros(cutoff + 1, dtype=complex)
    start[N] = (1j) ** (-N)
    beta = -math.sqrt(N)
    out = expm_multiply_hermitian(T, start, beta, tol=tol)
    out = (1j) ** (np.arange(cutoff + 1) % 4) * out
    tail = np.sum(np.abs(out[-max(2, cutoff // 20):]) ** 2)
    if tail > 1e-20:
        raise TruncationError(f"single-mode cutoff {cutoff} too small for N={N} (tail {tail:.1e})")
    return out


def sector_norms_of_displaced_product(phi, N: int, cutoff: int | None = None) -> np.ndarray:
    """``||P_m W^*(sqrt(N) phi) (a^*(phi))^N / sqrt(N!) Omega||`` for ``m = 0..cutoff``.

    Both operators act only on the mode ``phi``, so the computation is done
    in that single mode; ``phi`` must be normalized.
    """
    if phi is not None:
        u = as_modes(phi)
        if abs(np.vdot(u, u).real - 1.0) > 1e-10:
            raise ParameterError("phi must be normalized")
    return np.abs(displaced_product_amplitudes(N, cutoff))


def embed_single_mode(coeffs, phi, basis: OccupationBasis) -> FockState:
    """``sum_m c_m (a^*(phi))^m / sqrt(m!) Omega`` truncated to ``m <= N_cut``."""
    out = np.zeros(basis.dim, dtype=complex)
    for m, c in enumerate(np.asarray(coeffs)[: basis.N_cut + 1]):
        if c != 0:
            out += c * product_state(phi, m, basis).amplitudes
    return FockState(basis, out)


def displaced_product_state(phi, N: int, basis: OccupationBasis) -> FockState:
    """``W^*(sqrt(N) phi) (a^*(phi))^N / sqrt(N!) Omega`` projected onto the basis."""
    return embed_single_mode(displaced_product_amplitudes(N), phi, basis)
