"""One-particle reduced densities, trace distances and the fluctuation expectations E1, E2."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coherent import d_N, displaced_product_amplitudes, embed_single_mode
from .errors import ParameterError, ShapeError, TruncationError, UndefinedDensityError
from .fock import FockState, ModeOperator, OccupationBasis, annihilate, as_modes, create, second_quantization_matrix, vacuum
from .generators import FluctuationOperators
from .hartree import HartreeTrajectory
from .lattice import PotentialSpec
from .propagate import DEFAULT_LEAKAGE_BUDGET, DEFAULT_TOL, evolve_fluctuation

__all__ = [
    "DensityMatrix",
    "reduced_density",
    "trace_distance",
    "apply_field",
    "FluctuationContext",
    "E1",
    "E2",
    "E_pair",
    "direct_trace",
]


@dataclass
class DensityMatrix:
    """Hermitian ``M x M`` one-particle density in mode coordinates."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ShapeError(f"density matrix must be square, got {self.matrix.shape}")

    @property
    def M(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @classmethod
    def pure(cls, f) -> "DensityMatrix":
        """``|f><f| / ||f||^2``."""
        u = as_modes(f)
        return cls(np.outer(u, u.conj()) / np.vdot(u, u).real)


def reduced_density(psi: FockState) -> DensityMatrix:
    """``gamma[x, y] = <psi, a*_y a_x psi> / <psi, N psi>``.

    Raises
    ------
    UndefinedDensityError
        If ``psi`` has no weight outside the vacuum sector.
    """
    basis = psi.basis
    lowered = np.array([basis.annihilator(x) @ psi.amplitudes for x in range(basis.M)])
    gamma = lowered @ lowered.conj().T
    number = np.trace(gamma).real
    if number <= 1e-300 * max(1.0, psi.norm() ** 2):
        raise UndefinedDensityError("reduced density of a state with zero particles is undefined")
    gamma = gamma / number
    return DensityMatrix(0.5 * (gamma + gamma.conj().T))


def trace_distance(gamma: DensityMatrix, rho: DensityMatrix) -> float:
    """``Tr|gamma - rho|`` (no factor 1/2): sum of absolute eigenvalues of the difference."""
    a = gamma.matrix if isinstance(gamma, DensityMatrix) else np.asarray(gamma)
    b = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if a.shape != b.shape:
        raise ShapeError(f"density shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


def apply_field(f, psi: FockState, leakage_budget: float | None = None) -> FockState:
    """``phi(f) psi = a*(f) psi + a(f) psi``.

    With ``leakage_budget`` set, a creation loss above it raises
    :class:`TruncationError`.
    """
    up = create(f, psi)
    if leakage_budget is not None and up.leakage - psi.leakage > leakage_budget:
        raise TruncationError(f"field operator pushed weight {up.leakage - psi.leakage:.2e} beyond N_cut")
    down = annihilate(f, psi)
    out = up.amplitudes + down.amplitudes
    return psi.with_amplitudes(out, up.leakage - psi.leakage)


@dataclass
class FluctuationContext:
    """Shared inputs of the E1/E2 computation for one ``(N, trajectory)``.

    ``traj`` must start at ``t = 0`` with the initial one-particle state.
    """

    traj: HartreeTrajectory
    V: PotentialSpec
    N: int
    basis: OccupationBasis
    dt: float
    tol: float = DEFAULT_TOL
    leakage_budget: float = DEFAULT_LEAKAGE_BUDGET
    _ops: FluctuationOperators | None = field(default=None, repr=False)
    _forward: dict = field(default_factory=dict, repr=False)
    _bra: FockState | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.N < 1:
            raise ParameterError("N must be >= 1")
        if abs(self.traj.times[0]) > 1e-12:
            raise ParameterError("trajectory must start at t = 0")

    @property
    def operators(self) -> FluctuationOperators:
        if self._ops is None:
            self._ops = FluctuationOperators(self.traj.grid, self.V, self.basis, self.N)
        return self._ops

    def mode(self, t: float) -> np.ndarray:
        return self.traj.states[self.traj.step_index(t)] * np.sqrt(self.traj.grid.cell_volume)

    @property
    def bra(self) -> FockState:
        """``W^*(sqrt(N) phi) (a*(phi))^N / sqrt(N!) Omega`` restricted to the basis.

        Only sectors ``<= N_cut`` enter inner products with states of the
        basis, so the restriction is exact for that purpose.
        """
        if self._bra is None:
            coeffs = displaced_product_amplitudes(self.N)
            self._bra = embed_single_mode(coeffs, self.mode(0.0), self.basis)
        return self._bra

    def evolved_vacuum(self, t: float) -> FockState:
        """``U(t; 0) Omega`` (cached per time)."""
        key = round(t / self.dt)
        if key not in self._forward:
            self._forward[key] = evolve_fluctuation(
                "U", self.traj, self.V, self.N, vacuum(self.basis), 0.0, t, self.dt,
                tol=self.tol, leakage_budget=self.leakage_budget, operators=self.operators,
            )
        return self._forward[key]

    def pull_back(self, psi: FockState, t: float) -> FockState:
        """``U^*(t; 0) psi``."""
        return evolve_fluctuation(
            "U", self.traj, self.V, self.N, psi, t, 0.0, self.dt,
            tol=self.tol, leakage_budget=self.leakage_budget, operators=self.operators,
        )


def _mode_matrix(J) -> np.ndarray:
    return J.matrix if isinstance(J, ModeOperator) else np.asarray(J, dtype=complex)


def E1(J, t: float, ctx: FluctuationContext) -> complex:
    """``(d_N / N) <W^*(sqrt(N) phi) P_N-state, U^*(t) dGamma(J) U(t) Omega>``."""
    chi = ctx.evolved_vacuum(t)
    lifted = chi.with_amplitudes(second_quantization_matrix(_mode_matrix(J), ctx.basis) @ chi.amplitudes)
    back = ctx.pull_back(lifted, t)
    return complex(d_N(ctx.N) / ctx.N * ctx.bra.inner(back))


def E2(J, t: float, ctx: FluctuationContext) -> complex:
    """``(d_N / sqrt(N)) <W^*(sqrt(N) phi) P_N-state, U^*(t) phi(J phi_t) U(t) Omega>``."""
    chi = ctx.evolved_vacuum(t)
    f = _mode_matrix(J) @ ctx.mode(t)
    back = ctx.pull_back(apply_field(f, chi, ctx.leakage_budget), t)
    return complex(d_N(ctx.N) / np.sqrt(ctx.N) * ctx.bra.inner(back))


def E_pair(J, t: float, ctx: FluctuationContext) -> tuple[complex, complex]:
    return E1(J, t, ctx), E2(J, t, ctx)


def direct_trace(J, gamma: DensityMatrix, phi_t) -> complex:
    """``Tr J (gamma - |phi_t><phi_t|)`` in mode coordinates."""
    Jm = _mode_matrix(J)
    u = as_modes(phi_t)
    return complex(np.trace(Jm @ gamma.matrix) - np.vdot(u, Jm @ u))
