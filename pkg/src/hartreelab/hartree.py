"""Strang-split integration of the lattice Hartree equation.

Solves ``i d/dt phi = -Delta_h phi + (V * |phi|^2) phi`` on a periodic grid.
Each step is a kinetic half step in Fourier space, a full pointwise
nonlinear phase, and a second kinetic half step; the scheme is unitary per
step and second order in ``dt``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ParameterError, ShapeError
from .lattice import (
    FieldVector,
    Grid,
    PotentialSpec,
    apply_kinetic,
    convolve_density,
    kinetic_symbol,
    norms,
    sample_potential,
)

__all__ = [
    "HartreeTrajectory",
    "evolve",
    "energy",
    "mean_field",
    "strichartz_norm",
    "sup_potential_slice",
    "write_trajectory_csv",
]


@dataclass
class HartreeTrajectory:
    """Sampled Hartree solution ``t -> phi_t``.

    ``states`` has one row of site values per stored time; ``dt`` is the
    integrator step, so stored times are spaced by ``stride * dt``.
    """

    grid: Grid
    times: np.ndarray
    states: np.ndarray
    dt: float
    stride: int = 1

    def __len__(self):
        return len(self.times)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def field(self, k: int) -> FieldVector:
        return FieldVector(self.grid, self.states[k])

    def step_index(self, t: float) -> int:
        """Index of the stored time nearest to ``t``."""
        spacing = self.stride * self.dt
        if len(self.times) > 1:
            spacing = float(self.times[1] - self.times[0])
        lo, hi = float(self.times[0]), float(self.times[-1])
        slack = 1e-9 * max(1.0, abs(hi))
        if t < lo - slack or t > hi + slack:
            raise ParameterError(f"time {t} not covered by trajectory [{lo}, {hi}]")
        if len(self.times) == 1:
            return 0
        return int(np.clip(np.rint((t - lo) / spacing), 0, len(self.times) - 1))

    def at(self, t: float) -> FieldVector:
        """State at the stored step nearest to ``t`` (no interpolation)."""
        return self.field(self.step_index(t))

    def covers(self, s: float, t: float) -> bool:
        slack = 1e-9 * max(1.0, abs(self.T))
        return min(s, t) >= self.times[0] - slack and max(s, t) <= self.T + slack


def mean_field(V: np.ndarray, phi: FieldVector) -> np.ndarray:
    """``(V * |phi|^2)(x)`` for a sampled potential ``V``."""
    return convolve_density(V, np.abs(phi.values) ** 2, phi.grid)


def evolve(phi0: FieldVector, V: PotentialSpec, dt: float, T: float, stride: int = 1) -> HartreeTrajectory:
    """Integrate from ``t = 0`` to ``T`` (``T < 0`` runs backwards in time).

    Parameters
    ----------
    phi0 : FieldVector
        Initial state, normalized.
    V : PotentialSpec
        Interaction potential.
    dt : float
        Positive step size; ``|T|`` must be an integer multiple of it.
    T : float
        Final time.
    stride : int
        Store every ``stride``-th step.
    """
    if dt <= 0:
        raise ParameterError(f"step size must be positive, got {dt}")
    if not phi0.is_normalized(1e-10):
        raise ParameterError(f"initial state has mass {phi0.mass}, expected 1")
    n_steps = int(round(abs(T) / dt))
    if abs(n_steps * dt - abs(T)) > 1e-9 * max(1.0, abs(T)):
        raise ParameterError(f"horizon {T} is not a multiple of dt={dt}")
    if stride < 1 or n_steps % stride:
        raise ParameterError(f"stride {stride} must divide the number of steps {n_steps}")
    grid = phi0.grid
    sign = -1.0 if T < 0 else 1.0
    h = sign * dt

    Vs = sample_potential(V, grid)
    V_hat = np.fft.fftn(Vs) * grid.cell_volume
    half_kinetic = np.exp(-0.5j * h * kinetic_symbol(grid))

    phi = phi0.values.reshape(grid.shape).copy()
    stored = [phi.ravel().copy()]
    for step in range(1, n_steps + 1):
        phi = np.fft.ifftn(half_kinetic * np.fft.fftn(phi))
        potential = np.fft.ifftn(V_hat * np.fft.fftn(np.abs(phi) ** 2)).real
        phi = phi * np.exp(-1j * h * potential)
        phi = np.fft.ifftn(half_kinetic * np.fft.fftn(phi))
        if not np.all(np.isfinite(phi)):
            raise DivergenceError(f"non-finite Hartree state at step {step}", step=step)
        if step % stride == 0:
            stored.append(phi.ravel().copy())
    times = sign * dt * stride * np.arange(len(stored))
    return HartreeTrajectory(grid=grid, times=times, states=np.array(stored), dt=dt, stride=stride)


def energy(phi: FieldVector, V: PotentialSpec) -> float:
    """``(1/2)<phi, -Delta_h phi> + (1/4) h^d sum_x (V * |phi|^2)(x) |phi(x)|^2``."""
    grid = phi.grid
    w = grid.cell_volume
    kinetic = w * np.real(np.vdot(phi.values, apply_kinetic(grid, phi.values)))
    rho = np.abs(phi.values) ** 2
    interaction = w * np.sum(convolve_density(sample_potential(V, grid), rho, grid) * rho)
    return float(0.5 * kinetic + 0.25 * interaction)


def strichartz_norm(traj: HartreeTrajectory) -> float:
    """Left-endpoint quadrature of ``(int_0^T ||phi_t||_inf^2 dt)^(1/2)``."""
    if len(traj) == 0:
        raise ParameterError("empty trajectory")
    if len(traj) == 1:
        return 0.0
    sup2 = np.max(np.abs(traj.states[:-1]), axis=1) ** 2
    return float(np.sqrt(np.sum(np.abs(np.diff(traj.times)) * sup2)))


def sup_potential_slice(V: PotentialSpec, phi: FieldVector) -> float:
    """``max_x (h^d sum_y V(x-y)^2 |phi(y)|^2)^(1/2)``."""
    grid = phi.grid
    Vs = sample_potential(V, grid)
    if Vs.shape != grid.shape:
        raise ShapeError("potential and field live on different grids")
    slices = convolve_density(Vs**2, np.abs(phi.values) ** 2, grid)
    return float(np.sqrt(max(slices.max(), 0.0)))


def write_trajectory_csv(traj: HartreeTrajectory, V: PotentialSpec, stream, header_lines=()) -> None:
    """Write ``time, mass, energy, h1_norm, linf_norm`` per stored step."""
    for line in header_lines:
        stream.write(f"# {line}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["time", "mass", "energy", "h1_norm", "linf_norm"])
    for k, t in enumerate(traj.times):
        phi = traj.field(k)
        nrm = norms(phi)
        writer.writerow([repr(float(t)), repr(phi.mass), repr(energy(phi, V)), repr(nrm.h1), repr(nrm.linf)])
