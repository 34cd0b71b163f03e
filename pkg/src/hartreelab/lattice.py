"""Periodic lattice geometry, interaction potentials and one-particle norms.

Wave functions are stored as continuum amplitudes ``phi(x)`` on the sites of
a periodic ``d``-dimensional lattice with spacing ``h``; the L2 mass is
``h**d * sum(|phi|**2)``.  The Fock-space modules work in *mode coordinates*
``u = h**(d/2) * phi`` which are plain l2-normalized vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError

__all__ = [
    "Grid",
    "PotentialSpec",
    "FieldVector",
    "Norms",
    "sample_potential",
    "potential_matrix",
    "convolve_density",
    "kinetic_symbol",
    "kinetic_matrix",
    "apply_kinetic",
    "norms",
    "plane_wave",
    "gaussian_packet",
]


@dataclass(frozen=True)
class Grid:
    """Periodic lattice with ``L`` sites per axis and spacing ``h``."""

    d: int = 1
    L: int = 6
    h: float = 1.0

    def __post_init__(self):
        if int(self.d) != self.d or not 1 <= self.d <= 3:
            raise ParameterError(f"grid dimension must be 1, 2 or 3, got {self.d}")
        if int(self.L) != self.L or self.L < 2:
            raise ParameterError(f"sites_per_axis must be an integer >= 2, got {self.L}")
        if not np.isfinite(self.h) or self.h <= 0:
            raise ParameterError(f"spacing h must be positive, got {self.h}")

    @property
    def M(self) -> int:
        return self.L ** self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    def index(self, coords) -> np.ndarray | int:
        """Flat site index of integer coordinates (wrapped modulo L)."""
        coords = np.asarray(coords)
        if coords.shape[-1] != self.d:
            raise ShapeError(f"expected {self.d} coordinates, got shape {coords.shape}")
        idx = np.ravel_multi_index(tuple(np.moveaxis(coords, -1, 0)), self.shape, mode="wrap")
        return int(idx) if np.ndim(idx) == 0 else idx

    def coords(self, index) -> np.ndarray:
        """Integer coordinates of a flat site index."""
        return np.stack(np.unravel_index(index, self.shape), axis=-1)

    def minimal_image(self) -> np.ndarray:
        """Signed minimal-image displacement per axis, shape ``(*shape, d)``.

        A displacement of exactly ``L/2`` is mapped to ``+L/2``.
        """
        r = np.arange(self.L)
        signed = np.where(r <= self.L // 2, r, r - self.L)
        mesh = np.meshgrid(*([signed] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    def distances(self) -> np.ndarray:
        """Minimal-image distance ``|r|`` for every displacement, in length units."""
        return self.h * np.sqrt(np.sum(self.minimal_image() ** 2, axis=-1))


@dataclass(frozen=True)
class PotentialSpec:
    """``V(x) = sum_i strength_i * |x|**(-exponent_i) + offset`` (+ optional table).

    ``terms`` is a sequence of ``(strength, exponent)`` pairs with every
    exponent in ``(0, 3/2)``.  ``bounded_part`` is an optional real array over
    displacements (grid shape) added after sampling; it must be even.
    """

    terms: tuple = ()
    offset: float = 0.0
    bounded_part: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        terms = tuple((float(lam), float(gam)) for lam, gam in self.terms)
        for _, gam in terms:
            if not 0.0 < gam < 1.5:
                raise ParameterError(f"exponent {gam} outside the admissible range (0, 3/2)")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def coulomb(cls, strength=0.5, exponent=1.0, offset=0.0):
        return cls(terms=((strength, exponent),), offset=offset)

    @property
    def is_zero(self) -> bool:
        no_table = self.bounded_part is None or not np.any(self.bounded_part)
        return (not self.terms or all(lam == 0 for lam, _ in self.terms)) and self.offset == 0 and no_table


@dataclass
class FieldVector:
    """Complex one-particle wave function on a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.size != self.grid.M:
            raise ShapeError(f"field has {values.size} values, grid has {self.grid.M} sites")
        self.values = values.reshape(self.grid.M)

    @classmethod
    def from_modes(cls, grid: Grid, modes) -> "FieldVector":
        return cls(grid, np.asarray(modes, dtype=complex) / np.sqrt(grid.cell_volume))

    @property
    def modes(self) -> np.ndarray:
        """Mode coordinates ``h**(d/2) * phi``; l2 norm equals the L2 norm of phi."""
        return self.values * np.sqrt(self.grid.cell_volume)

    @property
    def mass(self) -> float:
        return float(self.grid.cell_volume * np.sum(np.abs(self.values) ** 2))

    def is_normalized(self, tol=1e-12) -> bool:
        return abs(self.mass - 1.0) <= tol

    def normalized(self) -> "FieldVector":
        mass = self.mass
        if mass == 0:
            raise ParameterError("cannot normalize the zero field")
        return FieldVector(self.grid, self.values / np.sqrt(mass))


def sample_potential(spec: PotentialSpec, grid: Grid) -> np.ndarray:
    """Sample ``spec`` on all displacement vectors of ``grid``.

    Returns a real array of shape ``grid.shape`` indexed by displacement.  The
    origin is regularized by evaluating each power law at half a cell,
    ``V(0) = sum_i lam_i (h/2)**(-gamma_i) + c``.
    """
    if grid.h <= 0:
        raise ParameterError("non-positive lattice spacing")
    dist = grid.distances()
    dist = np.where(dist > 0, dist, grid.h / 2)
    V = np.full(grid.shape, float(spec.offset))
    for lam, gam in spec.terms:
        V += lam * dist ** (-gam)
    if spec.bounded_part is not None:
        table = np.asarray(spec.bounded_part, dtype=float)
        if table.shape != grid.shape:
            raise ShapeError(f"bounded_part has shape {table.shape}, grid has {grid.shape}")
        if not np.allclose(table, _reflect(table), atol=1e-14):
            raise ParameterError("bounded_part must satisfy V(r) = V(-r)")
        V = V + table
    return V


def _reflect(a: np.ndarray) -> np.ndarray:
    # a(-r) on the periodic lattice
    out = a
    for axis in range(a.ndim):
        out = np.roll(np.flip(out, axis=axis), 1, axis=axis)
    return out


def potential_matrix(V: np.ndarray, grid: Grid) -> np.ndarray:
    """Site-basis matrix ``V[i, j] = V(x_i - x_j)`` from a sampled potential."""
    coords = grid.coords(np.arange(grid.M))
    disp = (coords[:, None, :] - coords[None, :, :]) % grid.L
    return np.asarray(V)[tuple(np.moveaxis(disp, -1, 0))]


def convolve_density(V: np.ndarray, rho, grid: Grid) -> np.ndarray:
    """Spectral convolution ``(V * rho)(x) = h**d * sum_y V(x - y) rho(y)``.

    ``V`` is indexed by displacement (as returned by :func:`sample_potential`)
    and ``rho`` by site, either flat or in grid shape; the result has the
    shape of ``rho``.
    """
    V = np.asarray(V, dtype=float)
    rho = np.asarray(rho)
    if V.shape != grid.shape or rho.size != grid.M:
        raise ShapeError(f"potential {V.shape} and density {rho.shape} do not match grid {grid.shape}")
    out = np.fft.ifftn(np.fft.fftn(V) * np.fft.fftn(rho.reshape(grid.shape)))
    if not np.iscomplexobj(rho):
        out = out.real
    return (grid.cell_volume * out).reshape(rho.shape)


def kinetic_symbol(grid: Grid) -> np.ndarray:
    """Fourier multiplier of ``-Delta_h``: ``(2/h^2) sum_a (1 - cos(2 pi k_a / L))``."""
    k = np.fft.fftfreq(grid.L) * grid.L
    one_axis = (2.0 / grid.h**2) * (1.0 - np.cos(2 * np.pi * k / grid.L))
    mesh = np.meshgrid(*([one_axis] * grid.d), indexing="ij")
    return np.sum(mesh, axis=0)


def apply_kinetic(grid: Grid, values) -> np.ndarray:
    """Apply ``-Delta_h`` to a flat site array spectrally."""
    g = np.asarray(values, dtype=complex).reshape(grid.shape)
    out = np.fft.ifftn(kinetic_symbol(grid) * np.fft.fftn(g))
    return out.reshape(grid.M)


def kinetic_matrix(grid: Grid) -> np.ndarray:
    """Dense circulant matrix of ``-Delta_h`` (standard 2d-point stencil)."""
    M = grid.M
    K = np.zeros((M, M))
    sites = np.arange(M)
    coords = grid.coords(sites)
    K[sites, sites] = 2.0 * grid.d / grid.h**2
    for axis in range(grid.d):
        for step in (1, -1):
            shifted = coords.copy()
            shifted[:, axis] += step
            np.add.at(K, (sites, grid.index(shifted)), -1.0 / grid.h**2)
    return K


@dataclass(frozen=True)
class Norms:
    l2: float
    lp: float
    linf: float
    h1: float
    p: float


def norms(phi: FieldVector, p: float = 4.0) -> Norms:
    """L2, Lp, L-infinity and H1 norms of a lattice field.

    The H1 norm uses the spectral kinetic form,
    ``h1**2 = l2**2 + <phi, -Delta_h phi>``.
    """
    w = phi.grid.cell_volume
    a = np.abs(phi.values)
    l2 = np.sqrt(w * np.sum(a**2))
    kin = w * np.real(np.vdot(phi.values, apply_kinetic(phi.grid, phi.values)))
    return Norms(
        l2=float(l2),
        lp=float((w * np.sum(a**p)) ** (1.0 / p)),
        linf=float(a.max()),
        h1=float(np.sqrt(l2**2 + max(kin, 0.0))),
        p=float(p),
    )


def plane_wave(grid: Grid, wavenumber=0) -> FieldVector:
    """Normalized plane wave ``exp(2 pi i k.x / L)``."""
    k = np.broadcast_to(np.asarray(wavenumber), (grid.d,))
    coords = grid.coords(np.arange(grid.M))
    phase = np.exp(2j * np.pi * coords @ k / grid.L)
    return FieldVector(grid, phase / np.sqrt(grid.M * grid.cell_volume))


def gaussian_packet(grid: Grid, width=1.0, momentum=1, center=None) -> FieldVector:
    """Normalized Gaussian wave packet with a plane-wave phase.

    ``width`` and ``center`` are in lattice units (sites); distances are
    minimal-image so the packet is periodic.
    """
    center = np.broadcast_to(grid.L / 2 if center is None else np.asarray(center, float), (grid.d,))
    k = np.broadcast_to(np.asarray(momentum), (grid.d,))
    coords = grid.coords(np.arange(grid.M)).astype(float)
    delta = (coords - center + grid.L / 2) % grid.L - grid.L / 2
    envelope = np.exp(-np.sum(delta**2, axis=1) / (2 * width**2))
    values = envelope * np.exp(2j * np.pi * coords @ k / grid.L)
    return FieldVector(grid, values).normalized()
