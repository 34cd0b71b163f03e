"""Sparse assembly of the mean-field Fock Hamiltonian and fluctuation generators.

Everything is assembled in the site basis, where the two-body interaction
is diagonal in occupation numbers.  With mode coordinates ``u = h^(d/2) phi``
the lattice weights cancel and

* ``H_N = dGamma(-Delta_h) + (1/2N) sum_xy V(x-y) a*_x a*_y a_y a_x``
* ``L2(t) = dGamma(-Delta_h) + sum_x (V*|phi_t|^2)(x) n_x
  + sum_xy V(x-y) conj(u_x) u_y a*_y a_x
  + 1/2 sum_xy V(x-y) (u_x u_y a*_x a*_y + h.c.)``
* ``L3(t) = N^(-1/2) sum_xy V(x-y) (u_y a*_x a*_y + conj(u_y) a*_x a_y) a_x``
* ``L4 = (1/2N) sum_xy V(x-y) a*_x a*_y a_y a_x``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, ShapeError
from .fock import OccupationBasis, as_modes, second_quantization_matrix
from .hartree import HartreeTrajectory
from .lattice import FieldVector, Grid, PotentialSpec, kinetic_matrix, potential_matrix, sample_potential

__all__ = [
    "SparseGenerator",
    "FluctuationOperators",
    "assemble_hamiltonian",
    "assemble_L2",
    "assemble_L3",
    "assemble_L4",
    "assemble_truncated",
    "phase_L0",
    "interaction_energy_density",
    "write_matrix_coo",
]


@dataclass
class SparseGenerator:
    """Sparse operator on an occupation basis plus bookkeeping metadata."""

    basis: OccupationBasis
    matrix: sp.csr_matrix
    hermitian: bool = True
    kind: str = ""
    t: float | None = None
    N: int | None = None

    def hermiticity_defect(self) -> float:
        diff = (self.matrix - self.matrix.getH()).tocoo()
        return float(np.max(np.abs(diff.data), initial=0.0))

    def __matmul__(self, other):
        return self.matrix @ other


class _LinearFamily:
    """Sparse matrices sharing one union sparsity pattern.

    ``combine(c)`` returns ``sum_k c[k] A_k`` by scattering the stored
    values into the fixed CSR pattern, with no sparse additions per call.
    All stored values are real; the coefficients may be complex.
    """

    def __init__(self, matrices, dim):
        rows, cols, vals, owner = [], [], [], []
        for k, mat in enumerate(matrices):
            coo = sp.coo_matrix(mat)
            rows.append(coo.row.astype(np.int64))
            cols.append(coo.col.astype(np.int64))
            vals.append(np.real(coo.data))
            owner.append(np.full(coo.nnz, k, dtype=np.int64))
        self.dim = dim
        self.count = len(matrices)
        keys = np.concatenate(rows) * dim + np.concatenate(cols) if rows else np.zeros(0, np.int64)
        uniq, pos = np.unique(keys, return_inverse=True)
        self.nnz = uniq.size
        # maps the coefficient vector to the CSR data array
        self._scatter = sp.csr_matrix(
            (
                np.concatenate(vals) if vals else np.zeros(0),
                (pos, np.concatenate(owner) if owner else np.zeros(0, np.int64)),
            ),
            shape=(self.nnz, max(self.count, 1)),
        )
        self._indices = (uniq % dim).astype(np.int32)
        self._indptr = np.searchsorted(uniq // dim, np.arange(dim + 1)).astype(np.int32)

    def combine(self, coefs) -> sp.csr_matrix:
        coefs = np.asarray(coefs, dtype=complex)
        if coefs.shape != (self.count,):
            raise ShapeError(f"expected {self.count} coefficients, got {coefs.shape}")
        data = self._scatter @ coefs
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(self.dim, self.dim))


_PIECES = {
    "L2": ("kin", "num", "hop", "pair", "pairH"),
    "L3": ("cub", "cubH"),
    "L4": ("int",),
    "U": ("kin", "num", "hop", "pair", "pairH", "cub", "cubH", "int"),
    "U_tilde": ("kin", "num", "hop", "pair", "pairH", "int"),
    "U_trunc": ("kin", "num", "hop", "pair", "pairH", "cub", "cubH", "int"),
}


class FluctuationOperators:
    """Precomputed pieces of ``H_N``, ``L2``, ``L3``, ``L4`` for one basis.

    The state-independent ladder monomials are built once per operator kind
    and stored on a common sparsity pattern; each call then only evaluates
    the coefficients from the Hartree mode vector and scatters them.
    """

    def __init__(self, grid: Grid, V: PotentialSpec, basis: OccupationBasis, N: int | None = None):
        if basis.M != grid.M:
            raise ShapeError(f"basis has {basis.M} modes, grid has {grid.M} sites")
        if N is not None and N < 1:
            raise ParameterError("particle number must be >= 1")
        self.grid = grid
        self.V = V
        self.basis = basis
        self.N = N
        self.V_sampled = sample_potential(V, grid)
        self.V_matrix = potential_matrix(self.V_sampled, grid)
        self.V0 = float(self.V_matrix[0, 0])
        self._kinetic = None
        self._pieces = {}
        self._families = {}
        M = basis.M
        self._hop_terms = [(x, y) for x in range(M) for y in range(M) if self.V_matrix[x, y] != 0]
        self._pair_terms = [(x, y) for x in range(M) for y in range(x, M) if self.V_matrix[x, y] != 0]

    # state independent pieces -------------------------------------------------

    @property
    def kinetic(self) -> sp.csr_matrix:
        if self._kinetic is None:
            self._kinetic = second_quantization_matrix(kinetic_matrix(self.grid), self.basis).real.tocsr()
        return self._kinetic

    def interaction_diagonal(self) -> np.ndarray:
        """Diagonal of ``sum_xy V(x-y) a*_x a*_y a_y a_x`` (without the 1/2N)."""
        occ = self.basis.occupations.astype(float)
        return np.einsum("ki,ij,kj->k", occ, self.V_matrix, occ) - self.V0 * self.basis.number_diagonal

    def _cubic(self):
        if "cub" not in self._pieces:
            b = self.basis
            mats = []
            for j in range(b.M):
                acc = sp.csr_matrix((b.dim, b.dim))
                for i in range(b.M):
                    if self.V_matrix[i, j] != 0:
                        acc = acc + self.V_matrix[i, j] * (b.creator(i) @ b.creator(j) @ b.annihilator(i))
                mats.append(acc.tocsr())
            self._pieces["cub"] = mats
        return self._pieces["cub"]

    def _piece(self, name, M_cutoff=None):
        b = self.basis
        if name == "kin":
            return [self.kinetic]
        if name == "int":
            return [sp.diags(self.interaction_diagonal(), format="csr")]
        if name == "num":
            occ = b.occupations.astype(float)
            return [sp.diags(occ[:, x], format="csr") for x in range(b.M)]
        if name == "hop":
            return [b.hop(y, x) for x, y in self._hop_terms]
        if name in ("pair", "pairH"):
            mats = [(b.creator(x) @ b.creator(y)).tocsr() for x, y in self._pair_terms]
            return mats if name == "pair" else [m.T.tocsr() for m in mats]
        if name in ("cub", "cubH"):
            mats = self._cubic()
            if M_cutoff is not None:
                chi = sp.diags((b.totals <= M_cutoff).astype(float))
                mats = [(m @ chi).tocsr() for m in mats]
            return mats if name == "cub" else [m.T.tocsr() for m in mats]
        raise KeyError(name)

    def _family(self, kind, M_cutoff=None):
        key = (kind, M_cutoff)
        if key not in self._families:
            mats = []
            for name in _PIECES[kind]:
                mats.extend(self._piece(name, M_cutoff))
            self._families[key] = _LinearFamily(mats, self.basis.dim)
        return self._families[key]

    def _coefficients(self, kind, u, N):
        M = self.basis.M
        out = []
        for name in _PIECES[kind]:
            if name == "kin":
                out.append([1.0])
            elif name == "int":
                out.append([1.0 / (2.0 * N)])
            elif name == "num":
                out.append(self.V_matrix @ np.abs(u) ** 2)
            elif name == "hop":
                out.append([self.V_matrix[x, y] * np.conj(u[x]) * u[y] for x, y in self._hop_terms])
            elif name in ("pair", "pairH"):
                c = np.array([(0.5 if x == y else 1.0) * self.V_matrix[x, y] * u[x] * u[y] for x, y in self._pair_terms])
                out.append(c if name == "pair" else np.conj(c))
            elif name == "cub":
                out.append(u / np.sqrt(N))
            elif name == "cubH":
                out.append(np.conj(u) / np.sqrt(N))
        return np.concatenate([np.asarray(c, dtype=complex).reshape(-1) for c in out]) if out else np.zeros(0)

    # assembled operators ----------------------------------------------------

    def _need_N(self, N):
        N = self.N if N is None else N
        if N is None or N < 1:
            raise ParameterError("particle number N >= 1 required")
        return N

    def hamiltonian(self, N=None) -> sp.csr_matrix:
        N = self._need_N(N)
        return (self.kinetic + sp.diags(self.interaction_diagonal() / (2.0 * N))).tocsr()

    def L4(self, N=None) -> sp.csr_matrix:
        N = self._need_N(N)
        return sp.diags(self.interaction_diagonal() / (2.0 * N), format="csr").astype(complex)

    def L2(self, u) -> sp.csr_matrix:
        u = as_modes(u, self.basis.M)
        return self._family("L2").combine(self._coefficients("L2", u, None))

    def L3(self, u, N=None, M_cutoff=None) -> sp.csr_matrix:
        """Cubic generator; with ``M_cutoff`` the indicator ``chi(N <= M)`` is inserted.

        In ``a*_x chi a*_y a_x`` and ``a*_x a_y chi a_x`` the indicator sits on
        the lower of the two sectors connected, which is what the truncated
        generator prescribes.
        """
        N = self._need_N(N)
        u = as_modes(u, self.basis.M)
        if M_cutoff is not None and M_cutoff < 0:
            raise ParameterError("M_cutoff must be non-negative")
        return self._family("L3", M_cutoff).combine(self._coefficients("L3", u, N))

    def generator(self, kind: str, u, N=None, M_cutoff=None) -> sp.csr_matrix:
        """``L2+L3+L4`` (``"U"``), ``L2+L4`` (``"U_tilde"``) or the truncated one (``"U_trunc"``)."""
        if kind not in ("U", "U_tilde", "U_trunc"):
            raise ParameterError(f"unknown generator kind {kind!r}")
        if kind == "U_trunc":
            if M_cutoff is None:
                raise ParameterError("U_trunc needs M_cutoff")
            if M_cutoff < 0:
                raise ParameterError("M_cutoff must be non-negative")
        else:
            M_cutoff = None
        N = self._need_N(N)
        u = as_modes(u, self.basis.M)
        return self._family(kind, M_cutoff).combine(self._coefficients(kind, u, N))


def assemble_hamiltonian(N: int, V: PotentialSpec, grid: Grid, basis: OccupationBasis) -> SparseGenerator:
    """Mean-field Hamiltonian ``H_N`` on the whole truncated Fock space."""
    ops = FluctuationOperators(grid, V, basis, N)
    return SparseGenerator(basis, ops.hamiltonian(), kind="H_N", N=N)


def assemble_L2(phi_t: FieldVector, V: PotentialSpec, basis: OccupationBasis, t=None) -> SparseGenerator:
    ops = FluctuationOperators(phi_t.grid, V, basis)
    return SparseGenerator(basis, ops.L2(phi_t.modes), kind="L2", t=t)


def assemble_L3(phi_t: FieldVector, V: PotentialSpec, N: int, basis: OccupationBasis, t=None) -> SparseGenerator:
    ops = FluctuationOperators(phi_t.grid, V, basis, N)
    return SparseGenerator(basis, ops.L3(phi_t.modes), kind="L3", t=t, N=N)


def assemble_L4(V: PotentialSpec, N: int, basis: OccupationBasis, grid: Grid) -> SparseGenerator:
    ops = FluctuationOperators(grid, V, basis, N)
    return SparseGenerator(basis, ops.L4(), kind="L4", N=N)


def assemble_truncated(phi_t: FieldVector, V: PotentialSpec, N: int, M_cutoff: int, basis: OccupationBasis, t=None) -> SparseGenerator:
    """``L_N^(M)(t)``: ``L2 + L4`` plus the cubic term with ``chi(N <= M_cutoff)``."""
    ops = FluctuationOperators(phi_t.grid, V, basis, N)
    return SparseGenerator(basis, ops.generator("U_trunc", phi_t.modes, M_cutoff=M_cutoff), kind="L_trunc", t=t, N=N)


def interaction_energy_density(V: PotentialSpec, phi: FieldVector) -> float:
    """``h^(2d) sum_xy V(x-y) |phi(x)|^2 |phi(y)|^2``."""
    u2 = np.abs(phi.modes) ** 2
    Vm = potential_matrix(sample_potential(V, phi.grid), phi.grid)
    return float(u2 @ Vm @ u2)


def phase_L0(traj: HartreeTrajectory, V: PotentialSpec, N: int, s: float, t: float) -> float:
    """``(N/2) int_s^t dtau sum_xy V(x-y) |u_tau(x)|^2 |u_tau(y)|^2`` by the trapezoid rule."""
    if not traj.covers(s, t):
        raise ParameterError(f"trajectory [{traj.times[0]}, {traj.T}] does not cover [{s}, {t}]")
    i, j = traj.step_index(s), traj.step_index(t)
    if i == j:
        return 0.0
    lo, hi = min(i, j), max(i, j)
    Vm = potential_matrix(sample_potential(V, traj.grid), traj.grid)
    u2 = np.abs(traj.states[lo : hi + 1]) ** 2 * traj.grid.cell_volume
    density = np.einsum("ki,ij,kj->k", u2, Vm, u2)
    integral = np.trapezoid(density, traj.times[lo : hi + 1])
    return float(0.5 * N * integral * (1 if j > i else -1))


def write_matrix_coo(gen: SparseGenerator, stream) -> None:
    """Coordinate text dump: one ``row col re im`` line per stored entry."""
    coo = gen.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for k in order:
        v = complex(coo.data[k])
        stream.write(f"{coo.row[k]} {coo.col[k]} {v.real!r} {v.imag!r}\n")
