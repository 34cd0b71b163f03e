"""Truncated bosonic Fock space over a finite set of modes.

States are amplitude vectors over an :class:`OccupationBasis`, i.e. all
occupation vectors ``n = (n_1, ..., n_M)`` with ``sum(n) <= N_cut``.  Sectors
appear in ascending particle number; within a sector the occupation vectors
are in descending lexicographic order, so for two modes the one-particle
sector is ``(1, 0), (0, 1)``.

Ladder operators are sparse matrices (``matrix[target, source]``).  Creation
operators silently drop amplitude that would leave the truncated space; the
dropped weight is accumulated in :attr:`FockState.leakage`.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace
from functools import cached_property
from math import comb

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ParameterError, ShapeError
from .lattice import FieldVector

__all__ = [
    "DEFAULT_MAX_DIM",
    "OccupationBasis",
    "FockState",
    "ModeOperator",
    "enumerate_basis",
    "basis_size",
    "vacuum",
    "basis_state",
    "as_modes",
    "apply_create",
    "apply_annihilate",
    "create",
    "annihilate",
    "second_quantize",
    "second_quantization_matrix",
    "project_sector",
    "sector_norms",
    "number_moment",
    "parity_norms",
    "apply_number_power",
    "boundary_mass",
    "dump_state_csv",
]

DEFAULT_MAX_DIM = 5_000_000


def basis_size(M: int, N_cut: int) -> int:
    """Number of occupation vectors of ``M`` modes with at most ``N_cut`` particles."""
    return comb(N_cut + M, M)


class OccupationBasis:
    """Enumerated occupation-number basis with a total-particle cutoff.

    Parameters
    ----------
    M : int
        Number of modes.
    N_cut : int
        Largest total particle number kept.
    max_dim : int
        Capacity limit; larger bases raise :class:`CapacityError`.
    """

    def __init__(self, M: int, N_cut: int, max_dim: int = DEFAULT_MAX_DIM):
        if M < 1 or int(M) != M:
            raise ParameterError(f"number of modes must be a positive integer, got {M}")
        if N_cut < 0 or int(N_cut) != N_cut:
            raise ParameterError(f"cutoff must be a non-negative integer, got {N_cut}")
        size = basis_size(M, N_cut)
        if size > max_dim:
            raise CapacityError(f"basis with M={M}, N_cut={N_cut} has {size} states > max_dim={max_dim}")
        self.M = int(M)
        self.N_cut = int(N_cut)

        blocks = []
        offsets = [0]
        for n in range(N_cut + 1):
            count = comb(n + M - 1, n)
            occ = np.zeros((count, M), dtype=np.int16)
            if n:
                # combinations_with_replacement yields multisets of mode labels in
                # lexicographic order, i.e. occupations in descending lex order
                labels = np.fromiter(
                    itertools.chain.from_iterable(itertools.combinations_with_replacement(range(M), n)),
                    dtype=np.int32,
                    count=count * n,
                ).reshape(count, n)
                rows = np.arange(count)
                for col in range(n):
                    np.add.at(occ, (rows, labels[:, col]), 1)
            blocks.append(occ)
            offsets.append(offsets[-1] + count)
        self.occupations = np.concatenate(blocks)
        self.occupations.setflags(write=False)
        self.offsets = np.array(offsets)
        self.totals = np.repeat(np.arange(N_cut + 1), np.diff(self.offsets))
        self.totals.setflags(write=False)

        keys = self._keys(self.occupations)
        self._order = np.argsort(keys, kind="stable")
        self._sorted_keys = keys[self._order]
        self._cache: dict = {}

    def __repr__(self):
        return f"OccupationBasis(M={self.M}, N_cut={self.N_cut}, dim={self.dim})"

    def __len__(self):
        return self.dim

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def _keys(self, occ: np.ndarray) -> np.ndarray:
        occ = np.ascontiguousarray(np.asarray(occ).astype(">u2"))
        return occ.view(np.dtype((np.void, 2 * self.M))).ravel()

    def sector_slice(self, n: int) -> slice:
        if not 0 <= n <= self.N_cut:
            raise ParameterError(f"sector {n} outside 0..{self.N_cut}")
        return slice(int(self.offsets[n]), int(self.offsets[n + 1]))

    def sector_dim(self, n: int) -> int:
        s = self.sector_slice(n)
        return s.stop - s.start

    def lookup(self, occ) -> np.ndarray:
        """Basis indices of occupation vectors; ``-1`` where not in the basis."""
        occ = np.atleast_2d(np.asarray(occ))
        if occ.shape[-1] != self.M:
            raise ShapeError(f"occupation vectors need {self.M} entries, got {occ.shape[-1]}")
        result = np.full(len(occ), -1, dtype=np.int64)
        valid = (occ >= 0).all(axis=1) & (occ.sum(axis=1) <= self.N_cut)
        if valid.any():
            keys = self._keys(occ[valid])
            pos = np.searchsorted(self._sorted_keys, keys)
            pos = np.minimum(pos, len(self._sorted_keys) - 1)
            found = self._sorted_keys[pos] == keys
            idx = np.where(found, self._order[pos], -1)
            result[valid] = idx
        return result

    def index(self, occupation) -> int:
        idx = int(self.lookup(occupation)[0])
        if idx < 0:
            raise ParameterError(f"occupation {tuple(occupation)} not in basis")
        return idx

    def _check_mode(self, i):
        if not (0 <= i < self.M) or int(i) != i:
            raise ParameterError(f"mode index {i} outside 0..{self.M - 1}")

    def annihilator(self, i: int) -> sp.csr_matrix:
        """Sparse matrix of ``a_i``."""
        self._check_mode(i)
        key = ("a", i)
        if key not in self._cache:
            occ = self.occupations
            src = np.nonzero(occ[:, i] > 0)[0]
            target_occ = occ[src].astype(np.int64)
            target_occ[:, i] -= 1
            dst = self.lookup(target_occ)
            vals = np.sqrt(occ[src, i].astype(float))
            self._cache[key] = sp.csr_matrix((vals, (dst, src)), shape=(self.dim, self.dim))
        return self._cache[key]

    def creator(self, i: int) -> sp.csr_matrix:
        """Sparse matrix of the truncated ``a_i^*`` (adjoint of :meth:`annihilator`)."""
        key = ("c", i)
        if key not in self._cache:
            self._cache[key] = self.annihilator(i).T.tocsr()
        return self._cache[key]

    def hop(self, i: int, j: int) -> sp.csr_matrix:
        """Sparse matrix of ``a_i^* a_j`` (sector preserving)."""
        key = ("h", i, j)
        if key not in self._cache:
            self._cache[key] = (self.creator(i) @ self.annihilator(j)).tocsr()
        return self._cache[key]

    @cached_property
    def number_diagonal(self) -> np.ndarray:
        return self.totals.astype(float)


def enumerate_basis(M: int, N_cut: int, max_dim: int = DEFAULT_MAX_DIM) -> OccupationBasis:
    return OccupationBasis(M, N_cut, max_dim=max_dim)


@dataclass
class FockState:
    """Amplitude vector over an :class:`OccupationBasis`.

    ``leakage`` accumulates the squared norm dropped by truncated operators
    (or, for time evolution, the largest weight seen near the cutoff).
    """

    basis: OccupationBasis
    amplitudes: np.ndarray
    leakage: float = field(default=0.0)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.basis.dim,):
            raise ShapeError(f"amplitudes have shape {amps.shape}, basis has dim {self.basis.dim}")
        self.amplitudes = amps

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def inner(self, other: "FockState") -> complex:
        """``<self, other>``, antilinear in ``self``."""
        _same_basis(self, other)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def with_amplitudes(self, amplitudes, extra_leakage=0.0) -> "FockState":
        return replace(self, amplitudes=amplitudes, leakage=self.leakage + float(extra_leakage))

    def __add__(self, other):
        _same_basis(self, other)
        return self.with_amplitudes(self.amplitudes + other.amplitudes, other.leakage)

    def __sub__(self, other):
        _same_basis(self, other)
        return self.with_amplitudes(self.amplitudes - other.amplitudes, other.leakage)

    def __mul__(self, scalar):
        return self.with_amplitudes(scalar * self.amplitudes)

    __rmul__ = __mul__


def _same_basis(a: FockState, b: FockState):
    if a.basis is not b.basis and (a.basis.M, a.basis.N_cut) != (b.basis.M, b.basis.N_cut):
        raise ShapeError("states live on different bases")


def vacuum(basis: OccupationBasis) -> FockState:
    amps = np.zeros(basis.dim, dtype=complex)
    amps[0] = 1.0
    return FockState(basis, amps)


def basis_state(basis: OccupationBasis, occupation) -> FockState:
    amps = np.zeros(basis.dim, dtype=complex)
    amps[basis.index(occupation)] = 1.0
    return FockState(basis, amps)


@dataclass
class ModeOperator:
    """One-particle operator as an ``M x M`` matrix in the site basis."""

    matrix: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ShapeError(f"mode operator must be square, got shape {mat.shape}")
        if self.hermitian and np.max(np.abs(mat - mat.conj().T), initial=0.0) > 1e-12:
            raise ParameterError("matrix flagged hermitian is not Hermitian")
        self.matrix = mat

    @property
    def M(self) -> int:
        return self.matrix.shape[0]

    def op_norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def as_modes(f, M: int | None = None) -> np.ndarray:
    """Mode coordinates of ``f``: a :class:`FieldVector` gets the ``h**(d/2)`` weight."""
    if isinstance(f, FieldVector):
        out = f.modes
    else:
        out = np.asarray(f, dtype=complex).ravel()
    if M is not None and out.shape != (M,):
        raise ShapeError(f"mode vector has {out.size} entries, expected {M}")
    return out


def _top_creation_loss(psi: FockState, weights: np.ndarray) -> float:
    # weight dropped when a creation operator acts on the top sector
    top = psi.basis.sector_slice(psi.basis.N_cut)
    return float(np.sum(weights[top] * np.abs(psi.amplitudes[top]) ** 2))


def apply_create(i: int, psi: FockState) -> FockState:
    """``a_i^* psi``; amplitude pushed beyond ``N_cut`` is dropped and logged."""
    basis = psi.basis
    out = basis.creator(i) @ psi.amplitudes
    loss = _top_creation_loss(psi, basis.occupations[:, i] + 1.0)
    return psi.with_amplitudes(out, loss)


def apply_annihilate(i: int, psi: FockState) -> FockState:
    """``a_i psi``."""
    return psi.with_amplitudes(psi.basis.annihilator(i) @ psi.amplitudes)


def create(f, psi: FockState) -> FockState:
    """``a^*(f) psi = sum_i f_i a_i^* psi``."""
    basis = psi.basis
    f = as_modes(f, basis.M)
    out = np.zeros(basis.dim, dtype=complex)
    for i in np.nonzero(f)[0]:
        out += f[i] * (basis.creator(i) @ psi.amplitudes)
    # ||a^*(f) chi||^2 = ||f||^2 ||chi||^2 + ||a(f) chi||^2 for the top-sector part chi
    chi = project_sector(basis.N_cut, psi)
    loss = np.vdot(f, f).real * chi.norm() ** 2 + annihilate(f, chi).norm() ** 2
    return psi.with_amplitudes(out, loss)


def annihilate(f, psi: FockState) -> FockState:
    """``a(f) psi = sum_i conj(f_i) a_i psi``."""
    basis = psi.basis
    f = as_modes(f, basis.M)
    out = np.zeros(basis.dim, dtype=complex)
    for i in np.nonzero(f)[0]:
        out += np.conj(f[i]) * (basis.annihilator(i) @ psi.amplitudes)
    return psi.with_amplitudes(out)


def second_quantization_matrix(J, basis: OccupationBasis) -> sp.csr_matrix:
    """Sparse matrix of ``dGamma(J) = sum_ij J_ij a_i^* a_j``."""
    mat = J.matrix if isinstance(J, ModeOperator) else np.asarray(J, dtype=complex)
    if mat.shape != (basis.M, basis.M):
        raise ShapeError(f"one-particle operator has shape {mat.shape}, basis has {basis.M} modes")
    out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for i, j in zip(*np.nonzero(mat)):
        out = out + mat[i, j] * basis.hop(i, j)
    return out.tocsr()


def second_quantize(J, psi: FockState) -> FockState:
    """``dGamma(J) psi``; sector preserving, so no truncation loss."""
    return psi.with_amplitudes(second_quantization_matrix(J, psi.basis) @ psi.amplitudes)


def project_sector(n: int, psi: FockState) -> FockState:
    s = psi.basis.sector_slice(n)
    out = np.zeros_like(psi.amplitudes)
    out[s] = psi.amplitudes[s]
    return psi.with_amplitudes(out)


def sector_norms(psi: FockState) -> np.ndarray:
    """``||P_n psi||`` for ``n = 0..N_cut``."""
    w = np.abs(psi.amplitudes) ** 2
    return np.sqrt(np.add.reduceat(w, psi.basis.offsets[:-1]))


def number_moment(j: int, psi: FockState) -> float:
    """``<psi, N^j psi> = sum_n n^j ||P_n psi||^2``."""
    if j < 0:
        raise ParameterError("moment order must be non-negative")
    n = np.arange(psi.basis.N_cut + 1, dtype=float)
    return float(np.sum(n**j * sector_norms(psi) ** 2))


def parity_norms(psi: FockState) -> dict:
    s = sector_norms(psi) ** 2
    return {"even": float(np.sqrt(s[0::2].sum())), "odd": float(np.sqrt(s[1::2].sum()))}


def apply_number_power(psi: FockState, exponent: float, shift: float = 0.0) -> FockState:
    """``(N + shift)**exponent psi``; for negative powers zero eigenvalues map to zero."""
    n = psi.basis.number_diagonal + shift
    if exponent == 0:
        return psi.with_amplitudes(psi.amplitudes.copy())
    with np.errstate(divide="ignore"):
        factor = np.where(n > 0, np.abs(n) ** exponent, 0.0)
    return psi.with_amplitudes(factor * psi.amplitudes)


def boundary_mass(psi: FockState, width: int = 2) -> float:
    """Weight in the ``width`` sectors just below the cutoff."""
    basis = psi.basis
    start = basis.offsets[max(basis.N_cut + 1 - width, 0)]
    return float(np.sum(np.abs(psi.amplitudes[start:]) ** 2))


def dump_state_csv(psi: FockState, stream) -> None:
    """Write ``index, occupation, re, im`` rows for the nonzero amplitudes."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["index", "occupation", "re", "im"])
    for k in np.nonzero(psi.amplitudes)[0]:
        occ = " ".join(str(int(v)) for v in psi.basis.occupations[k])
        a = psi.amplitudes[k]
        writer.writerow([int(k), occ, repr(float(a.real)), repr(float(a.imag))])
