import io

import numpy as np
import pytest

from oracles import embedding, first_quantized_hamiltonian, kron_ladders, symmetrizer
from hartreelab.errors import ParameterError, ShapeError
from hartreelab.fock import OccupationBasis
from hartreelab.generators import (
    FluctuationOperators,
    assemble_hamiltonian,
    assemble_L2,
    assemble_L3,
    assemble_L4,
    assemble_truncated,
    interaction_energy_density,
    phase_L0,
    write_matrix_coo,
)
from hartreelab.hartree import evolve, mean_field
from hartreelab.lattice import Grid, PotentialSpec, gaussian_packet, kinetic_matrix, plane_wave, potential_matrix, sample_potential

V_C = PotentialSpec.coulomb(0.7, 0.9, offset=0.05)
CASES = [(Grid(1, 2), 4), (Grid(1, 3), 3)]


class DenseGenerators:
    """Generators written out with tensor-product ladder matrices."""

    def __init__(self, grid, V, basis):
        self.cut = basis.N_cut + 3
        self.a = kron_ladders(grid.M, self.cut)
        self.ad = [x.T for x in self.a]
        self.E = embedding(basis, self.cut)
        self.K = kinetic_matrix(grid)
        self.Vm = potential_matrix(sample_potential(V, grid), grid)
        self.M = grid.M
        self.number = sum(c @ a for c, a in zip(self.ad, self.a))

    def restrict(self, X):
        return self.E.T @ X @ self.E

    def kinetic(self):
        return sum(self.K[x, y] * self.ad[x] @ self.a[y] for x in range(self.M) for y in range(self.M))

    def quartic(self, N):
        r = range(self.M)
        return sum(self.Vm[x, y] * self.ad[x] @ self.ad[y] @ self.a[y] @ self.a[x] for x in r for y in r) / (2 * N)

    def L2(self, u):
        r = range(self.M)
        mf = self.Vm @ np.abs(u) ** 2
        out = self.kinetic() + sum(mf[x] * self.ad[x] @ self.a[x] for x in r)
        out = out + sum(self.Vm[x, y] * np.conj(u[x]) * u[y] * self.ad[y] @ self.a[x] for x in r for y in r)
        pair = sum(0.5 * self.Vm[x, y] * u[x] * u[y] * self.ad[x] @ self.ad[y] for x in r for y in r)
        return out + pair + pair.conj().T

    def cubic_raising(self, u, N):
        r = range(self.M)
        return sum(self.Vm[x, y] * u[y] * self.ad[x] @ self.ad[y] @ self.a[x] for x in r for y in r) / np.sqrt(N)

    def L3(self, u, N, M_cutoff=None):
        A = self.cubic_raising(u, N)
        if M_cutoff is not None:
            A = A @ np.diag((np.rint(np.diag(self.number)) <= M_cutoff).astype(float))
        return A + A.conj().T


@pytest.mark.parametrize("grid, N_cut", CASES, ids=str)
def test_generators_match_dense_oracle(grid, N_cut):
    basis = OccupationBasis(grid.M, N_cut)
    ops = FluctuationOperators(grid, V_C, basis, 3)
    dense = DenseGenerators(grid, V_C, basis)
    u = gaussian_packet(grid, width=0.7).modes
    N = 3
    checks = {
        "H": (ops.hamiltonian(), dense.kinetic() + dense.quartic(N)),
        "L4": (ops.L4(), dense.quartic(N)),
        "L2": (ops.L2(u), dense.L2(u)),
        "L3": (ops.L3(u), dense.L3(u, N)),
        "U": (ops.generator("U", u), dense.L2(u) + dense.L3(u, N) + dense.quartic(N)),
        "U_tilde": (ops.generator("U_tilde", u), dense.L2(u) + dense.quartic(N)),
    }
    for M_cut in range(N_cut + 1):
        checks[f"trunc{M_cut}"] = (ops.generator("U_trunc", u, M_cutoff=M_cut),
                                   dense.L2(u) + dense.L3(u, N, M_cut) + dense.quartic(N))
    for name, (sparse, full) in checks.items():
        np.testing.assert_allclose(sparse.toarray(), dense.restrict(full), atol=1e-12, err_msg=name)


@pytest.mark.parametrize("M, N", [(2, 3), (3, 3), (4, 2), (3, 4)])
def test_hamiltonian_matches_first_quantization(M, N):
    grid = Grid(1, M)
    basis = OccupationBasis(M, N)
    H = assemble_hamiltonian(N, V_C, grid, basis).matrix.toarray()
    Vm = potential_matrix(sample_potential(V_C, grid), grid)
    S = symmetrizer(basis, N)
    ref = S.T @ first_quantized_hamiltonian(kinetic_matrix(grid), Vm, N) @ S
    s = basis.sector_slice(N)
    np.testing.assert_allclose(H[s, s], ref, atol=1e-12)


@pytest.mark.parametrize("kind", ["U", "U_tilde"])
def test_generators_hermitian(kind, rng):
    grid = Grid(1, 4)
    basis = OccupationBasis(4, 5)
    ops = FluctuationOperators(grid, V_C, basis, 2)
    u = rng.normal(size=4) + 1j * rng.normal(size=4)
    G = ops.generator(kind, u)
    assert abs(G - G.getH()).max() < 1e-13


def test_quadratic_and_quartic_parts_preserve_parity(rng):
    grid = Grid(1, 3)
    basis = OccupationBasis(3, 6)
    ops = FluctuationOperators(grid, V_C, basis, 2)
    G = (ops.generator("U_tilde", rng.normal(size=3) + 0j)).tocoo()
    assert np.all((basis.totals[G.row] - basis.totals[G.col]) % 2 == 0)
    L3 = ops.L3(rng.normal(size=3) + 0j).tocoo()
    assert np.all(np.abs(basis.totals[L3.row] - basis.totals[L3.col]) == 1)


def test_truncation_at_full_cutoff_is_exact():
    grid = Grid(1, 3)
    basis = OccupationBasis(3, 5)
    ops = FluctuationOperators(grid, V_C, basis, 2)
    u = gaussian_packet(grid).modes
    assert abs(ops.generator("U_trunc", u, M_cutoff=5) - ops.generator("U", u)).max() == 0
    assert abs(ops.generator("U_trunc", u, M_cutoff=0) - ops.generator("U", u)).max() > 0


def test_cubic_scales_as_inverse_root_N(rng):
    grid = Grid(1, 3)
    basis = OccupationBasis(3, 5)
    ops = FluctuationOperators(grid, V_C, basis)
    u = rng.normal(size=3) + 1j * rng.normal(size=3)
    base = ops.L3(u, 1)
    for N in (2, 4, 16):
        assert abs(ops.L3(u, N) * np.sqrt(N) - base).max() < 1e-13


def test_assembly_wrappers():
    grid = Grid(1, 3)
    basis = OccupationBasis(3, 4)
    phi = gaussian_packet(grid)
    ops = FluctuationOperators(grid, V_C, basis, 2)
    assert abs(assemble_L2(phi, V_C, basis).matrix - ops.L2(phi.modes)).max() == 0
    assert abs(assemble_L3(phi, V_C, 2, basis).matrix - ops.L3(phi.modes)).max() == 0
    assert abs(assemble_L4(V_C, 2, basis, grid).matrix - ops.L4()).max() == 0
    gen = assemble_truncated(phi, V_C, 2, 1, basis)
    assert gen.hermiticity_defect() < 1e-14
    buf = io.StringIO()
    write_matrix_coo(assemble_L4(V_C, 2, basis, grid), buf)
    assert len(buf.getvalue().splitlines()) == ops.L4().count_nonzero()


def test_mean_field_term_uses_hartree_potential():
    grid = Grid(1, 4)
    phi = gaussian_packet(grid)
    ops = FluctuationOperators(grid, V_C, OccupationBasis(4, 1))
    block = ops.L2(phi.modes).toarray()[1:, 1:]
    expected = kinetic_matrix(grid) + np.diag(mean_field(sample_potential(V_C, grid), phi))
    expected = expected + ops.V_matrix * np.outer(phi.modes, phi.modes.conj())
    np.testing.assert_allclose(block, expected, atol=1e-12)


def test_phase_for_uniform_state():
    grid = Grid(1, 4)
    phi = plane_wave(grid, 0)
    traj = evolve(phi, V_C, 0.01, 0.5)
    density = interaction_energy_density(V_C, phi)
    assert phase_L0(traj, V_C, 3, 0.0, 0.5) == pytest.approx(1.5 * 0.5 * density)
    assert phase_L0(traj, V_C, 3, 0.5, 0.0) == pytest.approx(-1.5 * 0.5 * density)


def test_errors():
    grid = Grid(1, 3)
    with pytest.raises(ShapeError):
        FluctuationOperators(grid, V_C, OccupationBasis(2, 2))
    ops = FluctuationOperators(grid, V_C, OccupationBasis(3, 2))
    with pytest.raises(ParameterError):
        ops.hamiltonian()
    with pytest.raises(ParameterError):
        ops.generator("U_trunc", np.ones(3), N=2)
    with pytest.raises(ParameterError):
        ops.generator("bogus", np.ones(3), N=2)
