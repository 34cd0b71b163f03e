import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_state
from oracles import embedding, kron_ladders, partial_trace_density, symmetrizer
from hartreelab.errors import CapacityError, ParameterError, ShapeError
from hartreelab.fock import (
    FockState,
    ModeOperator,
    OccupationBasis,
    annihilate,
    apply_create,
    apply_number_power,
    basis_size,
    basis_state,
    boundary_mass,
    create,
    dump_state_csv,
    number_moment,
    parity_norms,
    second_quantization_matrix,
    sector_norms,
    vacuum,
)
from hartreelab.observe import reduced_density


@pytest.mark.parametrize("M, N_cut", [(1, 5), (2, 4), (3, 4), (4, 3)])
def test_ladders_match_tensor_product(M, N_cut):
    basis = OccupationBasis(M, N_cut)
    E = embedding(basis, N_cut)
    for i, a in enumerate(kron_ladders(M, N_cut)):
        np.testing.assert_allclose(basis.annihilator(i).toarray(), E.T @ a @ E, atol=1e-14)
        np.testing.assert_allclose(basis.creator(i).toarray(), E.T @ a.T @ E, atol=1e-14)


@given(st.integers(1, 5), st.integers(0, 7))
def test_basis_enumeration(M, N_cut):
    basis = OccupationBasis(M, N_cut)
    assert basis.dim == basis_size(M, N_cut)
    assert np.all(np.diff(basis.totals) >= 0)
    np.testing.assert_array_equal(basis.occupations.sum(axis=1), basis.totals)
    assert len({tuple(o) for o in basis.occupations}) == basis.dim
    for k in range(0, basis.dim, max(1, basis.dim // 7)):
        assert basis.index(basis.occupations[k]) == k


def test_capacity_and_parameters():
    with pytest.raises(CapacityError):
        OccupationBasis(10, 20, max_dim=1000)
    with pytest.raises(ParameterError):
        OccupationBasis(0, 3)
    with pytest.raises(ParameterError):
        OccupationBasis(2, -1)


def test_ccr_below_cutoff(rng):
    basis = OccupationBasis(3, 6)
    for _ in range(10):
        psi = random_state(basis, rng, max_sector=5).amplitudes
        i, j = rng.integers(0, 3, size=2)
        a_i, a_j, c_j = basis.annihilator(i), basis.annihilator(j), basis.creator(j)
        np.testing.assert_allclose(a_i @ (c_j @ psi) - c_j @ (a_i @ psi), (i == j) * psi, atol=1e-12)
        np.testing.assert_allclose(a_i @ (a_j @ psi), a_j @ (a_i @ psi), atol=1e-12)


def test_number_operator_is_second_quantized_identity():
    basis = OccupationBasis(3, 5)
    number = second_quantization_matrix(np.eye(3), basis)
    np.testing.assert_allclose(number.toarray(), np.diag(basis.number_diagonal))


def test_second_quantization_is_sector_preserving_and_hermitian(rng):
    basis = OccupationBasis(3, 4)
    A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    J = A + A.conj().T
    G = second_quantization_matrix(J, basis).toarray()
    np.testing.assert_allclose(G, G.conj().T, atol=1e-13)
    for n in range(basis.N_cut + 1):
        s = basis.sector_slice(n)
        mask = np.ones(basis.dim, bool)
        mask[s] = False
        assert np.abs(G[np.ix_(mask, np.arange(basis.dim)[s])]).max(initial=0) == 0
    # one-particle sector carries J itself
    np.testing.assert_allclose(G[basis.sector_slice(1), basis.sector_slice(1)], J, atol=1e-13)


def test_second_quantization_shape_check():
    with pytest.raises(ShapeError):
        second_quantization_matrix(np.eye(2), OccupationBasis(3, 2))
    with pytest.raises(ShapeError):
        ModeOperator(np.ones((2, 3)))


def test_creation_loss_is_exact(rng):
    basis = OccupationBasis(2, 4)
    big = OccupationBasis(2, 5)
    psi = random_state(basis, rng)
    f = rng.normal(size=2) + 1j * rng.normal(size=2)
    up = create(f, psi)
    lifted = FockState(big, embedding(big, 5).T @ embedding(basis, 5) @ psi.amplitudes)
    full = create(f, lifted)
    assert abs(up.leakage - sector_norms(full)[5] ** 2) < 1e-12
    assert apply_create(0, basis_state(basis, [4, 0])).leakage == pytest.approx(5.0)


def test_ladder_bounds(rng):
    basis = OccupationBasis(3, 6)
    for _ in range(20):
        psi = random_state(basis, rng)
        f = rng.normal(size=3) + 1j * rng.normal(size=3)
        nf = np.linalg.norm(f)
        assert annihilate(f, psi).norm() <= nf * np.sqrt(number_moment(1, psi)) * (1 + 1e-12)
        assert create(f, psi).norm() <= nf * np.sqrt(number_moment(1, psi) + 1) * (1 + 1e-12)


@pytest.mark.parametrize("M, N", [(2, 3), (3, 3), (3, 4), (4, 2)])
def test_reduced_density_matches_partial_trace(M, N, rng):
    basis = OccupationBasis(M, N)
    s = basis.sector_slice(N)
    amps = np.zeros(basis.dim, complex)
    amps[s] = rng.normal(size=basis.sector_dim(N)) + 1j * rng.normal(size=basis.sector_dim(N))
    amps /= np.linalg.norm(amps)
    gamma = reduced_density(FockState(basis, amps)).matrix
    Psi = symmetrizer(basis, N) @ amps[s]
    np.testing.assert_allclose(gamma, partial_trace_density(Psi, M, N), atol=1e-12)


def test_moments_parity_and_boundary():
    basis = OccupationBasis(2, 4)
    amps = np.zeros(basis.dim, complex)
    amps[basis.index([1, 0])] = np.sqrt(0.5)
    amps[basis.index([2, 2])] = np.sqrt(0.5)
    psi = FockState(basis, amps)
    assert number_moment(0, psi) == pytest.approx(1.0)
    assert number_moment(1, psi) == pytest.approx(2.5)
    assert number_moment(2, psi) == pytest.approx(8.5)
    p = parity_norms(psi)
    assert p["even"] ** 2 == pytest.approx(0.5) and p["odd"] ** 2 == pytest.approx(0.5)
    assert boundary_mass(psi) == pytest.approx(0.5)
    np.testing.assert_allclose(apply_number_power(psi, 0.5, shift=1).amplitudes,
                               np.sqrt(basis.number_diagonal + 1) * amps)
    assert apply_number_power(vacuum(basis), -1).norm() == 0


def test_state_arithmetic_and_dump(rng):
    basis = OccupationBasis(2, 2)
    psi = random_state(basis, rng)
    phi = random_state(basis, rng)
    assert (psi + phi - phi).inner(psi) == pytest.approx(1.0)
    assert (2 * psi).norm() == pytest.approx(2.0)
    with pytest.raises(ShapeError):
        psi.inner(vacuum(OccupationBasis(3, 2)))
    buf = io.StringIO()
    dump_state_csv(basis_state(basis, [1, 1]), buf)
    assert buf.getvalue().splitlines()[1].startswith("4,1 1,1.0,0.0")
