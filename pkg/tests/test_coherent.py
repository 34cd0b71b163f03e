import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, gammaln

from conftest import random_state
from oracles import symmetrizer
from hartreelab.coherent import (
    apply_weyl,
    coherent_state,
    d_N,
    displaced_product_amplitudes,
    displaced_product_state,
    product_state,
    sector_norms_of_displaced_product,
    single_mode_cutoff,
    tail_rule_cutoff,
    weyl_generator,
)
from hartreelab.errors import CapacityError, ParameterError, TruncationError
from hartreelab.fock import OccupationBasis, annihilate, number_moment, sector_norms, vacuum
from hartreelab.lattice import Grid, gaussian_packet


@pytest.mark.parametrize("mean, cutoff", [(0.5, 12), (2.0, 19), (4.0, 26), (8.0, 36), (16.0, 53), (64.0, 131)])
def test_tail_rule_values(mean, cutoff):
    assert tail_rule_cutoff(mean) == cutoff


@given(st.floats(0.01, 60.0))
def test_tail_rule_bounds_poisson_tail(mean):
    from scipy.stats import poisson

    K = tail_rule_cutoff(mean)
    assert K >= mean + 8 * np.sqrt(mean)
    assert poisson.sf(K, mean) < 1e-13


@pytest.mark.parametrize("mean", [0.5, 2.0, 8.0])
def test_poisson_statistics(mean):
    basis = OccupationBasis(1, tail_rule_cutoff(mean))
    psi = coherent_state(np.array([np.sqrt(mean)]), basis)
    m = number_moment(1, psi)
    assert abs(m - mean) < 1e-8
    assert abs(number_moment(2, psi) - m**2 - mean) < 1e-8
    n = np.arange(basis.N_cut + 1)
    pmf = np.exp(-mean + n * np.log(mean) - gammaln(n + 1))
    np.testing.assert_allclose(sector_norms(psi) ** 2, pmf, atol=1e-15)


def test_coherent_state_requires_large_cutoff():
    with pytest.raises(TruncationError) as info:
        coherent_state(np.array([2.0, 0.0]), OccupationBasis(2, 10))
    assert info.value.required_cutoff == tail_rule_cutoff(4.0)


def test_coherent_state_is_eigenvector(rng):
    basis = OccupationBasis(2, 30)
    f = 0.7 * (rng.normal(size=2) + 1j * rng.normal(size=2))
    psi = coherent_state(f, basis)
    g = rng.normal(size=2) + 1j * rng.normal(size=2)
    lowered = annihilate(g, psi).amplitudes
    expected = np.vdot(g, f) * psi.amplitudes
    low = basis.totals < basis.N_cut
    np.testing.assert_allclose(lowered[low], expected[low], atol=1e-12)


def test_weyl_matches_closed_form(rng):
    basis = OccupationBasis(3, 26)
    f = 0.5 * (rng.normal(size=3) + 1j * rng.normal(size=3))
    direct = coherent_state(f, basis).amplitudes
    np.testing.assert_allclose(apply_weyl(f, vacuum(basis)).amplitudes, direct, atol=1e-10)


def test_weyl_generator_single_mode_dense():
    basis = OccupationBasis(1, 40)
    a = np.diag(np.sqrt(np.arange(1, 41.0)), 1)
    alpha = 0.8 - 0.3j
    W = expm(alpha * a.T - np.conj(alpha) * a)
    np.testing.assert_allclose(expm(-1j * weyl_generator([alpha], basis).toarray()), W, atol=1e-12)


def test_weyl_composition_and_covariance(rng):
    basis = OccupationBasis(2, 30)
    for _ in range(5):
        psi = random_state(basis, rng, max_sector=2)
        f, g = (0.4 * (rng.normal(size=2) + 1j * rng.normal(size=2)) for _ in range(2))
        lhs = apply_weyl(f, apply_weyl(g, psi)).amplitudes
        rhs = np.exp(-1j * np.vdot(f, g).imag) * apply_weyl(f + g, psi).amplitudes
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)
        i = int(rng.integers(0, 2))
        displaced = apply_weyl(f, psi)
        moved = apply_weyl(-f, displaced.with_amplitudes(basis.annihilator(i) @ displaced.amplitudes))
        np.testing.assert_allclose(moved.amplitudes, basis.annihilator(i) @ psi.amplitudes + f[i] * psi.amplitudes,
                                   atol=1e-9)


def test_weyl_reports_truncation():
    with pytest.raises(TruncationError):
        apply_weyl(np.array([3.0]), vacuum(OccupationBasis(1, 10)))


@pytest.mark.parametrize("M, N", [(2, 2), (3, 3), (2, 4)])
def test_product_state_matches_tensor_power(M, N):
    grid = Grid(1, M)
    phi = gaussian_packet(grid, width=0.9)
    basis = OccupationBasis(M, N)
    psi = product_state(phi, N, basis)
    tensor = phi.modes
    for _ in range(N - 1):
        tensor = np.kron(tensor, phi.modes)
    np.testing.assert_allclose(symmetrizer(basis, N) @ psi.amplitudes[basis.sector_slice(N)], tensor, atol=1e-13)
    assert psi.norm() == pytest.approx(1.0)


def test_product_state_errors():
    basis = OccupationBasis(2, 3)
    with pytest.raises(CapacityError):
        product_state(np.array([1.0, 0]), 4, basis)
    with pytest.raises(ParameterError):
        product_state(np.array([1.0, 0]), -1, basis)


@pytest.mark.parametrize("N, value", [(1, 1.6487212707), (2, 1.9221155141)])
def test_d_N_values(N, value):
    assert d_N(N) == pytest.approx(value, abs=1e-9)


def test_d_N_scaling():
    N = np.arange(1, 10**6 + 1)
    ratio = d_N(N) / N**0.25
    assert ratio.min() >= 0.5 and ratio.max() <= 2.0
    assert ratio[-1] == pytest.approx((2 * np.pi) ** 0.25, rel=1e-6)


@pytest.mark.parametrize("N", [0, 1, 3, 7, 20])
def test_displaced_amplitudes_match_laguerre(N):
    c = displaced_product_amplitudes(N)
    alpha = -np.sqrt(N)
    ref = np.zeros(len(c))
    for m in range(len(c)):
        lo, hi = min(m, N), max(m, N)
        log_pref = 0.5 * (gammaln(lo + 1) - gammaln(hi + 1)) - 0.5 * N
        ref[m] = np.exp(log_pref) * abs(alpha) ** (hi - lo) * abs(eval_genlaguerre(lo, hi - lo, N))
    np.testing.assert_allclose(np.abs(c), ref, atol=1e-12)
    assert np.linalg.norm(c) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("N", [1, 2, 4, 6])
def test_single_mode_sector_norms_match_full_space(N):
    grid = Grid(1, 2)
    phi = gaussian_packet(grid, width=0.8)
    basis = OccupationBasis(2, single_mode_cutoff(N))
    full = apply_weyl(-np.sqrt(N) * phi.modes, product_state(phi, N, basis))
    np.testing.assert_allclose(sector_norms(full), sector_norms_of_displaced_product(phi, N), atol=1e-10)
    np.testing.assert_allclose(displaced_product_state(phi, N, basis).amplitudes, full.amplitudes, atol=1e-10)


def test_displaced_amplitudes_cutoff_errors():
    with pytest.raises(TruncationError):
        displaced_product_amplitudes(16, cutoff=20)
    with pytest.raises(ParameterError):
        sector_norms_of_displaced_product(np.array([1.0, 1.0]), 4)
