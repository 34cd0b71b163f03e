import io

import numpy as np
import pytest

from hartreelab.errors import ParameterError
from hartreelab.hartree import energy, evolve, strichartz_norm, sup_potential_slice, write_trajectory_csv
from hartreelab.lattice import FieldVector, Grid, PotentialSpec, gaussian_packet, kinetic_matrix, plane_wave
from scipy.linalg import expm

V_C = PotentialSpec.coulomb()


@pytest.mark.parametrize("grid", [Grid(1, 8), Grid(2, 4, 0.8)], ids=str)
def test_free_flow_is_exact(grid):
    phi = gaussian_packet(grid, width=1.3)
    traj = evolve(phi, PotentialSpec(), 0.05, 1.0)
    exact = expm(-1j * 1.0 * kinetic_matrix(grid)) @ phi.values
    np.testing.assert_allclose(traj.states[-1], exact, atol=1e-12)


@pytest.mark.parametrize("grid", [Grid(1, 6), Grid(1, 9, 0.5), Grid(2, 4)], ids=str)
def test_mass_and_energy(grid):
    phi = gaussian_packet(grid)
    traj = evolve(phi, V_C, 0.002, 1.0, stride=50)
    masses = [traj.field(k).mass for k in range(len(traj))]
    np.testing.assert_allclose(masses, 1.0, atol=1e-12)
    drift = abs(energy(traj.field(len(traj) - 1), V_C) - energy(phi, V_C))
    assert drift < 1e-5


def test_plane_wave_acquires_only_a_phase():
    grid = Grid(1, 6)
    phi = plane_wave(grid, 1)
    traj = evolve(phi, V_C, 0.01, 0.5)
    ratio = traj.states[-1] / phi.values
    np.testing.assert_allclose(np.abs(ratio), 1.0, atol=1e-12)
    np.testing.assert_allclose(ratio, ratio[0], atol=1e-12)


def test_time_reversal():
    grid = Grid(1, 6)
    phi = gaussian_packet(grid)
    fwd = evolve(phi, V_C, 0.01, 0.6)
    back = evolve(fwd.field(len(fwd) - 1).normalized(), V_C, 0.01, -0.6)
    np.testing.assert_allclose(back.states[-1], phi.values, atol=1e-10)
    assert back.times[-1] == pytest.approx(-0.6)


def test_second_order_in_dt():
    grid = Grid(1, 6)
    phi = gaussian_packet(grid)
    ref = evolve(phi, V_C, 0.1 / 64, 1.0).states[-1]
    errs = [np.linalg.norm(evolve(phi, V_C, dt, 1.0).states[-1] - ref) for dt in (0.1, 0.05, 0.025)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.6) & (ratios < 4.4))


def test_trajectory_lookup():
    traj = evolve(gaussian_packet(Grid(1, 4)), V_C, 0.01, 0.5, stride=5)
    assert len(traj) == 11
    assert traj.step_index(0.2) == 4
    assert traj.covers(0.0, 0.5) and not traj.covers(0.0, 0.6)
    with pytest.raises(ParameterError):
        traj.at(0.7)


@pytest.mark.parametrize("kwargs", [dict(dt=0.0, T=1.0), dict(dt=0.3, T=1.0), dict(dt=0.1, T=1.0, stride=3)])
def test_invalid_arguments(kwargs):
    with pytest.raises(ParameterError):
        evolve(gaussian_packet(Grid(1, 4)), V_C, **kwargs)


def test_unnormalized_initial_state():
    grid = Grid(1, 4)
    with pytest.raises(ParameterError):
        evolve(FieldVector(grid, 2 * np.ones(4)), V_C, 0.1, 1.0)


def test_diagnostics():
    grid = Grid(1, 4)
    phi = plane_wave(grid, 0)
    traj = evolve(phi, V_C, 0.1, 1.0)
    # uniform state: sup norm squared is 1/M at every time
    assert strichartz_norm(traj) == pytest.approx(np.sqrt(1.0 / 4))
    Vs = np.array([1.0, 0.5, 0.25, 0.5])
    assert sup_potential_slice(V_C, phi) == pytest.approx(np.sqrt(np.sum(Vs**2) / 4))
    buf = io.StringIO()
    write_trajectory_csv(traj, V_C, buf, ["config {}"])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# config {}" and lines[1].startswith("time,mass")
    assert len(lines) == 2 + len(traj)
