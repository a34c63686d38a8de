import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dnls_lab.ground_state import (
    NewtonDivergence,
    NotGroundStateError,
    bifurcation_seed,
    continue_branch,
    default_eta,
    load_branch,
    lowest_state,
    residual,
    save_branch,
    solve_ground_state,
)
from dnls_lab.lattice import Lattice, LatticeField
from dnls_lab.potentials import delta_potential


def test_seed_vanishes_at_bifurcation(branch):
    assert np.all(bifurcation_seed(branch.phi0, branch.E0, branch.E0).values == 0)
    with pytest.raises(ValueError):
        bifurcation_seed(branch.phi0, branch.E0, branch.E0 - 1e-6)


@given(st.floats(1e-7, 1e-2))
def test_seed_power_law(branch, d):
    a = bifurcation_seed(branch.phi0, branch.E0, branch.E0 + d).values
    b = bifurcation_seed(branch.phi0, branch.E0, branch.E0 + 2 * d).values
    assert np.allclose(b, 2 ** (1 / 6) * a, rtol=1e-12, atol=0)


@given(st.floats(1e-6, 1e-3))
def test_seed_balances_along_phi0(branch, d):
    om = branch.E0 + d
    seed = bifurcation_seed(branch.phi0, branch.E0, om).values
    c = np.linalg.norm(seed)
    # the seed is built to cancel the linear term along phi0; only truncation of phi0 remains
    proj = residual(branch.q, om, seed) @ branch.phi0.values / c
    assert abs(proj) <= 1e-9 * d + 1e-14


def test_newton_converges_quickly(branch):
    om = branch.E0 + 1e-3
    seed = bifurcation_seed(branch.phi0, branch.E0, om)
    phi = solve_ground_state(branch.q, om, seed, max_iter=10)
    assert np.linalg.norm(residual(branch.q, om, phi.values)) <= 1e-12


def test_negative_seed_is_rejected(branch):
    om = float(branch.omegas[2])
    with pytest.raises(NotGroundStateError):
        solve_ground_state(branch.q, om, -1.0 * branch.phi[2])


def test_newton_divergence_reported(branch):
    om = float(branch.omegas[-1])
    with pytest.raises(NewtonDivergence):
        solve_ground_state(branch.q, om, branch.phi[-1] * 3.0, max_iter=1)


def test_tiny_seed_falls_to_trivial_solution_and_is_rejected(branch):
    om = float(branch.omegas[-1])
    with pytest.raises(NotGroundStateError):
        solve_ground_state(branch.q, om, branch.phi0 * 1e-3)


def test_halving_distance_shrinks_norm(branch):
    om = float(branch.omegas[0])
    d = om - branch.E0
    a = branch.solve_at(om)[0]
    b = branch.solve_at(branch.E0 + d / 2)[0]
    assert np.linalg.norm(b) / np.linalg.norm(a) == pytest.approx(2 ** (-1 / 6), rel=1e-2)


def test_mass_derivative_self_consistent(branch):
    assert np.all(np.abs(branch.mass_prime - branch.mass_prime_fd) <= 1e-6 * np.abs(branch.mass_prime))


def test_bifurcation_ratio_stable(branch):
    ratios = []
    for k in range(3):
        om = branch.E0 + branch.eta * 2.0**-k
        phi = branch.solve_at(om)[0]
        c = np.linalg.norm(bifurcation_seed(branch.phi0, branch.E0, om).values)
        ratios.append(np.linalg.norm(phi / c - branch.phi0.values) / (om - branch.E0))
    assert max(ratios) / min(ratios) <= 2.0


def test_branch_profiles_decay_and_stay_positive(branch):
    assert all(f.ok and f.rate > 0 for f in branch.decay_fits())
    assert all(np.all(p.values > 0) for p in branch.phi)
    assert np.all(np.diff(branch.mass) > 0)


def test_branch_grid_validation(q03):
    E0, _ = lowest_state(q03)
    with pytest.raises(ValueError):
        continue_branch(q03, omega_grid=[E0 + 2e-5, E0 + 1e-5])
    with pytest.raises(ValueError):
        continue_branch(q03, omega_grid=[E0])


def test_lowest_state_requires_negative_eigenvalue():
    with pytest.raises(ValueError):
        lowest_state(delta_potential(0.5, Lattice.symmetric(64)))


def test_default_eta_caps():
    assert default_eta(1.0, 5.0) == 0.1
    assert default_eta(1e-4, 4.2) == pytest.approx(5e-5)
    assert default_eta(1.0, 4.04) == pytest.approx(0.005)


def test_branch_save_load_roundtrip(tmp_path, branch):
    save_branch(tmp_path / "b", branch)
    back = load_branch(tmp_path / "b")
    assert np.array_equal(back.omegas, branch.omegas)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(back.phi, branch.phi))
    assert back.E0 == branch.E0


def test_branch_load_detects_tampering(tmp_path, branch):
    save_branch(tmp_path / "b", branch)
    p = tmp_path / "b" / "manifest.json"
    p.write_text(p.read_text().replace(branch_hash(p), "0" * 64))
    with pytest.raises(ValueError):
        load_branch(tmp_path / "b")


def branch_hash(path):
    import json

    return json.loads(path.read_text())["q_hash"]


def test_solve_at_matches_grid_point(branch):
    om = float(branch.omegas[4])
    phi, d1, _ = branch.solve_at(om)
    assert np.allclose(phi, branch.phi[4].values, rtol=0, atol=1e-12 * np.max(phi))
    assert np.allclose(d1, branch.dphi_domega[4].values, rtol=1e-8, atol=0)
