import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dnls_lab.lattice import Lattice, LatticeField, apply_H
from dnls_lab.potentials import Potential, bound_states, delta_potential, q_star
from dnls_lab.scattering import (
    SingularWronskianError,
    eigen_complement,
    free_resolvent_kernel,
    jost,
    limiting_absorption_projection,
    resolvent_apply_H,
    resolvent_kernel_H,
    resonance_check,
    scattering_coefficients,
    theta_of,
)

LAT = Lattice.symmetric(64)
FREE = Potential(LatticeField(LAT, np.zeros(LAT.size)))
Q03 = q_star(LAT, 0.3)


def recursion_residual(q, d):
    """Interior residual of (H - lam) f for both Jost solutions."""
    out = 0.0
    for f in (d.f_plus, d.f_minus):
        r = apply_H(q, f).values - d.lam * f.values
        out = max(out, np.max(np.abs(r[1:-1])) / np.max(np.abs(f.values)))
    return out


def test_free_jost_solutions():
    th = np.pi / 3
    d = jost(FREE, th)
    n = LAT.sites
    assert np.allclose(d.f_plus.values, np.exp(-1j * n * th), atol=1e-12)
    assert np.allclose(d.f_minus.values, np.exp(1j * n * th), atol=1e-12)
    assert d.wronskian == pytest.approx(-2j * np.sin(th), abs=1e-12)


def test_jost_recursion_and_wronskian_constancy():
    d = jost(Q03, np.pi / 2)
    assert recursion_residual(Q03, d) <= 1e-10
    assert d.spread <= 1e-9


def test_jost_decay_direction_off_band():
    d = jost(Q03, -0.5j)
    fp = np.abs(d.f_plus.values)
    assert fp[LAT.index(30)] < fp[LAT.index(10)] < fp[LAT.index(-10)] < fp[LAT.index(-30)]


def test_jost_rejects_upper_half_plane():
    with pytest.raises(ValueError):
        jost(Q03, 0.3j)


def test_resonance_examples():
    W0, _, ok = resonance_check(FREE)
    assert abs(W0) < 1e-12 and not ok
    assert resonance_check(Q03)[2]
    assert resonance_check(delta_potential(-0.5, LAT))[2]


@given(st.floats(0.05, np.pi - 0.05))
def test_unitarity_of_scattering(theta):
    sc = scattering_coefficients(Q03, theta)
    assert abs(sc.T) ** 2 + abs(sc.R_plus) ** 2 == pytest.approx(1.0, abs=1e-10)
    assert abs(sc.T) ** 2 + abs(sc.R_minus) ** 2 == pytest.approx(1.0, abs=1e-10)


def test_free_scattering_is_transparent():
    sc = scattering_coefficients(FREE, 1.0)
    assert sc.T == pytest.approx(1.0) and abs(sc.R_plus) < 1e-12


def test_theta_branches():
    assert theta_of(2.0, side=1) == pytest.approx(-np.pi / 2)
    assert theta_of(2.0, side=-1) == pytest.approx(np.pi / 2)
    assert theta_of(-1.0).imag < 0
    with pytest.raises(ValueError):
        theta_of(1.0)


def test_free_resolvent_values():
    a = np.arccosh(1.5)
    assert free_resolvent_kernel(-1.0, 0, 0) == pytest.approx(1 / np.sqrt(5), rel=1e-12)
    assert free_resolvent_kernel(-1.0, 3, 4) == pytest.approx(np.exp(-a) / np.sqrt(5), rel=1e-12)
    assert abs(free_resolvent_kernel(-1e8, 0, 0)) < 1e-7
    # (-Delta + 1) R delta_0 = delta_0
    col = LatticeField(LAT, np.array([free_resolvent_kernel(-1.0, n, 0) for n in LAT.sites]))
    out = apply_H(FREE, col).values + col.values
    assert np.allclose(out[1:-1], LAT.delta(0).values[1:-1], atol=1e-12)


def test_resolvent_H_reduces_to_free_on_band():
    for side in (1, -1):
        for mu, nu in [(0, 0), (2, -3)]:
            assert resolvent_kernel_H(FREE, 1.3, side, mu, nu) == pytest.approx(
                free_resolvent_kernel(1.3, mu, nu, side), abs=1e-12
            )


def test_resolvent_H_residual_and_symmetry():
    u = LAT.delta(0)
    R = resolvent_apply_H(Q03, 2.0, 1, u)
    res = apply_H(Q03, R).values - 2.0 * R.values - u.values
    assert np.max(np.abs(res[1:-1])) <= 1e-8
    assert resolvent_kernel_H(Q03, 2.0, 1, 3, -5) == pytest.approx(resolvent_kernel_H(Q03, 2.0, 1, -5, 3), abs=1e-10)


def test_resolvent_refuses_threshold_resonance():
    with pytest.raises(SingularWronskianError):
        resolvent_kernel_H(FREE, 0.0, 1, 0, 0)


@pytest.fixture(scope="module")
def q_wide():
    # eigenvectors must fit the window for the eigensolve oracle
    return q_star(Lattice.symmetric(1024), 0.3)


def test_projection_kills_bound_state(q_wide):
    vals, vecs = bound_states(q_wide)
    P = limiting_absorption_projection(q_wide, LatticeField(q_wide.lattice, vecs[0]))
    assert P.norm() <= 1e-6


def test_projection_of_delta_matches_eigen_complement(q_wide):
    u = q_wide.lattice.delta(0)
    P = limiting_absorption_projection(q_wide, u)
    assert np.linalg.norm(P.values - eigen_complement(q_wide, u).values) <= 1e-6


def test_projection_is_identity_on_continuous_data():
    # every nonzero q on the line has an out-of-band eigenvalue, so the
    # identity case is tested on data already orthogonal to them
    q = delta_potential(-0.5, LAT)
    rng = np.random.default_rng(7)
    u = eigen_complement(q, LatticeField(LAT, np.where(np.abs(LAT.sites) < 6, rng.normal(size=LAT.size), 0.0)))
    P = limiting_absorption_projection(q, u)
    assert np.linalg.norm(P.values - u.values) <= 1e-6 * u.norm()
