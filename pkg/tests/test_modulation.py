import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from dnls_lab.evolution import EvolutionConfig, evolve
from dnls_lab.lattice import LatticeField, japanese_bracket
from dnls_lab.linearization import sigma1
from dnls_lab.modulation import (
    DecompositionError,
    ModulationState,
    TubeExit,
    decompose,
    modulation_rhs,
    nonlinear_remainder,
    persistence_metric,
    split_discrete_continuous,
    stability_falsifier,
    track,
    write_modulation_csv,
)
from dnls_lab.normal_form import continuous_projection


def test_decompose_exact_family_member(branch):
    phi = branch.phi[3].values
    s = decompose(np.exp(0.3j) * phi, branch)
    assert s.omega == pytest.approx(branch.omegas[3], rel=1e-10)
    assert s.gamma == pytest.approx(0.3, abs=1e-10)
    assert np.linalg.norm(s.r) <= 1e-10 * np.linalg.norm(phi)


def test_decompose_phase_tangent(branch):
    phi = branch.phi[3].values
    s = decompose(phi + 1e-3j * phi, branch)
    assert s.gamma == pytest.approx(1e-3, rel=1e-3)
    assert max(map(abs, s.orthogonality)) <= 1e-10


def test_decompose_scale_tangent(branch):
    om = float(branch.omegas[3])
    delta = 1e-3 * (om - branch.E0)
    u = branch.phi[3].values + delta * branch.dphi_domega[3].values
    s = decompose(u, branch)
    assert s.omega - om == pytest.approx(delta, rel=1e-2)
    assert abs(s.gamma) <= 1e-12
    assert max(map(abs, s.orthogonality)) <= 1e-10


def test_decompose_far_from_branch_fails(branch):
    with pytest.raises(DecompositionError):
        decompose(-branch.phi[3].values * 0 + 1e-9 * branch.phi0.values, branch)


def test_split_internal_mode(lin):
    r = lin.xi[0] + lin.xi[1]  # R = xi + sigma1 xi
    z, f = split_discrete_continuous(r.astype(complex), lin)
    assert z == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(f) <= 1e-12


def test_split_kernel_direction(lin):
    # R = i sigma3 Phi lies in the generalized kernel
    z, f = split_discrete_continuous(1j * lin.phi, lin, check=False)
    assert abs(z) <= 1e-9 * np.linalg.norm(lin.phi)
    assert np.linalg.norm(continuous_projection(lin, f, with_mode=False)) <= 1e-9 * np.linalg.norm(lin.phi)


def test_split_completeness(lin, rng):
    r = (rng.normal(size=lin.size) + 1j * rng.normal(size=lin.size)) * np.exp(-np.abs(lin.sites) / 20.0)
    R = np.stack([r, np.conj(r)])
    z, f = split_discrete_continuous(r, lin, check=False)
    pc = continuous_projection(lin, f)
    kernel_part = f - continuous_projection(lin, f, with_mode=False)
    rebuilt = z * lin.xi + np.conj(z) * sigma1(lin.xi) + pc + kernel_part
    assert np.linalg.norm(rebuilt - R) <= 1e-9 * np.linalg.norm(R)
    with pytest.raises(DecompositionError):
        split_discrete_continuous(r, lin, check=True)


def test_rates_vanish_at_zero_remainder(branch):
    s = ModulationState(float(branch.omegas[3]), 0.0, np.zeros(branch.lattice.size, complex), (0.0, 0.0), 0)
    assert modulation_rhs(s, branch) == (0.0, 0.0)


@given(st.floats(0.05, 1.0), st.floats(-1, 1), st.floats(-1, 1))
def test_nonlinear_remainder_is_superlinear_part(p, a, b):
    phi = np.array([p, 0.5 * p, 0.0])
    r = np.array([a + 1j * b, 0.3 * b - 0.2j * a, 0.1 * a])
    u = phi + r
    direct = np.abs(u) ** 6 * u - phi**7 - 4 * phi**6 * r - 3 * phi**6 * np.conj(r)
    assert np.allclose(nonlinear_remainder(phi, r), -direct, atol=1e-12)


def test_falsifier_exact_member_and_brute_force(branch):
    phi = branch.phi[3].values
    d, kappa, mu = stability_falsifier(np.exp(0.7j) * phi, branch)
    assert d <= 1e-10 and kappa == pytest.approx(0.7, abs=1e-8)

    u = phi + 2e-3 * np.max(phi) * np.exp(-np.abs(branch.lattice.sites) / 5.0) * (1 + 1j)
    d, kappa, mu = stability_falsifier(u, branch)
    w = japanese_bracket(branch.lattice.sites) ** -2.0
    E0 = branch.E0

    def objective(x):
        k, s = x
        return np.linalg.norm(w * (u - np.exp(1j * k) * branch.solve_at(E0 + np.exp(s))[0]))

    best = minimize(objective, [kappa + 1e-3, np.log(mu - E0) + 1e-2], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 4000})
    assert d <= best.fun * (1 + 1e-6)


@pytest.fixture(scope="module")
def kicked(branch, lin):
    def run(eps, T=40.0):
        u0 = LatticeField(branch.lattice, branch.phi[3].values + eps * (lin.xi[0] + lin.xi[1]) + 0j)
        traj = evolve(branch.q, u0, EvolutionConfig(dt=0.04, T=T, obs_every=0.4, scheme="strang4"))
        return track(traj, branch, lin, falsifier_every=10)

    return {eps: run(eps) for eps in (1e-2, 5e-3)}


def test_tracking_internal_kick(kicked, lin):
    mt = kicked[1e-2]
    assert abs(mt.z[0]) == pytest.approx(1e-2, rel=1e-9)
    assert np.max(np.abs(mt.orthogonality)) <= 1e-10
    ratio, drift = persistence_metric(mt)
    assert ratio >= 0.5
    assert mt.lam == pytest.approx(lin.lam, rel=1e-6)
    # falsifier sampled on the subsampled grid and the final sample
    assert np.isfinite(mt.infdist[::10]).all() and np.isfinite(mt.infdist[-1])
    assert np.isnan(mt.infdist[1])


def test_omega_deviation_bound_shape(kicked):
    eps = sorted(kicked)
    dev = {e: np.max(np.abs(kicked[e].omega - kicked[e].omega0)) for e in eps}
    A = dev[eps[1]] / eps[1]
    assert dev[eps[0]] <= A * eps[0]
    # measured: quadratic in the kick
    assert dev[eps[1]] / dev[eps[0]] == pytest.approx(4.0, rel=0.1)


def test_persistence_drift_scaling(kicked):
    # drift of |z|^2 relative to |z(0)|^2 grows linearly with the kick
    rel = {e: persistence_metric(kicked[e])[1] / e**2 for e in kicked}
    assert rel[1e-2] / rel[5e-3] == pytest.approx(2.0, rel=0.2)


def test_standing_wave_tracking(branch, lin):
    u0 = LatticeField(branch.lattice, branch.phi[3].values + 0j)
    traj = evolve(branch.q, u0, EvolutionConfig(dt=0.04, T=10.0, obs_every=1.0, scheme="strang4"))
    mt = track(traj, branch, lin, falsifier=False)
    assert np.max(np.abs(mt.z)) <= 1e-9 and np.max(mt.f_wnorm) <= 1e-9 * np.linalg.norm(branch.phi[3].values)
    assert np.max(np.abs(mt.omega - mt.omega0)) <= 1e-9 * mt.omega0
    with pytest.raises(ValueError):
        persistence_metric(mt)


def test_tube_exit(branch, lin):
    u0 = LatticeField(branch.lattice, branch.phi[3].values + 1e-2 * (lin.xi[0] + lin.xi[1]) + 0j)
    traj = evolve(branch.q, u0, EvolutionConfig(dt=0.04, T=0.4, obs_every=0.4, scheme="strang4"))
    with pytest.raises(TubeExit):
        track(traj, branch, lin, falsifier=False, tube_radius=1e-6)


def test_modulation_csv(tmp_path, kicked):
    write_modulation_csv(tmp_path / "m.csv", kicked[5e-3])
    head = (tmp_path / "m.csv").read_text().splitlines()
    assert head[0].split() == ["t", "omega", "gamma", "abs_z", "arg_z", "f_wnorm", "r_norm", "infdist"]
    assert len(head) == len(kicked[5e-3].t) + 1
