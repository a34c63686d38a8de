import numpy as np
import pytest
import scipy.linalg as sla

from dnls_lab.ground_state import continue_branch
from dnls_lab.lattice import Lattice, hamiltonian_sparse
from dnls_lab.linearization import (
    LinearizationData,
    ModeNotFound,
    build_linearization,
    generalized_kernel,
    internal_mode,
    is_real_structure,
    nonresonance_certificate,
    sigma1,
    sigma3,
    sign_projection_defect,
    spectral_projections,
    spinor_inner,
)
from dnls_lab.potentials import q_star


def random_spinor(rng, m):
    return rng.normal(size=(2, m)) + 1j * rng.normal(size=(2, m))


@pytest.fixture(scope="module")
def small_branch():
    return continue_branch(q_star(Lattice.symmetric(100), 0.3))


@pytest.fixture(scope="module")
def small_lins(small_branch):
    return [build_linearization(small_branch, float(small_branch.omegas[k]), mode="dense") for k in (0, 3, 7)]


def test_zero_profile_gives_block_diagonal_operator():
    lat = Lattice.symmetric(20)
    qv = q_star(lat, 0.3).values
    m, om = lat.size, 0.01
    data = LinearizationData(om, qv, lat.sites, np.zeros(m), np.zeros(m), np.zeros(m), 4.0, np.zeros(m))
    w = np.sort(np.linalg.eigvals(data.dense()).real)
    h = np.linalg.eigvalsh(hamiltonian_sparse(qv, om).toarray())
    assert np.allclose(w, np.sort(np.concatenate([h, -h])), atol=1e-12)
    A = data.dense()
    assert np.all(A[:m, m:] == 0) and np.all(A[m:, :m] == 0)


def test_conjugation_anticommutes(lin, rng):
    R = random_spinor(rng, lin.size)
    assert np.linalg.norm(sigma1(lin.apply(R)) + lin.apply(sigma1(R))) <= 1e-12 * np.linalg.norm(R)


def test_pseudo_symmetry(lin, rng):
    u, v = random_spinor(rng, lin.size), random_spinor(rng, lin.size)
    lhs = spinor_inner(sigma3(lin.apply(u)), v)
    rhs = spinor_inner(sigma3(u), lin.apply(v))
    assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(u) * np.linalg.norm(v) * 10


def test_adjoint_identity(lin, rng):
    u, v = random_spinor(rng, lin.size), random_spinor(rng, lin.size)
    for k in (0, 1, 2):
        mu = k * lin.lam
        lhs = spinor_inner(lin.apply(u) - mu * u, v)
        rhs = spinor_inner(u, lin.apply_adjoint(v) - mu * v)
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(u) * np.linalg.norm(v)


def test_action_matches_sparse_matrix(lin, rng):
    R = random_spinor(rng, lin.size)
    assert np.allclose(lin.matrix() @ R.ravel(), lin.apply(R).ravel(), atol=1e-13)


def test_generalized_kernel(lin):
    g = generalized_kernel(lin)
    assert g["kernel_residual"] <= 1e-9
    assert g["jordan_remainder"] <= 1e-9 and abs(abs(g["jordan_c"]) - 1) <= 1e-6
    assert g["nilpotency"] <= 1e-8


def test_internal_mode_normalization_and_conjugate(lin):
    xi = lin.xi
    assert spinor_inner(xi, sigma3(xi)).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(lin.apply(xi) - lin.lam * xi) <= 1e-9 * np.linalg.norm(xi)
    s = sigma1(xi)
    assert np.linalg.norm(lin.apply(s) + lin.lam * s) <= 1e-9 * np.linalg.norm(xi)
    assert lin.lam > 4 + lin.omega and lin.xi_norm_before > 0


def test_dense_and_sparse_modes_agree(small_branch):
    om = float(small_branch.omegas[3])
    a = build_linearization(small_branch, om, mode="dense")
    b = build_linearization(small_branch, om, mode="sparse")
    assert a.lam == pytest.approx(b.lam, abs=1e-11)
    assert np.allclose(a.xi, b.xi, atol=1e-8)


def test_mode_constants_stable_along_branch(small_branch, small_lins):
    d = [L.omega - small_branch.E0 for L in small_lins]
    c_lam = [abs(L.lam - L.E1 - L.omega) / dd for L, dd in zip(small_lins, d)]
    c_xi = [(np.abs(L.xi[0] - L.phi1).sum() + np.abs(L.xi[1]).sum()) / dd for L, dd in zip(small_lins, d)]
    assert max(c_lam) / min(c_lam) <= 2.0
    assert max(c_xi) / min(c_xi) <= 2.0


def test_mode_window_refusal(lin):
    data = build_linearization_like(lin)
    with pytest.raises(ModeNotFound):
        internal_mode(data, window=1e-12)


def build_linearization_like(lin):
    return LinearizationData(lin.omega, lin.q_values, lin.sites, lin.phi, lin.dphi, lin.d2phi, lin.E1 + 0.5, lin.phi1)


def test_nonresonance(small_branch, lin):
    assert nonresonance_certificate(lin.lam, lin.omega)["ok"]
    bad = nonresonance_certificate(2.0 + lin.omega, lin.omega)
    assert not bad["ok"] and bad["margin"] == 0
    margins = []
    for om in small_branch.omegas:
        L = build_linearization(small_branch, float(om))
        margins.append(nonresonance_certificate(L.lam, L.omega)["margin"])
    assert min(margins) > 0
    # lam and omega are Lipschitz in omega with constants of order 1-5; no jumps
    assert np.max(np.abs(np.diff(margins))) <= 10 * np.max(np.diff(small_branch.omegas))


@pytest.fixture(scope="module")
def projections(lin):
    return spectral_projections(lin)


def test_projection_completeness(lin, projections, rng):
    u = random_spinor(rng, lin.size).ravel()
    P = projections
    total = P["P_ng"] @ u + P["P_disc"] @ u + P["P_c"] @ u
    assert np.linalg.norm(total - u) <= 1e-9 * np.linalg.norm(u)
    assert np.linalg.norm(P["P_c"] @ lin.xi.ravel()) <= 1e-9
    assert np.linalg.norm(P["P_c"] @ sigma1(lin.xi).ravel()) <= 1e-9


def test_projections_idempotent(lin, projections, rng):
    u = random_spinor(rng, lin.size).ravel()
    for key in ("P_ng", "P_disc", "P_c"):
        P = projections[key]
        assert np.linalg.norm(P @ (P @ u) - P @ u) <= 1e-8 * np.linalg.norm(u)
    both = projections["P_plus"] + projections["P_minus"]
    assert np.linalg.norm(both @ u - projections["P_c"] @ u) <= 1e-6 * np.linalg.norm(u)


def test_sign_projection_defect_shrinks_toward_bifurcation(small_lins):
    defects = [sign_projection_defect(L) for L in small_lins]
    assert defects[0] < defects[1] < defects[2]


def test_real_structure_predicate(rng):
    r = rng.normal(size=8) + 1j * rng.normal(size=8)
    assert is_real_structure(np.stack([r, np.conj(r)]))
    assert not is_real_structure(np.stack([r, r]))
