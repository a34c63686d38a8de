import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import solve_banded

from dnls_lab.lattice import (
    Lattice,
    LatticeField,
    WeightedNormSpec,
    apply_H,
    apply_laplacian,
    fit_exponential_decay,
    hamiltonian_banded,
    hamiltonian_sparse,
    inner,
    japanese_bracket,
    load_field,
    save_field,
    weighted_norm,
)
from dnls_lab.potentials import Potential, q_star

LAT = Lattice.symmetric(40)


def window_values(field, lo, hi):
    return [field(n) for n in range(lo, hi + 1)]


def test_lattice_rejects_bad_windows():
    with pytest.raises(ValueError):
        Lattice(1, 100)
    with pytest.raises(ValueError):
        Lattice(-5, 5)
    with pytest.raises(IndexError):
        LAT.index(41)


def test_field_rejects_nonfinite_and_wrong_shape():
    with pytest.raises(ValueError):
        LatticeField(LAT, np.full(LAT.size, np.nan))
    with pytest.raises(ValueError):
        LatticeField(LAT, np.zeros(3))


def test_laplacian_of_delta():
    out = apply_laplacian(LAT.delta(0))
    assert window_values(out, -2, 2) == [0, 1, -2, 1, 0]


def test_laplacian_annihilates_constants_in_interior():
    out = apply_laplacian(LatticeField(LAT, np.ones(LAT.size)))
    assert np.all(out.values[1:-1] == 0)


@given(st.floats(min_value=-np.pi, max_value=np.pi))
def test_laplacian_plane_wave_symbol(theta):
    u = LatticeField(LAT, np.exp(1j * LAT.sites * theta))
    out = apply_laplacian(u).values[1:-1]
    assert np.allclose(out, -2 * (1 - np.cos(theta)) * u.values[1:-1], atol=1e-12)


def test_H_examples():
    zero = Potential(LatticeField(LAT, np.zeros(LAT.size)))
    assert window_values(apply_H(zero, LAT.delta(0)), -1, 1) == [-1, 2, -1]
    d0 = Potential(LAT.delta(0))
    assert window_values(apply_H(d0, LAT.delta(0)), -1, 1) == [-1, 3, -1]


def test_H_quadratic_form_real(rng):
    q = q_star(LAT)
    u = LatticeField(LAT, rng.normal(size=LAT.size) + 1j * rng.normal(size=LAT.size))
    assert abs(inner(apply_H(q, u).values, u.values).imag) <= 1e-12


def test_H_rejects_foreign_lattice():
    with pytest.raises(ValueError):
        apply_H(q_star(Lattice.symmetric(50)), LAT.delta(0))


def test_weighted_norm_examples():
    for p, s in [(1, 0), (2, 1), (np.inf, 3)]:
        assert weighted_norm(LAT.delta(0), WeightedNormSpec(p, s)) == pytest.approx(1.0)
    assert weighted_norm(LAT.delta(1), WeightedNormSpec(2, 1)) == pytest.approx(np.sqrt(2))
    geo = LatticeField(LAT, 2.0 ** -np.abs(LAT.sites))
    # geometric-series oracle: 1 + 2 * sum_{n>=1} 4^{-n} = 5/3 (window tail below 1e-24)
    assert weighted_norm(geo, WeightedNormSpec(2, 0)) == pytest.approx(np.sqrt(5 / 3), rel=1e-14)


def test_weighted_norm_rejects_p_below_one():
    with pytest.raises(ValueError):
        WeightedNormSpec(0.5, 0)


@given(
    st.lists(st.floats(-10, 10), min_size=LAT.size, max_size=LAT.size),
    st.floats(-3, 3),
    st.floats(0, 3),
)
def test_weighted_norm_properties(vals, sigma, dsigma):
    u = LatticeField(LAT, np.array(vals))
    spec = WeightedNormSpec(2, sigma)
    assert weighted_norm(u, spec) >= 0
    assert weighted_norm(-3.0 * u, spec) == pytest.approx(3.0 * weighted_norm(u, spec), rel=1e-12, abs=1e-300)
    # a heavier weight never decreases the norm since <n> >= 1
    assert weighted_norm(u, WeightedNormSpec(2, sigma + dsigma)) >= weighted_norm(u, spec) * (1 - 1e-12)


def test_weighted_norm_vector_valued_matches_stacked(rng):
    a, b = rng.normal(size=(2, LAT.size))
    spec = WeightedNormSpec(2, -2)
    joint = weighted_norm(np.stack([a, b]), spec, LAT.sites)
    split = np.hypot(weighted_norm(a, spec, LAT.sites), weighted_norm(b, spec, LAT.sites))
    assert joint == pytest.approx(split, rel=1e-13)
    with pytest.raises(ValueError):
        weighted_norm(a, spec)


def test_japanese_bracket():
    assert np.allclose(japanese_bracket(np.array([0, 1, -3])), [1, np.sqrt(2), np.sqrt(10)])


@given(st.lists(st.complex_numbers(max_magnitude=5), min_size=8, max_size=8), st.lists(st.complex_numbers(max_magnitude=5), min_size=8, max_size=8))
def test_inner_is_hermitian(a, b):
    a, b = np.array(a), np.array(b)
    assert inner(a, b) == pytest.approx(np.conj(inner(b, a)), abs=1e-9)
    assert inner(2j * a, b) == pytest.approx(2j * inner(a, b), abs=1e-9)


def test_decay_fit_examples():
    fit = fit_exponential_decay(LatticeField(LAT, np.exp(-np.abs(LAT.sites).astype(float))))
    assert fit.ok and abs(fit.rate - 1) <= 1e-6
    assert not fit_exponential_decay(LatticeField(LAT, np.ones(LAT.size))).ok
    with pytest.raises(ValueError):
        fit_exponential_decay(LatticeField(LAT, np.zeros(LAT.size)))


def test_decay_fit_on_ground_state(branch):
    fit = fit_exponential_decay(branch.phi[0])
    assert fit.ok and fit.rate > 0


def test_banded_and_sparse_agree(rng):
    qv = rng.normal(size=LAT.size)
    rhs = rng.normal(size=LAT.size)
    x = solve_banded((1, 1), hamiltonian_banded(qv, 0.7), rhs)
    assert np.allclose(hamiltonian_sparse(qv, 0.7) @ x, rhs, atol=1e-11)
    u = LatticeField(LAT, rhs)
    assert np.allclose(hamiltonian_sparse(qv) @ rhs, apply_H(Potential(LatticeField(LAT, qv)), u).values, atol=1e-13)


@pytest.mark.parametrize("dtype", [float, complex])
def test_save_load_roundtrip(tmp_path, rng, dtype):
    vals = rng.normal(size=LAT.size).astype(dtype)
    if dtype is complex:
        vals = vals + 1j * rng.normal(size=LAT.size)
    u = LatticeField(LAT, vals)
    save_field(tmp_path / "u.txt", u, {"note": "x"})
    v, meta = load_field(tmp_path / "u.txt")
    assert v.lattice == LAT and meta["note"] == "x"
    assert np.array_equal(v.values, u.values)
    assert np.isrealobj(v.values) == (dtype is float)


def test_embed_pads_with_zeros():
    small, big = Lattice.symmetric(20), Lattice.symmetric(40)
    vals = np.arange(small.size, dtype=float)
    out = big.embed(vals, small)
    assert out[big.index(-20)] == 0 and out[big.index(20)] == vals[-1] and out[big.index(21)] == 0
