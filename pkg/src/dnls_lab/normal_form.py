"""Truncated normal forms for the coupled (z, f, omega) system near the ground state.

Variables and conventions
-------------------------
The remainder is ``R = (r, conj r) = z xi + conj(z) sigma1 xi + f`` with ``f`` in
the continuous subspace.  Time derivatives are stored multiplied by ``i``::

    i z'     = lam z + a(z, zbar) + <f, C(z, zbar)> + ...
    i f'     = Hlin f + A(z, zbar) + ...
    i omega' = b(z, zbar) + <f, B(z, zbar)> + ...
    i gamma' = c(z, zbar) + ...

where ``gamma' = theta' - omega``.  Polynomials are truncated at total degree
``L`` in ``(z, zbar)``.  One normal-form step of order ``d`` introduces

* ``g = f + sum Phi_mn z^m zbar^n`` with ``(Hlin - (m - n) lam) Phi_mn = A_mn``,
* ``zeta = z - sum alpha_mn z^m zbar^n`` with ``alpha_mn = a_mn / ((m - n - 1) lam)``
  for ``m - n != 1``,
* ``varpi = omega - sum beta_mn z^m zbar^n`` with ``beta_mn = b_mn / ((m - n) lam)``
  for ``m != n``,

and, at ``d = 2`` only, the corrections linear in ``f``:
``zeta -= sum <f, Psi^z_mn> z^m zbar^n`` and ``varpi -= sum <f, Psi^w_mn> z^m zbar^n``
over ``m + n = 1``, with adjoint resolvent solves.

The transformed system is never assembled by hand.  It is the push-forward of
the exact (truncated) system through the composed changes of variables,
computed in polynomial arithmetic, so every step is checked by construction.
Generators ignore their own omega-dependence; the neglected ``omega' d_omega``
terms have degree at least ``d + 2`` and so do not enter for ``L = 3``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .lattice import save_field, Lattice, LatticeField
from .linearization import LinearizationData, internal_mode, sigma1, sigma3, spinor_inner

__all__ = [
    "PolyField",
    "PolyScalar",
    "SmallDivisorError",
    "ResonantMonomialError",
    "PolynomialFitError",
    "extract_coefficients",
    "continuous_projection",
    "adjoint_continuous_projection",
    "mode_omega_derivative",
    "homological_solve_f",
    "homological_solve_f_adjoint",
    "homological_solve_z",
    "homological_solve_omega",
    "NormalFormSystem",
    "Generators",
    "source_system",
    "pushforward",
    "normal_form_step",
    "normal_form",
    "grading_defect",
    "transform_point",
    "transform_trajectory",
    "validity_radius",
    "save_generators",
]

RESIDUAL_TOL = 1e-10
DIVISOR_FACTOR = 10.0


class SmallDivisorError(ArithmeticError):
    """The resolvent point lies too close to the windowed continuous cluster."""


class ResonantMonomialError(ArithmeticError):
    """The monomial is resonant and must stay in the normal form."""


class PolynomialFitError(ValueError):
    """Sampled evaluator is not a polynomial of the requested degree."""


# --------------------------------------------------------------------------- polynomials


class PolyField:
    """Polynomial ``sum c_mn z^m zbar^n`` with array coefficients, truncated at degree ``L``.

    Coefficients share one array ``shape`` (``()`` for scalars, ``(M,)`` for lattice
    fields, ``(2, M)`` for spinors); products broadcast.  A constant term ``(0, 0)``
    is allowed for intermediate algebra.
    """

    def __init__(self, L: int, coeffs: dict | None = None, shape: tuple = ()):
        self.L = int(L)
        self.shape = tuple(shape)
        self.coeffs: dict[tuple[int, int], np.ndarray] = {}
        for (m, n), c in (coeffs or {}).items():
            if m + n <= self.L:
                self.coeffs[(m, n)] = np.asarray(c, dtype=complex)

    # construction
    @classmethod
    def zero(cls, L: int, shape: tuple = ()) -> "PolyField":
        return _make(L, {}, shape)

    @classmethod
    def monomial(cls, L: int, m: int, n: int, value=1.0) -> "PolyField":
        v = np.asarray(value, dtype=complex)
        return _make(L, {(m, n): v}, v.shape)

    @classmethod
    def variable(cls, L: int) -> "PolyField":
        return _make(L, {(1, 0): np.array(1.0 + 0j)}, ())

    def copy(self) -> "PolyField":
        return _make(self.L, {k: v.copy() for k, v in self.coeffs.items()}, self.shape)

    # inspection
    def __getitem__(self, key) -> np.ndarray:
        return self.coeffs.get(tuple(key), np.zeros(self.shape, dtype=complex))

    def __setitem__(self, key, value) -> None:
        m, n = key
        if m + n <= self.L:
            self.coeffs[(m, n)] = np.asarray(value, dtype=complex)

    def keys(self):
        return sorted(self.coeffs)

    def items(self):
        return [(k, self.coeffs[k]) for k in self.keys()]

    def homogeneous(self, d: int) -> "PolyField":
        return _make(self.L, {k: v for k, v in self.coeffs.items() if sum(k) == d}, self.shape)

    def truncate(self, L: int) -> "PolyField":
        return _make(min(L, self.L), {k: v for k, v in self.coeffs.items() if sum(k) <= L}, self.shape)

    def max_abs(self, degrees=None, keys=None) -> float:
        out = 0.0
        for k, v in self.coeffs.items():
            if degrees is not None and sum(k) not in degrees:
                continue
            if keys is not None and k not in keys:
                continue
            out = max(out, float(np.max(np.abs(v), initial=0.0)))
        return out

    # algebra
    def _coerce(self, other) -> "PolyField":
        if isinstance(other, PolyField):
            return other
        v = np.asarray(other, dtype=complex)
        return _make(self.L, {(0, 0): v}, v.shape)

    def __add__(self, other) -> "PolyField":
        other = self._coerce(other)
        L = min(self.L, other.L)
        out = {k: v.copy() for k, v in self.coeffs.items() if sum(k) <= L}
        for k, v in other.coeffs.items():
            if sum(k) > L:
                continue
            out[k] = out[k] + v if k in out else v.copy()
        return _make(L, out, np.broadcast_shapes(self.shape, other.shape))

    __radd__ = __add__

    def __neg__(self) -> "PolyField":
        return _make(self.L, {k: -v for k, v in self.coeffs.items()}, self.shape)

    def __sub__(self, other) -> "PolyField":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "PolyField":
        return self._coerce(other) - self

    def __mul__(self, other) -> "PolyField":
        if not isinstance(other, PolyField):
            v = np.asarray(other, dtype=complex)
            return _make(self.L, {k: c * v for k, c in self.coeffs.items()}, np.broadcast_shapes(self.shape, v.shape))
        L = min(self.L, other.L)
        out: dict = {}
        for (m1, n1), c1 in self.coeffs.items():
            for (m2, n2), c2 in other.coeffs.items():
                k = (m1 + m2, n1 + n2)
                if sum(k) > L:
                    continue
                p = c1 * c2
                out[k] = out[k] + p if k in out else p
        return _make(L, out, np.broadcast_shapes(self.shape, other.shape))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "PolyField":
        return self * (1.0 / np.asarray(other, dtype=complex))

    def __pow__(self, k: int) -> "PolyField":
        out = _make(self.L, {(0, 0): np.ones(self.shape, dtype=complex)}, self.shape)
        for _ in range(int(k)):
            out = out * self
        return out

    def conj(self) -> "PolyField":
        """The polynomial whose values are the complex conjugates: ``c_mn -> conj(c_nm)``."""
        return _make(self.L, {(n, m): np.conj(v) for (m, n), v in self.coeffs.items()}, self.shape)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "PolyField":
        """Apply a linear map to every coefficient."""
        out = {k: np.asarray(fn(v), dtype=complex) for k, v in self.coeffs.items()}
        shape = next(iter(out.values())).shape if out else self.shape
        return _make(self.L, out, shape)

    def pair(self, v: np.ndarray) -> "PolyScalar":
        """Coefficient-wise ``<c_mn, v> = sum c_mn conj(v)``."""
        vc = np.conj(np.asarray(v))
        return _make(self.L, {k: np.array(np.sum(c * vc)) for k, c in self.coeffs.items()}, ())

    def component(self, j: int) -> "PolyField":
        return _make(self.L, {k: v[j] for k, v in self.coeffs.items()}, self.shape[1:])

    @staticmethod
    def stack(parts: list["PolyField"]) -> "PolyField":
        L = min(p.L for p in parts)
        keys = set().union(*[p.coeffs for p in parts])
        shape = np.broadcast_shapes(*[p.shape for p in parts])
        out = {k: np.stack([np.broadcast_to(p[k], shape) for p in parts]) for k in keys if sum(k) <= L}
        return _make(L, out, (len(parts),) + tuple(shape))

    # calculus
    def dz(self) -> "PolyField":
        return _make(self.L, {(m - 1, n): m * v for (m, n), v in self.coeffs.items() if m > 0}, self.shape)

    def dzbar(self) -> "PolyField":
        return _make(self.L, {(m, n - 1): n * v for (m, n), v in self.coeffs.items() if n > 0}, self.shape)

    def i_ddt(self, izdot: "PolyField") -> "PolyField":
        """``i d/dt`` of ``self(z(t))`` given ``i z'`` as a polynomial."""
        return self.dz() * izdot - self.dzbar() * izdot.conj()

    def compose(self, Z: "PolyField") -> "PolyField":
        """Substitute ``z = Z`` and ``zbar = conj Z``; ``Z`` must have no constant term."""
        if Z.max_abs(degrees=(0,)) > 0:
            raise ValueError("substituted polynomial must vanish at zero")
        L = min(self.L, Z.L)
        Zb = Z.conj()
        pz = [PolyField.monomial(L, 0, 0)]
        pzb = [PolyField.monomial(L, 0, 0)]
        top = max([sum(k) for k in self.coeffs] + [0])
        for _ in range(top):
            pz.append(pz[-1] * Z)
            pzb.append(pzb[-1] * Zb)
        out = PolyField.zero(L, self.shape)
        for (m, n), c in self.coeffs.items():
            if m + n <= L:
                out = out + (pz[m] * pzb[n]) * c
        return out

    def __call__(self, z: complex) -> np.ndarray:
        z = complex(z)
        out = np.zeros(self.shape, dtype=complex)
        for (m, n), c in self.coeffs.items():
            out = out + c * (z**m) * (np.conj(z) ** n)
        return out

    def to_jsonable(self) -> dict:
        if self.shape != ():
            raise TypeError("only scalar polynomials serialize inline")
        return {f"{m},{n}": [float(v.real), float(v.imag)] for (m, n), v in self.items()}

    def __repr__(self) -> str:
        return f"{type(self).__name__}(L={self.L}, shape={self.shape}, terms={self.keys()})"


class PolyScalar(PolyField):
    """Scalar-valued :class:`PolyField`."""

    def __init__(self, L: int, coeffs: dict | None = None, shape: tuple = ()):
        super().__init__(L, coeffs, ())

    def is_real(self, tol: float = 1e-10) -> bool:
        scale = max(self.max_abs(), 1e-300)
        return all(abs(v.imag) <= tol * scale for v in self.coeffs.values())


def _make(L: int, coeffs: dict, shape) -> PolyField:
    if tuple(shape) == ():
        return PolyScalar(L, coeffs)
    return PolyField(L, coeffs, tuple(shape))


# --------------------------------------------------------------------------- coefficient extraction


def _fit_keys(L: int, min_degree: int) -> list[tuple[int, int]]:
    return [(m, d - m) for d in range(min_degree, L + 1) for m in range(d, -1, -1)]


def extract_coefficients(
    evaluator: Callable[[complex], np.ndarray],
    L: int,
    radii=(0.5, 1.0),
    n_angles: int | None = None,
    min_degree: int = 1,
    tol: float = 1e-9,
) -> PolyField:
    """Recover ``c_mn`` of a polynomial evaluator from samples on circles.

    A DFT over ``n_angles >= 2L + 1`` equispaced angles separates ``p = m - n``;
    for each ``p`` a Vandermonde solve in the radii separates ``m + n``.  The fit
    is validated at an extra radius and rotated angles.

    Raises
    ------
    PolynomialFitError
        The validation residual exceeds ``tol`` relative to the sampled scale.
    """
    K = int(n_angles or 2 * L + 1)
    if K < 2 * L + 1:
        raise ValueError("need at least 2L+1 angles")
    radii = np.asarray(radii, dtype=float)
    ang = 2.0 * np.pi * np.arange(K) / K
    samples = np.array([[np.asarray(evaluator(rho * np.exp(1j * t)), dtype=complex) for t in ang] for rho in radii])
    shape = samples.shape[2:]
    scale = max(float(np.max(np.abs(samples))), 1e-300)
    # DFT in the angle: coefficient of e^{i p t}
    spec = np.fft.fft(samples, axis=1) / K  # index j <-> p = j mod K
    out: dict = {}
    for p in range(-L, L + 1):
        degs = [d for d in range(max(abs(p), min_degree), L + 1) if (d - abs(p)) % 2 == 0]
        if not degs:
            continue
        if len(degs) > len(radii):
            raise ValueError(f"need at least {len(degs)} radii for degree {L}")
        V = radii[:, None] ** np.array(degs)[None, :]
        rhs = spec[:, p % K].reshape(len(radii), -1)
        sol, *_ = np.linalg.lstsq(V, rhs, rcond=None)
        for d, row in zip(degs, sol):
            m, n = (d + p) // 2, (d - p) // 2
            out[(m, n)] = row.reshape(shape)
    poly = _make(L, out, shape)
    # validation at an unused radius and shifted angles
    rho_c = float(np.sqrt(radii.min() * radii.max())) * 1.07
    res = 0.0
    for t in 2.0 * np.pi * (np.arange(3) + 0.37) / 3.0:
        zc = rho_c * np.exp(1j * t)
        res = max(res, float(np.max(np.abs(np.asarray(evaluator(zc)) - poly(zc)), initial=0.0)))
    poly.residual = res / scale
    if poly.residual > tol:
        raise PolynomialFitError(f"evaluator is not a degree-{L} polynomial (residual {poly.residual:.2e})")
    return poly


# --------------------------------------------------------------------------- linear algebra on the window


def _mode(lin: LinearizationData) -> np.ndarray:
    if lin.xi is None:
        internal_mode(lin)
    return lin.xi


def continuous_projection(lin: LinearizationData, X: np.ndarray, with_mode: bool = True) -> np.ndarray:
    """``P_c X`` from the closed forms of the kernel and internal-mode projections.

    With ``with_mode=False`` only the generalized kernel is removed, which is
    the continuous projection for operators without an internal mode.
    """
    qp = lin.mass_prime
    X = np.asarray(X, dtype=complex)
    png = sigma3(lin.Phi) * spinor_inner(X, sigma3(lin.dPhi)) / qp + lin.dPhi * spinor_inner(X, lin.Phi) / qp
    if not with_mode:
        return X - png
    xi = _mode(lin)
    pd = xi * spinor_inner(X, sigma3(xi)) - sigma1(xi) * spinor_inner(X, sigma3(sigma1(xi)))
    return X - png - pd


def adjoint_continuous_projection(lin: LinearizationData, X: np.ndarray) -> np.ndarray:
    """``P_c^* = sigma3 P_c sigma3``, the continuous projection of ``Hlin^*``."""
    return sigma3(continuous_projection(lin, sigma3(np.asarray(X, dtype=complex))))


class _Context:
    """Per-linearization cache: bordered LU factors, cluster eigenvalues, mode derivative."""

    def __init__(self, lin: LinearizationData):
        self.lin = lin
        xi = _mode(lin)
        m2 = 2 * lin.size
        self.border_cols = np.stack(
            [sigma3(lin.Phi).ravel(), lin.dPhi.ravel(), xi.ravel(), sigma1(xi).ravel()], axis=1
        ).astype(float)
        self.border_rows = np.stack(
            [sigma3(lin.dPhi).ravel(), lin.Phi.ravel(), sigma3(xi).ravel(), sigma3(sigma1(xi)).ravel()], axis=0
        ).astype(float)
        self.m2 = m2
        self._lu: dict[float, object] = {}
        self._cluster: np.ndarray | None = None
        self._dmode: tuple[float, np.ndarray] | None = None

    def lu(self, mu: float):
        key = float(mu)
        if key not in self._lu:
            T = self.lin.matrix() - mu * sparse.identity(self.m2, format="csr")
            B = sparse.bmat(
                [[T, sparse.csr_matrix(self.border_cols)], [sparse.csr_matrix(self.border_rows), None]],
                format="csc",
            )
            self._lu[key] = splu(B)
        return self._lu[key]

    def cluster(self) -> np.ndarray:
        if self._cluster is None:
            w, _ = self.lin.eig()
            lam, om = self.lin.lam, self.lin.omega
            keep = (np.abs(w) > 0.5 * om) & (np.abs(np.abs(w) - lam) > 1e-9 * max(1.0, lam))
            self._cluster = np.sort(w[keep].real)
        return self._cluster


def _context(lin: LinearizationData) -> _Context:
    ctx = getattr(lin, "_nf_context", None)
    if ctx is None or ctx.lin is not lin:
        ctx = _Context(lin)
        lin._nf_context = ctx
    return ctx


def divisor_margin(lin: LinearizationData, mu: float) -> dict[str, float]:
    """Distance of ``mu`` from the windowed continuous cluster, in units of its local spacing."""
    wc = _context(lin).cluster()
    j = int(np.argmin(np.abs(wc - mu)))
    gaps = [abs(wc[j] - wc[i]) for i in (j - 1, j + 1) if 0 <= i < len(wc)]
    spacing = min(gaps) if gaps else float("inf")
    dist = float(abs(wc[j] - mu))
    return {"distance": dist, "spacing": float(spacing), "ratio": dist / spacing, "inside": _between_same_side(wc, mu)}


def _between_same_side(wc: np.ndarray, mu: float) -> bool:
    side = wc[wc > 0] if mu > 0 else wc[wc < 0]
    return bool(side.size > 0 and side.min() <= mu <= side.max())


def _check_divisor(lin: LinearizationData, mu: float, factor: float) -> None:
    info = divisor_margin(lin, mu)
    if info["inside"] or info["distance"] < factor * info["spacing"]:
        raise SmallDivisorError(
            f"resolvent point {mu:.6g} is {info['distance']:.2e} from the continuous cluster "
            f"(local spacing {info['spacing']:.2e}); enlarge the window"
        )


def _restricted_solve(lin: LinearizationData, mu: float, A: np.ndarray, factor: float) -> tuple[np.ndarray, float]:
    """``(Hlin - mu)^{-1} A`` on the continuous subspace via a bordered sparse solve."""
    A = np.asarray(A, dtype=complex)
    norm_a = np.linalg.norm(A)
    if norm_a == 0.0:
        return np.zeros_like(A), 0.0
    _check_divisor(lin, mu, factor)
    ctx = _context(lin)
    rhs = np.concatenate([A.ravel(), np.zeros(4)])
    lu = ctx.lu(mu)
    x = lu.solve(rhs.real) + 1j * lu.solve(rhs.imag)
    # one round of iterative refinement; near-resonant shifts are ill conditioned
    m2 = ctx.m2
    X = x[:m2].reshape(A.shape)
    r_top = A - (lin.apply(X) - mu * X) - (ctx.border_cols @ x[m2:]).reshape(A.shape)
    r_bot = -(ctx.border_rows @ x[:m2])
    d = np.concatenate([r_top.ravel(), r_bot])
    x = x + lu.solve(d.real) + 1j * lu.solve(d.imag)
    Phi = continuous_projection(lin, x[:m2].reshape(A.shape))
    res = float(np.linalg.norm(lin.apply(Phi) - mu * Phi - A) / norm_a)
    return Phi, res


def homological_solve_f(A: np.ndarray, lin: LinearizationData, k: int, factor: float = DIVISOR_FACTOR) -> np.ndarray:
    """Solve ``(Hlin - k lam) Phi = A`` on the continuous subspace.

    Raises
    ------
    ValueError
        ``A`` has a component outside the continuous subspace above 1e-8 relative.
    SmallDivisorError
        ``k lam`` is within ``factor`` local spacings of the windowed cluster.
    ArithmeticError
        The re-applied residual exceeds 1e-10 relative.
    """
    A = np.asarray(A, dtype=complex)
    na = np.linalg.norm(A)
    if na > 0 and np.linalg.norm(A - continuous_projection(lin, A)) > 1e-8 * na:
        raise ValueError("source is not in the continuous subspace")
    Phi, res = _restricted_solve(lin, k * lin.lam, A, factor)
    if res > RESIDUAL_TOL:
        raise ArithmeticError(f"homological residual {res:.2e}")
    return Phi


def homological_solve_f_adjoint(B: np.ndarray, lin: LinearizationData, mu: float, factor: float = DIVISOR_FACTOR) -> np.ndarray:
    """``(Hlin^* - mu)^{-1} P_c^* B`` using ``Hlin^* = sigma3 Hlin sigma3``."""
    Bc = adjoint_continuous_projection(lin, B)
    Psi, res = _restricted_solve(lin, mu, sigma3(Bc), factor)
    if res > RESIDUAL_TOL:
        raise ArithmeticError(f"adjoint homological residual {res:.2e}")
    return sigma3(Psi)


def homological_solve_z(a: complex, lam: float, m: int, n: int) -> complex:
    """Coefficient ``a / ((m - n - 1) lam)`` of the internal-mode generator."""
    if m + n < 2:
        raise ValueError("generators start at total degree 2")
    if m - n == 1:
        raise ResonantMonomialError(f"monomial ({m},{n}) is resonant and stays in the normal form")
    return complex(a) / ((m - n - 1) * lam)


def homological_solve_omega(
    a: complex,
    A: np.ndarray | None,
    lin: LinearizationData,
    m: int,
    n: int,
    factor: float = DIVISOR_FACTOR,
) -> tuple[complex, np.ndarray | None]:
    """Scalar ``a / ((m - n) lam)`` and dual field ``R_{Hlin^*}((n - m) lam) A``.

    Either part is skipped when its input is ``None``.
    """
    if m == n:
        raise ResonantMonomialError(f"monomial ({m},{n}) has zero frequency and stays in the normal form")
    scalar = None if a is None else complex(a) / ((m - n) * lin.lam)
    dual = None if A is None else homological_solve_f_adjoint(A, lin, (n - m) * lin.lam, factor)
    return scalar, dual


def mode_omega_derivative(lin: LinearizationData) -> tuple[float, np.ndarray]:
    """``(d lam / d omega, d xi / d omega)`` from a bordered solve.

    Differentiating ``Hlin xi = lam xi`` with ``<xi, sigma3 xi> = 1`` gives
    ``(Hlin - lam) dxi = (dlam - dHlin) xi`` and ``<dxi, sigma3 xi> = 0``.
    """
    ctx = _context(lin)
    if ctx._dmode is not None:
        return ctx._dmode
    xi, lam = _mode(lin), lin.lam
    p5 = 6.0 * lin.phi**5 * lin.dphi
    dH_xi = np.stack([xi[0] - 4 * p5 * xi[0] - 3 * p5 * xi[1], -xi[1] + 3 * p5 * xi[0] + 4 * p5 * xi[1]])
    dlam = float(np.real(spinor_inner(dH_xi, sigma3(xi))))
    m2 = ctx.m2
    T = lin.matrix() - lam * sparse.identity(m2, format="csr")
    B = sparse.bmat([[T, sparse.csr_matrix(xi.reshape(-1, 1))], [sparse.csr_matrix(sigma3(xi).reshape(1, -1)), None]], format="csc")
    rhs = np.concatenate([(dlam * xi - dH_xi).ravel(), [0.0]])
    sol = splu(B).solve(rhs.real)
    ctx._dmode = (dlam, sol[:m2].reshape(xi.shape))
    return ctx._dmode


# --------------------------------------------------------------------------- systems


@dataclass
class NormalFormSystem:
    """Truncated system at ``g = 0`` in the current internal-mode variable.

    ``a`` excludes the linear term ``lam z``; ``A`` is ``i g'``; ``b`` is ``i omega'``
    and ``c`` is ``i gamma'``.  ``C`` and ``B`` hold the dual fields of the terms
    linear in ``f`` with one power of ``z`` (original system only).
    """

    L: int
    lam: float
    a: PolyScalar
    A: PolyField
    b: PolyScalar
    c: PolyScalar
    C: dict = field(default_factory=dict)
    B: dict = field(default_factory=dict)
    ell: int = 0
    history: list = field(default_factory=list)

    @property
    def d(self) -> PolyScalar:
        """Resonant part of ``a``: monomials with ``m - n = 1``."""
        return _make(self.L, {k: v for k, v in self.a.coeffs.items() if k[0] - k[1] == 1}, ())


@dataclass
class Generators:
    """Change of variables of one order ``degree``."""

    degree: int
    Phi: PolyField
    alpha: PolyScalar
    beta: PolyScalar
    Psi_z: dict = field(default_factory=dict)
    Psi_w: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)


def _nonlinear_poly(phi: np.ndarray, r: PolyField) -> PolyField:
    """Degree >= 2 part of ``-(phi + r)^4 (phi + rbar)^3`` as a polynomial."""
    L = r.L
    rb = r.conj()
    rp, rbp = [PolyField.monomial(L, 0, 0)], [PolyField.monomial(L, 0, 0)]
    for _ in range(min(4, L)):
        rp.append(rp[-1] * r)
    for _ in range(min(3, L)):
        rbp.append(rbp[-1] * rb)
    out = PolyField.zero(L, phi.shape)
    for j in range(len(rp)):
        for k in range(len(rbp)):
            if 2 <= j + k <= L:
                out = out - (rp[j] * rbp[k]) * (comb(4, j) * comb(3, k) * phi ** (7 - j - k))
    return out


def _rates_poly(lin: LinearizationData, r: PolyField, N: PolyField) -> tuple[PolyScalar, PolyScalar]:
    """``(omega', gamma')`` from the orthogonality system, expanded as a Neumann series."""
    phi, d1, d2 = lin.phi, lin.dphi, lin.d2phi
    qh = float(phi @ d1)
    a = (r + r.conj()) * 0.5
    b = (r - r.conj()) * (-0.5j)
    Nb = N.conj()
    im_n = (N - Nb) * (-0.5j)
    re_n = (N + Nb) * 0.5
    ad = a.pair(d1)
    M1 = [[ad, b.pair(phi)], [b.pair(d2), -ad]]
    y = [-im_n.pair(phi), re_n.pair(d1)]
    term = [y[0] * (-1.0 / qh), y[1] * (-1.0 / qh)]
    x = list(term)
    for _ in range(r.L):
        term = [(M1[0][0] * term[0] + M1[0][1] * term[1]) / qh, (M1[1][0] * term[0] + M1[1][1] * term[1]) / qh]
        x = [x[0] + term[0], x[1] + term[1]]
    return x[0], x[1]


def _exact_fields(lin: LinearizationData, Z: PolyScalar, F: PolyField) -> dict[str, PolyField]:
    """``i z'``, ``i f'``, ``i omega'``, ``i gamma'`` of the exact system at ``z = Z``, ``f = F``."""
    xi = _mode(lin)
    _, dxi = mode_omega_derivative(lin)
    r = Z * xi[0] + Z.conj() * xi[1] + F.component(0)
    R = PolyField.stack([r, r.conj()])
    N = _nonlinear_poly(lin.phi, r)
    calN = PolyField.stack([N, -N.conj()])
    wdot, gdot = _rates_poly(lin, r, N)
    iw = wdot * 1j
    izdot = Z * lin.lam + gdot * R.pair(xi) + calN.pair(sigma3(xi)) + iw * R.pair(sigma3(dxi))
    drift = (Z * dxi + Z.conj() * sigma1(dxi)).map(lambda X: continuous_projection(lin, X))
    ifdot = F.map(lin.apply) + (R.map(sigma3) * gdot + calN).map(lambda X: continuous_projection(lin, X)) - iw * drift
    ifdot = ifdot - iw * _dpc_on_continuous(lin, F, dxi)
    return {"z": izdot, "f": ifdot, "w": iw, "g": gdot * 1j}


def _dpc_on_continuous(lin: LinearizationData, F: PolyField, dxi: np.ndarray) -> PolyField:
    """``(d_omega P_c) f`` for ``f`` in the continuous subspace (degree >= 4 contributions)."""
    if not F.coeffs:
        return PolyField.zero(F.L, (2, lin.size))
    xi, qp = _mode(lin), lin.mass_prime
    d2Phi = np.stack([lin.d2phi, lin.d2phi])

    def dpc(X):
        dpd = xi * spinor_inner(X, sigma3(dxi)) - sigma1(xi) * spinor_inner(X, sigma3(sigma1(dxi)))
        dpn = sigma3(lin.Phi) * spinor_inner(X, sigma3(d2Phi)) / qp + lin.dPhi * spinor_inner(X, lin.dPhi) / qp
        return -(dpd + dpn)

    return F.map(dpc)


def _linear_in_f_duals(lin: LinearizationData) -> tuple[dict, dict]:
    """Dual fields of the terms ``<f, C_mn> z^m zbar^n`` and ``<f, B_mn> z^m zbar^n``, ``m + n = 1``.

    Only the quadratic part of the nonlinearity contributes at this order:
    ``N_2 = -phi^5 (6 r^2 + 12 r rbar + 3 rbar^2)``.
    """
    xi = _mode(lin)
    phi, qh = lin.phi, float(lin.phi @ lin.dphi)
    p5 = phi**5
    C, B = {}, {}
    for key, (rz, rzb) in {(1, 0): (xi[0], xi[1]), (0, 1): (xi[1], xi[0])}.items():
        # partial derivatives of N and of its conjugate function, at r = r_z
        dN_dr = -p5 * (12 * rz + 12 * rzb)
        dN_drb = -p5 * (12 * rz + 6 * rzb)
        dNc_dr = -p5 * (12 * rzb + 6 * rz)
        dNc_drb = -p5 * (12 * rzb + 12 * rz)
        C[key] = np.stack([dN_dr * xi[0] + dNc_dr * xi[1], dN_drb * xi[0] + dNc_drb * xi[1]]).astype(complex)
        B[key] = np.stack([(dN_dr - dNc_dr) * phi, (dN_drb - dNc_drb) * phi]).astype(complex) / (2.0 * qh)
    return C, B


def source_system(lin: LinearizationData, L: int = 3) -> NormalFormSystem:
    """The exact system truncated at degree ``L``, at ``f = 0``."""
    if not 2 <= L <= 5:
        raise ValueError("order cap L must be in 2..5")
    _mode(lin)
    Z = PolyField.variable(L)
    F = PolyField.zero(L, (2, lin.size))
    ex = _exact_fields(lin, Z, F)
    C, B = _linear_in_f_duals(lin)
    return NormalFormSystem(L, lin.lam, ex["z"] - Z * lin.lam, ex["f"], ex["w"], ex["g"], C, B)


def _f_linear_term(Fp: PolyField, Psi: dict, Zp: PolyScalar) -> PolyScalar:
    out = PolyField.zero(Zp.L)
    for (m, n), v in Psi.items():
        out = out + Fp.pair(v) * ((Zp**m) * (Zp.conj() ** n))
    return out


def _inverse_maps(gens: list[Generators], L: int, size: int) -> list[tuple[PolyScalar, PolyField]]:
    """Old variables ``(z_j, f_j)`` as polynomials in the newest ``zeta`` at ``g = 0``.

    Returns the list ``[(z_0, f_0), ..., (z_K, f_K)]`` with ``z_K = zeta``.
    """
    zeta = PolyField.variable(L)
    chain = [(zeta, PolyField.zero(L, (2, size)))]
    for g in reversed(gens):
        Zn, Fn = chain[0]
        Zo = Zn
        for _ in range(L + 1):
            Fo = Fn - g.Phi.compose(Zo)
            Zo = Zn + g.alpha.compose(Zo) + _f_linear_term(Fo, g.Psi_z, Zo)
        Fo = Fn - g.Phi.compose(Zo)
        chain.insert(0, (Zo, Fo))
    return chain


def pushforward(lin: LinearizationData, gens: list[Generators], L: int) -> NormalFormSystem:
    """System in the variables produced by ``gens``, evaluated at the new ``g = 0``."""
    chain = _inverse_maps(gens, L, lin.size)
    Z0, F0 = chain[0]
    ex = _exact_fields(lin, Z0, F0)
    iz, if_, iw = ex["z"], ex["f"], ex["w"]
    for j, g in enumerate(gens):
        Zo, Fo = chain[j]
        new_iz = iz - _i_ddt_composed(g.alpha, Zo, iz)
        new_if = if_ + _i_ddt_composed(g.Phi, Zo, iz)
        new_iw = iw - _i_ddt_composed(g.beta, Zo, iz)
        for (m, n), v in g.Psi_z.items():
            mono = (Zo**m) * (Zo.conj() ** n)
            new_iz = new_iz - (if_.pair(v) * mono + Fo.pair(v) * _i_ddt_composed(PolyField.monomial(L, m, n), Zo, iz))
        for (m, n), v in g.Psi_w.items():
            mono = (Zo**m) * (Zo.conj() ** n)
            new_iw = new_iw - (if_.pair(v) * mono + Fo.pair(v) * _i_ddt_composed(PolyField.monomial(L, m, n), Zo, iz))
        iz, if_, iw = new_iz, new_if, new_iw
    zeta = PolyField.variable(L)
    return NormalFormSystem(L, lin.lam, iz - zeta * lin.lam, if_, iw, ex["g"], ell=len(gens), history=list(gens))


def _i_ddt_composed(P: PolyField, Zo: PolyScalar, izo: PolyScalar) -> PolyField:
    """``i d/dt P(z_o)`` where ``z_o = Zo(zeta)`` and ``i z_o' = izo`` (a polynomial in zeta)."""
    return P.dz().compose(Zo) * izo - P.dzbar().compose(Zo) * izo.conj()


def _generators(system: NormalFormSystem, lin: LinearizationData, degree: int, factor: float) -> Generators:
    L = system.L
    lam = lin.lam
    Phi = PolyField.zero(L, (2, lin.size))
    alpha, beta = PolyField.zero(L), PolyField.zero(L)
    res: dict = {"projection_correction": 0.0}
    for m in range(degree, -1, -1):
        n = degree - m
        A = system.A[(m, n)]
        Ac = continuous_projection(lin, A)
        res["projection_correction"] = max(res["projection_correction"], float(np.linalg.norm(A - Ac)))
        if np.linalg.norm(Ac) > 0:
            sol = homological_solve_f(Ac, lin, m - n, factor)
            Phi[(m, n)] = sol
            res[f"Phi_{m}{n}"] = float(np.linalg.norm(lin.apply(sol) - (m - n) * lam * sol - Ac) / np.linalg.norm(Ac))
        if m - n != 1:
            alpha[(m, n)] = homological_solve_z(system.a[(m, n)], lam, m, n)
        if m != n:
            beta[(m, n)] = homological_solve_omega(system.b[(m, n)], None, lin, m, n)[0]
    Psi_z, Psi_w = {}, {}
    if degree == 2:
        for (m, n), Cmn in system.C.items():
            Psi_z[(m, n)] = homological_solve_f_adjoint(Cmn, lin, -(m - n - 1) * lam, factor)
            res[f"Psi_z_{m}{n}"] = _adjoint_residual(lin, Psi_z[(m, n)], -(m - n - 1) * lam, Cmn)
        for (m, n), Bmn in system.B.items():
            Psi_w[(m, n)] = homological_solve_omega(None, Bmn, lin, m, n, factor)[1]
            res[f"Psi_w_{m}{n}"] = _adjoint_residual(lin, Psi_w[(m, n)], (n - m) * lam, Bmn)
    return Generators(degree, Phi, alpha, beta, Psi_z, Psi_w, res)


def _adjoint_residual(lin, Psi, mu, B) -> float:
    Bc = adjoint_continuous_projection(lin, B)
    nb = np.linalg.norm(Bc)
    return 0.0 if nb == 0 else float(np.linalg.norm(lin.apply_adjoint(Psi) - mu * Psi - Bc) / nb)


def normal_form_step(
    system: NormalFormSystem,
    lin: LinearizationData,
    ell: int,
    factor: float = DIVISOR_FACTOR,
) -> tuple[NormalFormSystem, Generators]:
    """Remove the nonresonant monomials of degree ``ell + 1``.

    Returns the transformed system (through degree ``L``) and the new generators.
    """
    if not 1 <= ell < system.L:
        raise ValueError("need 1 <= ell < L")
    if ell != system.ell + 1:
        raise ValueError(f"steps must be taken in order; system is at ell={system.ell}")
    gens = _generators(system, lin, ell + 1, factor)
    new = pushforward(lin, system.history + [gens], system.L)
    return new, gens


def normal_form(lin: LinearizationData, L: int = 3, steps: int | None = None, factor: float = DIVISOR_FACTOR):
    """Source system plus ``steps`` (default ``L - 1``) normal-form steps."""
    system = source_system(lin, L)
    out = [system]
    for ell in range(1, (L - 1 if steps is None else steps) + 1):
        system, _ = normal_form_step(system, lin, ell, factor)
        out.append(system)
    return out


def grading_defect(system: NormalFormSystem, lin: LinearizationData) -> dict[str, float]:
    """Largest remaining nonresonant coefficient at degrees ``<= ell + 1``, per equation.

    Resonant families are excluded: ``m - n = 1`` for ``a`` and ``m = n`` for ``b``.
    ``A`` is measured after ``P_c`` and relative to ``||phi||``.
    """
    top = system.ell + 1
    degs = range(2, top + 1)
    a_keys = [k for k in system.a.coeffs if sum(k) in degs and k[0] - k[1] != 1]
    b_keys = [k for k in system.b.coeffs if sum(k) in degs and k[0] != k[1]]
    A_max = 0.0
    for k, v in system.A.coeffs.items():
        if sum(k) in degs:
            A_max = max(A_max, float(np.linalg.norm(continuous_projection(lin, v))))
    return {
        "a": system.a.max_abs(keys=a_keys),
        "b": system.b.max_abs(keys=b_keys),
        "A": A_max / float(np.linalg.norm(lin.phi)),
    }


# --------------------------------------------------------------------------- trajectories


def validity_radius(gens: list[Generators], fraction: float = 0.5) -> float:
    """Largest ``rho`` with ``sum |alpha_mn| rho^(m+n-1) <= fraction`` over all orders."""
    coef: dict[int, float] = {}
    for g in gens:
        for (m, n), v in g.alpha.coeffs.items():
            d = m + n - 1
            coef[d] = coef.get(d, 0.0) + float(abs(v))
    if not coef or max(coef.values()) == 0:
        return float("inf")
    lo, hi = 0.0, 1.0
    while sum(c * hi**d for d, c in coef.items()) < fraction:
        hi *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if sum(c * mid**d for d, c in coef.items()) <= fraction:
            lo = mid
        else:
            hi = mid
    return lo


def transform_point(z: complex, f: np.ndarray | None, omega: float, gens: list[Generators]) -> tuple[complex, np.ndarray | None, float]:
    """Apply the changes of variables in order: ``(z, f, omega) -> (zeta, g, varpi)``."""
    for g in gens:
        zc = np.conj(z)
        new_z = z - complex(g.alpha(z))
        new_w = omega - float(np.real(g.beta(z)))
        if f is not None:
            for (m, n), v in g.Psi_z.items():
                new_z -= spinor_inner(f, v) * z**m * zc**n
            for (m, n), v in g.Psi_w.items():
                new_w -= float(np.real(spinor_inner(f, v) * z**m * zc**n))
            f = f + g.Phi(z)
        z, omega = new_z, new_w
    return z, f, omega


def transform_trajectory(mt, gens: list[Generators], L: int | None = None, use_f: bool = True) -> dict[str, np.ndarray]:
    """Normal-form variables along a tracked trajectory.

    ``mt`` is a modulation trajectory with series ``z`` and ``omega`` (and ``f``
    when ``use_f``).  Generators above degree ``L`` are ignored.

    Raises
    ------
    ValueError
        ``|z|`` exceeds the validity radius of the generators.
    """
    if L is not None:
        gens = [g for g in gens if g.degree <= L]
    rho = validity_radius(gens)
    if np.max(np.abs(mt.z)) > rho:
        raise ValueError(f"|z| up to {np.max(np.abs(mt.z)):.3e} exceeds the validity radius {rho:.3e}")
    if use_f and getattr(mt, "f", None) is None:
        raise ValueError("trajectory carries no f series; track with keep_f=True or pass use_f=False")
    zeta = np.empty(len(mt.t), dtype=complex)
    varpi = np.empty(len(mt.t))
    for k in range(len(mt.t)):
        f = mt.f[k] if use_f else None
        zeta[k], _, varpi[k] = transform_point(mt.z[k], f, mt.omega[k], gens)
    return {"t": np.asarray(mt.t), "zeta": zeta, "varpi": varpi}


def save_generators(directory: str | Path, gens: list[Generators], lattice: Lattice) -> Path:
    """JSON manifest with scalar coefficients inline and one field file per spinor coefficient."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = []
    for g in gens:
        entry = {"degree": g.degree, "alpha": g.alpha.to_jsonable(), "beta": g.beta.to_jsonable(), "residuals": g.residuals, "Phi": {}, "Psi_z": {}, "Psi_w": {}}
        for label, items in (("Phi", g.Phi.items()), ("Psi_z", g.Psi_z.items()), ("Psi_w", g.Psi_w.items())):
            for (m, n), v in items:
                names = []
                for j in range(2):
                    name = f"{label}_{g.degree}_{m}{n}_{j}.txt"
                    save_field(d / name, LatticeField(lattice, v[j]), {"generator": label, "m": m, "n": n, "component": j})
                    names.append(name)
                entry[label][f"{m},{n}"] = names
        manifest.append(entry)
    path = d / "generators.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
