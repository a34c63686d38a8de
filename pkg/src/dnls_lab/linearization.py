"""Linearization of the standing-wave equation in the variables ``(r, conj r)``.

Spinors are arrays of shape ``(2, M)``.  The operator is

``Hlin = sigma3 (H + omega) + phi^6 [[-4, -3], [3, 4]]``

and has the discrete spectrum ``{0, +lam, -lam}`` in the two-eigenvalue regime.
The generalized kernel is spanned by ``sigma3 Phi = (phi, -phi)`` and
``dPhi = (dphi, dphi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse.linalg import splu

from .ground_state import GroundStateBranch
from .lattice import japanese_bracket
from .potentials import bound_states

__all__ = [
    "SIGMA1",
    "SIGMA2",
    "SIGMA3",
    "LinearizationData",
    "ModeNotFound",
    "spinor_inner",
    "sigma1",
    "sigma3",
    "is_real_structure",
    "potential_block",
    "build_linearization",
    "generalized_kernel",
    "internal_mode",
    "refine_internal_mode",
    "nonresonance_certificate",
    "spectral_projections",
    "sign_projection_defect",
]

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, 1j], [-1j, 0]], dtype=complex)  # sign convention used throughout
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)


class ModeNotFound(RuntimeError):
    pass


def spinor_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """``sum_j sum_n a_j(n) conj(b_j(n))``."""
    return complex(np.vdot(np.asarray(b).ravel(), np.asarray(a).ravel()))


def sigma1(R: np.ndarray) -> np.ndarray:
    return R[::-1].copy()


def sigma3(R: np.ndarray) -> np.ndarray:
    return np.stack([R[0], -R[1]])


def is_real_structure(R: np.ndarray, tol: float = 1e-12) -> bool:
    """True when ``R = (r, conj r)``."""
    return bool(np.max(np.abs(R[1] - np.conj(R[0])), initial=0.0) <= tol * max(1.0, np.max(np.abs(R))))


def potential_block(phi: np.ndarray) -> np.ndarray:
    """``(-4 sigma3 + 3i sigma2) phi^6`` as a ``(2, 2, M)`` array."""
    mat = (-4.0 * SIGMA3 + 3j * SIGMA2).real
    return mat[:, :, None] * (phi**6)[None, None, :]


@dataclass
class LinearizationData:
    """Operator ``Hlin`` at one omega with its internal mode.

    Attributes
    ----------
    omega, q_values, phi, dphi, d2phi
        Base point and branch data (real arrays).
    mass_prime
        ``2 <phi, dphi>``.
    lam, xi
        Internal eigenvalue and real eigenvector with ``<xi, sigma3 xi> = 1``.
    xi_norm_before
        ``<xi, sigma3 xi>`` before normalization (must be positive).
    """

    omega: float
    q_values: np.ndarray
    sites: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    E1: float
    phi1: np.ndarray
    lam: float = float("nan")
    xi: np.ndarray | None = None
    xi_norm_before: float = float("nan")
    flags: list[str] = field(default_factory=list)
    _sparse: sparse.csr_matrix | None = field(default=None, repr=False)
    _eig: tuple | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.phi)

    @property
    def mass_prime(self) -> float:
        return float(2.0 * self.phi @ self.dphi)

    @property
    def Phi(self) -> np.ndarray:
        return np.stack([self.phi, self.phi])

    @property
    def dPhi(self) -> np.ndarray:
        return np.stack([self.dphi, self.dphi])

    def apply(self, R: np.ndarray) -> np.ndarray:
        """Action of ``Hlin`` on a spinor."""
        R = np.asarray(R)
        hr = _apply_h(self.q_values + self.omega, R)
        p6 = self.phi**6
        top = hr[0] - 4.0 * p6 * R[0] - 3.0 * p6 * R[1]
        bot = -hr[1] + 3.0 * p6 * R[0] + 4.0 * p6 * R[1]
        return np.stack([top, bot])

    def apply_adjoint(self, R: np.ndarray) -> np.ndarray:
        """``Hlin^*`` as ``sigma3 Hlin sigma3``."""
        return sigma3(self.apply(sigma3(R)))

    def matrix(self) -> sparse.csr_matrix:
        if self._sparse is None:
            m = self.size
            off = -np.ones(m - 1)
            h = sparse.diags([off, 2.0 + self.q_values + self.omega, off], [-1, 0, 1])
            p6 = sparse.diags(self.phi**6)
            self._sparse = sparse.bmat([[h - 4 * p6, -3 * p6], [3 * p6, -h + 4 * p6]], format="csr")
        return self._sparse

    def dense(self) -> np.ndarray:
        return self.matrix().toarray()

    def eig(self):
        """Full eigendecomposition ``(w, V)`` of the windowed operator (cached)."""
        if self._eig is None:
            self._eig = sla.eig(self.dense())
        return self._eig

    def first_order_lambda(self) -> float:
        return float(self.E1 + self.omega - 4.0 * np.sum(self.phi**6 * self.phi1**2))


def _apply_h(diag_shift: np.ndarray, R: np.ndarray) -> np.ndarray:
    out = (2.0 + diag_shift) * R
    out[..., :-1] -= R[..., 1:]
    out[..., 1:] -= R[..., :-1]
    return out


def build_linearization(branch: GroundStateBranch, omega: float, mode: str | None = "sparse") -> LinearizationData:
    """Operator at ``omega`` with its internal mode (``mode`` = "dense", "sparse" or None)."""
    phi, d1, d2 = branch.solve_at(omega)
    vals, vecs = bound_states(branch.q)
    phi1 = vecs[-1] if vals[-1] > 4 else np.zeros_like(phi)
    data = LinearizationData(
        omega=float(omega),
        q_values=branch.q.values,
        sites=branch.lattice.sites,
        phi=phi,
        dphi=d1,
        d2phi=d2,
        E1=float(vals[-1]),
        phi1=phi1,
    )
    if mode == "dense":
        internal_mode(data)
    elif mode == "sparse":
        refine_internal_mode(data)
    return data


def generalized_kernel(data: LinearizationData) -> dict[str, float]:
    """Residuals certifying the two-dimensional Jordan block at 0.

    ``c`` is measured from ``Hlin dPhi = c sigma3 Phi + e``.
    """
    s3P = sigma3(data.Phi)
    dP = data.dPhi
    hs = data.apply(s3P)
    hd = data.apply(dP)
    c = spinor_inner(hd, s3P).real / spinor_inner(s3P, s3P).real
    e = hd - c * s3P
    return {
        "kernel_residual": float(np.linalg.norm(hs) / np.linalg.norm(data.Phi)),
        "jordan_c": float(c),
        "jordan_remainder": float(np.linalg.norm(e) / max(np.linalg.norm(hd), 1e-300)),
        "nilpotency": float(np.linalg.norm(data.apply(hd)) / np.linalg.norm(dP)),
    }


def _normalize_mode(data: LinearizationData, vec: np.ndarray) -> None:
    v = vec.reshape(2, -1)
    k = np.argmax(np.abs(v.ravel()))
    v = v * (abs(v.ravel()[k]) / v.ravel()[k])
    v = v.real
    s = float(np.sum(v[0] ** 2 - v[1] ** 2))
    data.xi_norm_before = s / float(np.sum(v**2))
    if s <= 0:
        data.flags.append("nonpositive <xi, sigma3 xi>")
        raise ModeNotFound("<xi, sigma3 xi> <= 0: normalization impossible")
    v = v / np.sqrt(s)
    if v[0] @ data.phi1 < 0:
        v = -v
    data.xi = v


def internal_mode(data: LinearizationData, window: float | None = None) -> tuple[float, np.ndarray]:
    """Internal eigenpair from the dense nonsymmetric eigensolve."""
    w, V = data.eig()
    guess = data.first_order_lambda()
    if window is None:
        window = 0.5 * abs(data.E1 - 4.0) + 10.0 * abs(guess - data.E1 - data.omega)
    real = np.abs(w.imag) < 1e-8
    above = real & (w.real > 4.0 + data.omega)
    if not np.any(above):
        raise ModeNotFound("no real eigenvalue above the continuous band")
    cand = np.nonzero(above)[0]
    k = cand[np.argmin(np.abs(w.real[cand] - guess))]
    if abs(w[k].real - guess) > window:
        raise ModeNotFound(f"nearest eigenvalue {w[k].real} is outside the predicted window around {guess}")
    data.lam = float(w[k].real)
    _normalize_mode(data, V[:, k])
    return data.lam, data.xi


def refine_internal_mode(
    data: LinearizationData,
    guess: tuple[float, np.ndarray] | None = None,
    tol: float = 1e-13,
    max_iter: int = 30,
) -> tuple[float, np.ndarray]:
    """Internal eigenpair by shifted inverse iteration with sparse LU.

    The Rayleigh quotient uses the ``sigma3`` pairing, which is stationary for
    this pseudo-symmetric operator.
    """
    if guess is None:
        lam = data.first_order_lambda()
        x = np.concatenate([data.phi1, np.zeros_like(data.phi1)])
    else:
        lam, xi = guess
        x = np.asarray(xi, dtype=float).ravel()
    A = data.matrix()
    eye = sparse.identity(A.shape[0], format="csc")
    shift = lam
    lu = splu((A - shift * eye).tocsc())
    s3 = np.concatenate([np.ones(data.size), -np.ones(data.size)])
    for it in range(max_iter):
        x = lu.solve(x)
        x /= np.linalg.norm(x)
        Ax = A @ x
        lam_new = float((Ax @ (s3 * x)) / (x @ (s3 * x)))
        res = np.linalg.norm(Ax - lam_new * x)
        if res < tol * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        if it in (2, 6) and abs(lam_new - shift) > 1e-12:
            shift = lam_new
            lu = splu((A - shift * eye).tocsc())
        lam = lam_new
    else:
        raise ModeNotFound(f"inverse iteration stalled, residual {res:.2e}")
    if lam <= 4.0 + data.omega:
        raise ModeNotFound(f"eigenvalue {lam} is not above the continuous band")
    data.lam = lam
    _normalize_mode(data, x)
    return data.lam, data.xi


def nonresonance_certificate(lam: float, omega: float) -> dict[str, float | bool | int]:
    """Distance of the multiples ``n lam`` from the continuous band ``+-[omega, 4 + omega]``."""
    n_max = int(np.ceil((4.0 + omega) / abs(lam))) + 1
    margins = []
    for n in range(1, n_max + 1):
        x = n * abs(lam)
        d = max(omega - x, x - (4.0 + omega), 0.0)
        margins.append(d)
    margin = float(min(margins))
    return {"margin": margin, "n_max": n_max, "worst_n": int(np.argmin(margins) + 1), "ok": margin > 0}


def _proj_outer(v: np.ndarray, w: np.ndarray, scale: complex) -> np.ndarray:
    """Matrix of ``X -> v <X, w> / scale`` on flattened spinors."""
    return np.outer(v.ravel(), np.conj(w.ravel())) / scale


def spectral_projections(data: LinearizationData, imag_tol: float = 1e-8) -> dict[str, np.ndarray]:
    """Dense spectral projections of the windowed operator.

    ``P_ng`` and ``P_disc`` use the closed forms built from the kernel vectors
    and the normalized internal mode; ``P_plus`` and ``P_minus`` sum the
    eigenprojections ``v <., sigma3 v> / <v, sigma3 v>`` of the continuous
    cluster with positive or negative eigenvalue.
    """
    if data.xi is None:
        internal_mode(data)
    qp = data.mass_prime
    Phi, dPhi, xi = data.Phi, data.dPhi, data.xi
    P_ng = _proj_outer(sigma3(Phi), sigma3(dPhi), qp) + _proj_outer(dPhi, Phi, qp)
    P_disc = _proj_outer(xi, sigma3(xi), 1.0) - _proj_outer(sigma1(xi), sigma3(sigma1(xi)), 1.0)
    n = 2 * data.size
    P_c = np.eye(n) - P_ng - P_disc
    w, V = data.eig()
    cont = np.abs(w) > 0.5 * data.omega
    cont &= np.abs(np.abs(w) - data.lam) > 1e-9 * max(1.0, data.lam)
    if np.any(np.abs(w[cont].imag) > imag_tol):
        raise RuntimeError("complex eigenvalues in the continuous cluster; enlarge the window")
    s3 = np.concatenate([np.ones(data.size), -np.ones(data.size)])
    P_plus = np.zeros((n, n), dtype=complex)
    P_minus = np.zeros((n, n), dtype=complex)
    for k in np.nonzero(cont)[0]:
        v = V[:, k]
        den = np.vdot(s3 * v, v)
        if abs(den) < 1e-10:
            raise RuntimeError("defective continuous cluster (null sigma3 norm)")
        P = np.outer(v, np.conj(s3 * v)) / den
        if w[k].real > 0:
            P_plus += P
        else:
            P_minus += P
    return {"P_ng": P_ng, "P_disc": P_disc, "P_c": P_c, "P_plus": P_plus, "P_minus": P_minus}


def sign_projection_defect(data: LinearizationData, projections: dict[str, np.ndarray] | None = None, s: float = 2.0) -> float:
    """Norm of ``<n>^s (P_c sigma3 - (P_plus - P_minus)) <n>^s`` on spinors."""
    pr = projections or spectral_projections(data)
    s3 = np.concatenate([np.ones(data.size), -np.ones(data.size)])
    K = pr["P_c"] * s3[None, :] - (pr["P_plus"] - pr["P_minus"])
    w = np.tile(japanese_bracket(data.sites) ** s, 2)
    return float(np.linalg.norm(w[:, None] * K * w[None, :], 2))
