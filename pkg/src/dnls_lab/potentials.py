"""Potentials q for H = -Delta + q and certificates for the working hypotheses.

The hypotheses checked here are: exponential decay of q, absence of
threshold resonances at the band edges 0 and 4, and exactly two eigenvalues,
one below the band and one above it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal, eigvalsh_tridiagonal

from .lattice import Lattice, LatticeField, fit_exponential_decay, load_field, save_field

__all__ = [
    "Potential",
    "HypothesisReport",
    "DivergenceError",
    "IndeterminateError",
    "q_star",
    "delta_potential",
    "moment_functional",
    "zero_sum_check",
    "zero_sum_threshold_limit",
    "free_pairing",
    "predict_small_eps_spectrum",
    "discrete_spectrum",
    "bound_states",
    "validate_hypotheses",
    "save_potential",
    "load_potential",
]

SUPPORT_TOL = 1e-14


class DivergenceError(ValueError):
    """The requested limit does not exist."""


class IndeterminateError(RuntimeError):
    """An eigenvalue cannot be separated from a band edge on the current window."""


@dataclass(frozen=True)
class Potential:
    """Real potential ``eps * profile`` on a lattice window."""

    field: LatticeField
    eps: float = 1.0
    decay_rate: float | None = None

    def __post_init__(self) -> None:
        if np.iscomplexobj(self.field.values):
            if np.any(self.field.values.imag):
                raise ValueError("potential must be real")
            object.__setattr__(self, "field", self.field.with_values(self.field.values.real.copy()))

    @property
    def lattice(self) -> Lattice:
        return self.field.lattice

    @property
    def profile(self) -> np.ndarray:
        return self.field.values

    @property
    def values(self) -> np.ndarray:
        """Effective values ``eps * profile``."""
        return self.eps * self.field.values

    def scaled(self, eps: float) -> "Potential":
        return Potential(self.field, float(eps), self.decay_rate)

    def on(self, lattice: Lattice) -> "Potential":
        """Same potential re-embedded on another window (zero padded or cropped)."""
        vals = lattice.embed(self.field.values, self.lattice)
        return Potential(LatticeField(lattice, vals), self.eps, self.decay_rate)

    def support_radius(self) -> int:
        nz = np.nonzero(np.abs(self.values) > SUPPORT_TOL)[0]
        if nz.size == 0:
            return 0
        return int(np.max(np.abs(self.lattice.sites[nz])))


@dataclass
class HypothesisReport:
    h1_ok: bool
    h1_rate: float
    h2_ok: bool
    W0: complex
    Wpi: complex
    h3_ok: bool
    eigenvalues: list[float]
    E0: float
    E1: float
    truncation_error: float
    half_width: int
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.h1_ok and self.h2_ok and self.h3_ok

    def to_json(self) -> str:
        d = asdict(self)
        d["W0"] = [self.W0.real, self.W0.imag]
        d["Wpi"] = [self.Wpi.real, self.Wpi.imag]
        d["margin_below"] = self.E0
        d["margin_above"] = self.E1 - 4.0
        return json.dumps(d, indent=2, default=float)


def q_star(lattice: Lattice | None = None, eps: float = 1.0) -> Potential:
    """Canonical zero-sum potential with values (-1/2, 1, -1/2) at sites (-1, 0, 1)."""
    lattice = lattice or Lattice.symmetric(256)
    v = np.zeros(lattice.size)
    v[lattice.index(-1)] = -0.5
    v[lattice.index(0)] = 1.0
    v[lattice.index(1)] = -0.5
    return Potential(LatticeField(lattice, v), eps, decay_rate=np.inf)


def delta_potential(amplitude: float, lattice: Lattice | None = None, site: int = 0) -> Potential:
    lattice = lattice or Lattice.symmetric(256)
    v = np.zeros(lattice.size)
    v[lattice.index(site)] = amplitude
    return Potential(LatticeField(lattice, v), 1.0, decay_rate=np.inf)


def _support(q: Potential, values: np.ndarray | None = None):
    vals = q.values if values is None else values
    idx = np.nonzero(np.abs(vals) > SUPPORT_TOL)[0]
    return q.lattice.sites[idx].astype(float), vals[idx]


def moment_functional(q: Potential) -> float:
    """Double sum of ``|mu - nu| q(mu) q(nu)`` over the support."""
    n, v = _support(q)
    return float(v @ np.abs(n[:, None] - n[None, :]) @ v)


def zero_sum_check(q: Potential, tol: float = 1e-12) -> bool:
    return bool(abs(np.sum(q.values)) <= tol)


def _theta_below_band(z: complex) -> complex:
    """Solution of ``2(1 - cos th) = z`` with ``Im th <= 0``."""
    th = np.arccos(complex(1.0 - z / 2.0))
    if th.imag > 0:
        th = -th
    return th


def free_pairing(q: Potential, z: complex) -> complex:
    """``<R(z) q, q>`` for the free resolvent ``(-Delta - z)^{-1}``, z off the band."""
    n, v = _support(q)
    th = _theta_below_band(z)
    d = np.abs(n[:, None] - n[None, :])
    kern = np.exp(-1j * th * d) / (2j * np.sin(th))
    return complex(v @ kern @ v)


def zero_sum_threshold_limit(q: Potential, z_sequence=None) -> float:
    """Limit of ``<R(z) q, q>`` as z increases to 0 for zero-sum q.

    The pairing is analytic in ``t = sqrt(-z)``-like variable
    ``t = arccosh(1 - z/2)``; two Richardson levels in ``t`` are applied to the
    three values closest to 0.
    """
    if not zero_sum_check(q):
        raise DivergenceError(
            f"sum of q is {np.sum(q.values):.3e}; the pairing grows like 1/sqrt(-z) and has no limit"
        )
    if z_sequence is None:
        z_sequence = -(10.0 ** -np.arange(1, 9))
    z = np.asarray(z_sequence, dtype=float)
    if np.any(z >= 0):
        raise ValueError("z_sequence must be negative")
    z = np.sort(z)[::-1][:3]  # three closest to 0
    t = np.arccosh(1.0 - z / 2.0)
    vals = np.array([free_pairing(q, zz).real for zz in z])
    # quadratic in t through three points, evaluated at t = 0
    return float(np.polyval(np.polyfit(t, vals, 2), 0.0))


def predict_small_eps_spectrum(q: Potential, eps: float) -> tuple[float, float]:
    """Leading-order eigenvalues (-E0, E1) of ``-Delta + eps q`` for small eps.

    Returns ``(E0_pred, E1_pred)`` with ``E0_pred = 2(cosh(eps^2 |m| / 4) - 1)``,
    ``m`` the moment functional of the profile.  The upper eigenvalue uses the
    alternating-sign reflection, which leaves ``m`` unchanged.
    """
    if eps == 0:
        return 0.0, 4.0
    unit = Potential(q.field, 1.0)
    m = moment_functional(unit)
    if m >= 0:
        raise ValueError(f"moment functional {m} is not negative; no small-coupling prediction")
    e0 = 2.0 * (np.cosh(eps * eps * abs(m) / 4.0) - 1.0)
    return float(e0), float(4.0 + e0)


def discrete_spectrum(q: Potential) -> np.ndarray:
    """Eigenvalues of the windowed H lying outside ``[0, 4]``."""
    m = q.lattice.size
    d = 2.0 + q.values
    e = -np.ones(m - 1)
    lo = eigvalsh_tridiagonal(d, e, select="v", select_range=(-np.inf, 0.0))
    hi = eigvalsh_tridiagonal(d, e, select="v", select_range=(4.0, np.inf))
    return np.concatenate([lo, hi])


def bound_states(q: Potential) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-band eigenpairs; vectors are unit normalized with value > 0 at site 0."""
    m = q.lattice.size
    d = 2.0 + q.values
    e = -np.ones(m - 1)
    vals, vecs = [], []
    for rng in ((-np.inf, 0.0), (4.0, np.inf)):
        w, v = eigh_tridiagonal(d, e, select="v", select_range=rng)
        for k in range(len(w)):
            x = v[:, k]
            s = np.sign(x[q.lattice.index(0)]) or 1.0
            vals.append(w[k])
            vecs.append(s * x / np.linalg.norm(x))
    if not vals:
        return np.zeros(0), np.zeros((0, m))
    return np.array(vals), np.array(vecs)


def _h1(q: Potential) -> tuple[bool, float]:
    v = q.values
    if not np.any(v):
        return True, np.inf
    r = q.support_radius()
    half = min(-q.lattice.n_min, q.lattice.n_max)
    if r <= half // 2:
        # compact support well inside the window: C = max |q| e^{|n|} is finite
        fit = fit_exponential_decay(LatticeField(q.lattice, v))
        return True, fit.rate if fit.rate > 0 else np.inf
    fit = fit_exponential_decay(LatticeField(q.lattice, v))
    return bool(fit.ok and fit.rate >= 1.0), fit.rate


def validate_hypotheses(
    q: Potential,
    eps: float | None = None,
    max_half_width: int = 16384,
) -> HypothesisReport:
    """Certify decay, threshold non-resonance and the two-eigenvalue structure.

    ``eps`` rescales the profile of ``q`` when given.  The window is grown
    (doubling) until the out-of-band eigenvalues are stable and separated from
    the band edges by more than ten times the doubling difference.
    """
    from .scattering import resonance_check

    if eps is not None:
        q = q.scaled(eps)
    notes: list[str] = []
    h1_ok, rate = _h1(q)

    half = max(-q.lattice.n_min, q.lattice.n_max)
    m = moment_functional(Potential(q.field, 1.0))
    if m < 0 and q.eps != 0:
        e0p, _ = predict_small_eps_spectrum(q, q.eps)
        half = max(half, int(np.ceil(8.0 / np.sqrt(e0p))))
    while True:
        qa = q.on(Lattice.symmetric(half))
        qb = q.on(Lattice.symmetric(2 * half))
        ea, eb = discrete_spectrum(qa), discrete_spectrum(qb)
        if len(ea) == len(eb):
            trunc = float(np.max(np.abs(ea - eb))) if len(ea) else 0.0
            gaps = np.minimum(np.abs(eb), np.abs(eb - 4.0))
            if np.all(gaps > 10.0 * max(trunc, 1e-13)):
                break
        if 2 * half >= max_half_width:
            raise IndeterminateError(
                f"eigenvalue within truncation error of a band edge at half width {2 * half}; grow window"
            )
        half *= 2
        notes.append(f"window grown to half width {half}")
    eig = [float(x) for x in eb]
    below = [x for x in eig if x < 0]
    above = [x for x in eig if x > 4]
    h3_ok = len(below) == 1 and len(above) == 1 and len(eig) == 2
    W0, Wpi, h2_ok = resonance_check(q)
    return HypothesisReport(
        h1_ok=h1_ok,
        h1_rate=float(rate),
        h2_ok=h2_ok,
        W0=W0,
        Wpi=Wpi,
        h3_ok=h3_ok,
        eigenvalues=eig,
        E0=-below[0] if below else float("nan"),
        E1=above[0] if above else float("nan"),
        truncation_error=trunc,
        half_width=2 * half,
        notes=notes,
    )


def save_potential(path: str | Path, q: Potential) -> None:
    save_field(path, q.field, {"kind": "potential", "eps": q.eps})


def load_potential(path: str | Path) -> Potential:
    f, meta = load_field(path)
    return Potential(f, float(meta.get("eps", 1.0)))
