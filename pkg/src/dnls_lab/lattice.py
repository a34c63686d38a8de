"""Truncated one-dimensional lattice, weighted norms and the operators -Delta + q.

Fields live on a finite window ``[n_min, n_max]`` of the integers with
Dirichlet (zero ghost value) truncation.  The window stands in for the full
lattice; doubling it is the convergence test used throughout the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import sparse

__all__ = [
    "Lattice",
    "LatticeField",
    "WeightedNormSpec",
    "DecayFit",
    "japanese_bracket",
    "apply_laplacian",
    "apply_H",
    "inner",
    "weighted_norm",
    "fit_exponential_decay",
    "hamiltonian_banded",
    "hamiltonian_sparse",
    "save_field",
    "load_field",
]

MIN_WINDOW = 32


@dataclass(frozen=True)
class Lattice:
    """Window ``[n_min, n_max]`` of the integer lattice with Dirichlet edges."""

    n_min: int
    n_max: int
    boundary: str = "dirichlet"

    def __post_init__(self) -> None:
        if not (self.n_min < 0 < self.n_max):
            raise ValueError(f"window must straddle 0, got [{self.n_min}, {self.n_max}]")
        if self.size < MIN_WINDOW:
            raise ValueError(f"window length {self.size} below minimum {MIN_WINDOW}")
        if self.boundary != "dirichlet":
            raise ValueError(f"unsupported boundary {self.boundary!r}")

    @classmethod
    def symmetric(cls, half_width: int = 256) -> "Lattice":
        return cls(-int(half_width), int(half_width))

    @property
    def size(self) -> int:
        return self.n_max - self.n_min + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.n_min, self.n_max + 1)

    def index(self, n: int) -> int:
        """Array index of site ``n``."""
        if not (self.n_min <= n <= self.n_max):
            raise IndexError(f"site {n} outside window [{self.n_min}, {self.n_max}]")
        return int(n - self.n_min)

    def delta(self, n: int = 0) -> "LatticeField":
        v = np.zeros(self.size)
        v[self.index(n)] = 1.0
        return LatticeField(self, v)

    def embed(self, values: np.ndarray, source: "Lattice") -> np.ndarray:
        """Copy ``values`` given on ``source`` into this window, zero padded."""
        out = np.zeros(self.size, dtype=np.asarray(values).dtype)
        lo = max(self.n_min, source.n_min)
        hi = min(self.n_max, source.n_max)
        out[lo - self.n_min : hi - self.n_min + 1] = values[lo - source.n_min : hi - source.n_min + 1]
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"n_min": self.n_min, "n_max": self.n_max, "boundary": self.boundary}


@dataclass(frozen=True)
class LatticeField:
    """Values of a (real or complex) sequence on a lattice window."""

    lattice: Lattice
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values)
        if v.ndim != 1 or v.shape[0] != self.lattice.size:
            raise ValueError(f"expected {self.lattice.size} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def sites(self) -> np.ndarray:
        return self.lattice.sites

    def __call__(self, n: int):
        return self.values[self.lattice.index(n)]

    def with_values(self, values: np.ndarray) -> "LatticeField":
        return LatticeField(self.lattice, values)

    def __add__(self, other: "LatticeField") -> "LatticeField":
        _check_same(self.lattice, other.lattice)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "LatticeField") -> "LatticeField":
        _check_same(self.lattice, other.lattice)
        return self.with_values(self.values - other.values)

    def __mul__(self, c) -> "LatticeField":
        return self.with_values(c * self.values)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True)
class WeightedNormSpec:
    """Exponents of the norm ``sum <n>^{p sigma} |u(n)|^p``."""

    p: float = 2.0
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if not self.p >= 1:
            raise ValueError("p must be >= 1")


@dataclass(frozen=True)
class DecayFit:
    rate: float
    prefactor: float
    ok: bool
    residual: float


def _check_same(a: Lattice, b: Lattice) -> None:
    if a != b:
        raise ValueError(f"lattice mismatch: {a} vs {b}")


def japanese_bracket(n: np.ndarray) -> np.ndarray:
    """``sqrt(1 + n^2)``."""
    n = np.asarray(n, dtype=float)
    return np.sqrt(1.0 + n * n)


def _laplacian_values(v: np.ndarray) -> np.ndarray:
    out = -2.0 * v
    out[:-1] += v[1:]
    out[1:] += v[:-1]
    return out


def apply_laplacian(u: LatticeField) -> LatticeField:
    """Discrete Laplacian ``u(n+1) + u(n-1) - 2u(n)`` with zero ghost values."""
    return u.with_values(_laplacian_values(u.values))


def apply_H(q, u: LatticeField) -> LatticeField:
    """Apply ``-Delta + q``; ``q`` is a :class:`~dnls_lab.potentials.Potential`."""
    _check_same(q.lattice, u.lattice)
    return u.with_values(q.values * u.values - _laplacian_values(u.values))


def inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Sesquilinear pairing ``sum a * conj(b)``, linear in the first slot."""
    return complex(np.vdot(b, a))


def weighted_norm(u: LatticeField | np.ndarray, spec: WeightedNormSpec, sites: np.ndarray | None = None) -> float:
    """Norm in the weighted space with weight ``<n>^sigma``.

    ``u`` may be a field or a raw array (then ``sites`` is required).  Arrays
    of shape ``(k, size)`` are treated as vector-valued fields and the
    pointwise Euclidean modulus is used.
    """
    if isinstance(u, LatticeField):
        vals, sites = u.values, u.sites
    else:
        if sites is None:
            raise ValueError("sites required for raw arrays")
        vals = np.asarray(u)
    mod = np.abs(vals) if vals.ndim == 1 else np.sqrt(np.sum(np.abs(vals) ** 2, axis=0))
    w = japanese_bracket(sites) ** spec.sigma
    if np.isinf(spec.p):
        return float(np.max(w * mod))
    return float(np.sum((w * mod) ** spec.p) ** (1.0 / spec.p))


def fit_exponential_decay(u: LatticeField, floor: float = 1e-13, tail_tol: float = 1.0) -> DecayFit:
    """Least-squares fit of ``log|u(n)| ~ log C - a|n|``.

    ``ok`` requires a positive rate and an RMS log-residual below ``tail_tol``
    on the outer half of the fitted sites.
    """
    mod = np.abs(u.values)
    if not np.any(mod > 0):
        raise ValueError("cannot fit decay of an all-zero field")
    mask = mod > floor
    x = np.abs(u.sites[mask]).astype(float)
    y = np.log(mod[mask])
    if np.ptp(x) == 0:
        return DecayFit(0.0, float(np.exp(y.mean())), False, 0.0)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    outer = x >= np.median(x)
    tail = float(np.sqrt(np.mean(resid[outer] ** 2)))
    rate = float(-slope)
    return DecayFit(rate, float(np.exp(intercept)), bool(rate > 1e-8 and tail < tail_tol), tail)


def hamiltonian_banded(q_values: np.ndarray, shift: float = 0.0) -> np.ndarray:
    """``-Delta + q + shift`` in the ``(1, 1)`` banded layout of ``solve_banded``."""
    m = len(q_values)
    ab = np.zeros((3, m))
    ab[0, 1:] = -1.0
    ab[1] = 2.0 + q_values + shift
    ab[2, :-1] = -1.0
    return ab


def hamiltonian_sparse(q_values: np.ndarray, shift: float = 0.0) -> sparse.csr_matrix:
    m = len(q_values)
    off = -np.ones(m - 1)
    return sparse.diags([off, 2.0 + q_values + shift, off], [-1, 0, 1], format="csr")


def save_field(path: str | Path, u: LatticeField, meta: dict[str, Any] | None = None) -> None:
    """Write ``site value_re value_im`` rows below a one-line JSON header."""
    header = {"lattice": u.lattice.to_dict(), **(meta or {})}
    vals = np.asarray(u.values, dtype=complex)
    rows = np.column_stack([u.sites, vals.real, vals.imag])
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("# site value_re value_im\n")
        for n, re, im in rows:
            fh.write(f"{int(n)} {float(re)!r} {float(im)!r}\n")


def load_field(path: str | Path) -> tuple[LatticeField, dict[str, Any]]:
    """Inverse of :func:`save_field`; real data come back as a real array."""
    with open(path) as fh:
        header = json.loads(fh.readline()[2:])
    data = np.loadtxt(path, comments="#", ndmin=2)
    lat = Lattice(**header.pop("lattice"))
    if not np.array_equal(data[:, 0].astype(int), lat.sites):
        raise ValueError("site column does not match header window")
    vals = data[:, 1] + 1j * data[:, 2]
    if not np.any(data[:, 2]):
        vals = data[:, 1].copy()
    return LatticeField(lat, vals), header
