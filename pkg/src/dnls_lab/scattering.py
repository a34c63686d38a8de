"""Jost solutions and scattering data for the scalar operator H = -Delta + q.

Conventions
-----------
The spectral parameter is ``lam = 2(1 - cos theta)`` with ``Im theta <= 0``.
Approaching the band ``[0, 4]`` from below (``lam - i0``) corresponds to real
``theta`` in ``(0, pi)``; from above (``lam + i0``) to ``theta`` in
``(-pi, 0)``.  Brackets are ``[g, h](n) = g(n+1) h(n) - g(n) h(n+1)``, which
makes the transmission coefficient equal to 1 for ``q = 0``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lattice import LatticeField
from .potentials import SUPPORT_TOL, Potential, bound_states

__all__ = [
    "JostData",
    "ScatteringCoefficients",
    "JostOverflowError",
    "SingularWronskianError",
    "jost",
    "jost_arrays",
    "resonance_check",
    "theta_of",
    "free_resolvent_kernel",
    "resolvent_kernel_H",
    "resolvent_apply_H",
    "scattering_coefficients",
    "limiting_absorption_projection",
    "eigen_complement",
    "scattering_sweep",
    "write_sweep_csv",
]

WRONSKIAN_TOL = 1e-10


class JostOverflowError(FloatingPointError):
    pass


class SingularWronskianError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class JostData:
    theta: complex
    lam: complex
    f_plus: LatticeField
    f_minus: LatticeField
    wronskian: complex
    spread: float


@dataclass(frozen=True)
class ScatteringCoefficients:
    T: complex
    R_plus: complex
    R_minus: complex


def _check_seeding(q: Potential) -> None:
    v = q.values
    if abs(v[0]) > SUPPORT_TOL or abs(v[-1]) > SUPPORT_TOL:
        raise ValueError("potential not negligible at the window edges; enlarge the window")


def jost_arrays(q_values: np.ndarray, sites: np.ndarray, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jost solutions for a batch of ``thetas``; arrays of shape ``(len(thetas), size)``."""
    th = np.atleast_1d(np.asarray(thetas, dtype=complex))
    lam = 2.0 - 2.0 * np.cos(th)
    m = len(sites)
    fp = np.empty((th.size, m), dtype=complex)
    fm = np.empty((th.size, m), dtype=complex)
    with np.errstate(over="ignore", invalid="ignore"):
        nxt = np.exp(-1j * (sites[-1] + 1) * th)
        fp[:, -1] = np.exp(-1j * sites[-1] * th)
        for j in range(m - 1, 0, -1):
            fp[:, j - 1] = (2.0 - lam + q_values[j]) * fp[:, j] - nxt
            nxt = fp[:, j]
        prv = np.exp(1j * (sites[0] - 1) * th)
        fm[:, 0] = np.exp(1j * sites[0] * th)
        for j in range(0, m - 1):
            fm[:, j + 1] = (2.0 - lam + q_values[j]) * fm[:, j] - prv
            prv = fm[:, j]
    for name, f in (("f_plus", fp), ("f_minus", fm)):
        bad = ~np.isfinite(f)
        if bad.any():
            k, j = np.argwhere(bad)[0 if name == "f_minus" else -1]
            raise JostOverflowError(f"{name} overflows at site {sites[j]} for theta={th[k]}")
    return fp, fm


def _bracket(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``g(n+1) h(n) - g(n) h(n+1)`` at every interior site (last axis)."""
    return g[..., 1:] * h[..., :-1] - g[..., :-1] * h[..., 1:]


def jost(q: Potential, theta: complex) -> JostData:
    """Jost solutions ``f_+ ~ e^{-i n theta}`` (right) and ``f_- ~ e^{i n theta}`` (left)."""
    theta = complex(theta)
    if theta.imag > 1e-15:
        raise ValueError("theta must satisfy Im theta <= 0")
    _check_seeding(q)
    fp, fm = jost_arrays(q.values, q.lattice.sites, np.array([theta]))
    w = _bracket(fp[0], fm[0])
    W = complex(np.mean(w))
    return JostData(
        theta=theta,
        lam=2.0 - 2.0 * np.cos(theta),
        f_plus=LatticeField(q.lattice, fp[0]),
        f_minus=LatticeField(q.lattice, fm[0]),
        wronskian=W,
        spread=float(np.max(np.abs(w - W))),
    )


def resonance_check(q: Potential, tol: float = 1e-6) -> tuple[complex, complex, bool]:
    """Wronskians at the band edges ``theta = 0`` (lam = 0) and ``theta = pi`` (lam = 4)."""
    W0 = jost(q, 0.0).wronskian
    Wpi = jost(q, np.pi).wronskian
    return W0, Wpi, bool(abs(W0) > tol and abs(Wpi) > tol)


def theta_of(lam: complex, side: int | None = None) -> complex:
    """Solve ``2(1 - cos theta) = lam`` on the branch ``Im theta <= 0``.

    For ``lam`` on ``[0, 4]`` a ``side`` of +1 (``lam + i0``) or -1
    (``lam - i0``) is required.
    """
    lam = complex(lam)
    on_band = abs(lam.imag) == 0 and 0.0 <= lam.real <= 4.0
    if on_band:
        if side not in (1, -1):
            raise ValueError("spectral parameter on the band needs side=+1 or side=-1")
        th = np.arccos(1.0 - lam.real / 2.0)
        return complex(-th if side == 1 else th)
    th = complex(np.arccos(1.0 - lam / 2.0))
    if th.imag > 0:
        th = -th
    return th


def free_resolvent_kernel(z: complex, mu: int, nu: int, side: int | None = None) -> complex:
    """Kernel of ``(-Delta - z)^{-1}``: ``e^{-i theta |mu-nu|} / (2i sin theta)``."""
    th = theta_of(z, side)
    return complex(np.exp(-1j * th * abs(mu - nu)) / (2j * np.sin(th)))


def _kernel_parts(q: Potential, th: complex):
    fp, fm = jost_arrays(q.values, q.lattice.sites, np.array([th]))
    W = complex(np.mean(_bracket(fp[0], fm[0])))
    if abs(W) < WRONSKIAN_TOL:
        raise SingularWronskianError(f"Wronskian {abs(W):.2e} at theta={th}")
    return fp[0], fm[0], W


def resolvent_kernel_H(q: Potential, lam: complex, side: int | None, mu: int, nu: int) -> complex:
    """Kernel of ``(H - lam -/+ i0)^{-1}`` via ``-f_+(max) f_-(min) / W``."""
    _check_seeding(q)
    fp, fm, W = _kernel_parts(q, theta_of(lam, side))
    hi, lo = q.lattice.index(max(mu, nu)), q.lattice.index(min(mu, nu))
    return complex(-fp[hi] * fm[lo] / W)


def _apply_kernel(fp: np.ndarray, fm: np.ndarray, W: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Apply ``K(n, n') = -f_+(max) f_-(min) / W`` for batches along axis 0."""
    below = np.cumsum(fm * u, axis=-1)  # sum over n' <= n
    total = np.sum(fp * u, axis=-1, keepdims=True)
    above = total - np.cumsum(fp * u, axis=-1)  # sum over n' > n
    return -(fp * below + fm * above) / W[..., None]


def resolvent_apply_H(q: Potential, lam: complex, side: int | None, u: LatticeField) -> LatticeField:
    """``R(lam +/- i0) u`` on the window, for ``u`` supported inside it."""
    _check_seeding(q)
    fp, fm, W = _kernel_parts(q, theta_of(lam, side))
    vals = _apply_kernel(fp[None], fm[None], np.array([W]), np.asarray(u.values, dtype=complex)[None])[0]
    return LatticeField(q.lattice, vals)


def scattering_coefficients(q: Potential, theta: float) -> ScatteringCoefficients:
    """Transmission and reflection coefficients for real ``theta`` in (0, pi)."""
    d = jost(q, theta)
    fp, fm = d.f_plus.values, d.f_minus.values
    s = 2j * np.sin(theta)
    b_mp = np.mean(_bracket(fm, fp))
    b_pm = np.mean(_bracket(fp, fm))
    T = s / b_mp
    Rp = -np.mean(_bracket(fm, np.conj(fp))) / b_mp
    Rm = -np.mean(_bracket(fp, np.conj(fm))) / b_pm
    return ScatteringCoefficients(complex(T), complex(Rp), complex(Rm))


def eigen_complement(q: Potential, u: LatticeField) -> LatticeField:
    """``u`` minus its components along the out-of-band eigenvectors of the windowed H."""
    _, vecs = bound_states(q)
    v = np.asarray(u.values, dtype=complex).copy()
    for e in vecs:
        v -= (e @ v) * e
    return LatticeField(q.lattice, v)


def _projection_at(q: Potential, u: np.ndarray, n_nodes: int, chunk: int = 512) -> np.ndarray:
    # midpoint rule in theta on (0, pi); integrand is smooth, even and periodic
    th = (np.arange(n_nodes) + 0.5) * np.pi / n_nodes
    acc = np.zeros(len(u), dtype=complex)
    for s in range(0, n_nodes, chunk):
        t = th[s : s + chunk]
        both = np.concatenate([-t, t])  # lam + i0, then lam - i0
        fp, fm = jost_arrays(q.values, q.lattice.sites, both)
        W = np.mean(_bracket(fp, fm), axis=-1)
        if np.min(np.abs(W)) < WRONSKIAN_TOL:
            raise SingularWronskianError("Wronskian vanishes on the band; threshold resonance suspected")
        Ku = _apply_kernel(fp, fm, W, u[None, :])
        k = len(t)
        diff = Ku[:k] - Ku[k:]
        acc += np.sum(diff * (2.0 * np.sin(t))[:, None], axis=0)
    return acc * (np.pi / n_nodes) / (2j * np.pi)


def limiting_absorption_projection(
    q: Potential,
    u: LatticeField,
    tol: float = 1e-9,
    n_start: int = 256,
    n_max: int = 65536,
) -> LatticeField:
    """Continuous-spectrum part of ``u`` from the jump of the resolvent across ``[0, 4]``.

    The integral over ``lam`` is rewritten in ``theta`` and evaluated by the
    midpoint rule, doubling the node count until two successive results agree
    to ``tol`` relative to ``||u||``.
    """
    _check_seeding(q)
    vals = np.asarray(u.values, dtype=complex)
    scale = max(np.linalg.norm(vals), 1e-300)
    n = n_start
    prev = _projection_at(q, vals, n)
    while n < n_max:
        n *= 2
        cur = _projection_at(q, vals, n)
        if np.linalg.norm(cur - prev) <= tol * scale:
            return LatticeField(q.lattice, cur)
        prev = cur
    raise RuntimeError("limiting-absorption quadrature did not converge; threshold resonance suspected")


def scattering_sweep(q: Potential, thetas) -> list[tuple[complex, JostData, ScatteringCoefficients]]:
    out = []
    for th in thetas:
        d = jost(q, th)
        out.append((complex(th), d, scattering_coefficients(q, float(np.real(th)))))
    return out


def write_sweep_csv(path: str | Path, sweep) -> None:
    """Columns ``theta_re theta_im W_re W_im T_re T_im Rp_re Rp_im Rm_re Rm_im``."""
    cols = "theta_re theta_im W_re W_im T_re T_im Rp_re Rp_im Rm_re Rm_im".split()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=" ")
        w.writerow(cols)
        for th, d, sc in sweep:
            row = []
            for c in (th, d.wronskian, sc.T, sc.R_plus, sc.R_minus):
                row += [repr(float(c.real)), repr(float(c.imag))]
            w.writerow(row)
