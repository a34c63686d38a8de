"""Modulation coordinates around the ground-state family.

A state near the family is written ``u = e^{i theta} (phi_omega + r)`` with
``<Re r, phi_omega> = <Im r, dphi_omega> = 0``.  The spinor ``R = (r, conj r)``
splits as ``z xi + conj(z) sigma1 xi + f`` with ``f`` in the continuous
spectral subspace of the linearization.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .evolution import Trajectory
from .ground_state import GroundStateBranch
from .lattice import WeightedNormSpec, japanese_bracket, weighted_norm
from .linearization import LinearizationData, build_linearization, sigma1, sigma3, spinor_inner

__all__ = [
    "DecompositionError",
    "TubeExit",
    "ModulationState",
    "ModulationTrajectory",
    "nonlinear_remainder",
    "decompose",
    "split_discrete_continuous",
    "modulation_rates",
    "modulation_rhs",
    "stability_falsifier",
    "track",
    "persistence_metric",
    "write_modulation_csv",
]


Z_FLOOR = 1e-12  # internal-mode amplitudes below this are roundoff


class DecompositionError(RuntimeError):
    pass


class TubeExit(RuntimeError):
    pass


@dataclass
class ModulationState:
    omega: float
    gamma: float
    r: np.ndarray
    orthogonality: tuple[float, float]
    iterations: int
    z: complex | None = None
    f: np.ndarray | None = None


def _binom(n: int, k: int) -> int:
    from math import comb

    return comb(n, k)


def nonlinear_remainder(phi: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Terms of ``|phi + r|^6 (phi + r)`` of degree >= 2 in ``(r, conj r)``, with a minus sign.

    Expanded binomially from ``(phi + r)^4 (phi + conj r)^3`` so no cancellation
    against the degree 0 and 1 parts occurs.
    """
    rb = np.conj(r)
    out = np.zeros_like(r, dtype=complex)
    rp = [np.ones_like(r, dtype=complex)]
    rbp = [np.ones_like(r, dtype=complex)]
    for _ in range(4):
        rp.append(rp[-1] * r)
        rbp.append(rbp[-1] * rb)
    php = [phi**k for k in range(8)]
    for j in range(5):
        for k in range(4):
            if j + k < 2:
                continue
            out += _binom(4, j) * _binom(3, k) * php[7 - j - k] * rp[j] * rbp[k]
    return -out


def _orth(r, phi, d1):
    # each constraint measured against a unit direction, so the scale of d1 is irrelevant
    return float(np.real(r) @ phi) / np.linalg.norm(phi), float(np.imag(r) @ d1) / np.linalg.norm(d1)


def _newton(u, branch, omega, gamma, tol, max_iter):
    it = 0
    prev = np.inf
    for it in range(1, max_iter + 1):
        phi, d1, d2 = branch.solve_at(omega)
        v = np.exp(-1j * gamma) * u
        a, b = v.real, v.imag
        g = np.array([(a - phi) @ phi, b @ d1])
        J = np.array([[a @ d1 - 2.0 * (phi @ d1), b @ phi], [b @ d2, -(a @ d1)]])
        dw, dg = np.linalg.solve(J, -g)
        omega_new = omega + dw
        if omega_new <= branch.E0:
            raise DecompositionError("Newton left the branch (omega below E0)")
        omega, gamma = omega_new, gamma + dg
        step = max(abs(dw) / (omega - branch.E0), abs(dg))
        # stop at the roundoff floor: tiny steps, or small steps that no longer shrink
        if step <= 1e-15 or (step <= 1e-10 and step > 0.5 * prev):
            break
        prev = step
    else:
        phi, d1, _ = branch.solve_at(omega)
        r = np.exp(-1j * gamma) * u - phi
        o1, o2 = _orth(r, phi, d1)
        if max(abs(o1), abs(o2)) > 1e-10 * max(np.linalg.norm(r), np.linalg.norm(u) * 1e-3):
            raise DecompositionError(f"modulation Newton did not converge in {max_iter} iterations")
    return omega, gamma, it


def decompose(
    u: np.ndarray,
    branch: GroundStateBranch,
    guess: tuple[float, float] | None = None,
    check_unique: bool = True,
    max_iter: int = 40,
) -> ModulationState:
    """Modulation parameters ``(omega, gamma)`` and remainder ``r`` of ``u``.

    ``gamma`` is the full phase of the decomposition, wrapped to ``(-pi, pi]``.
    """
    u = np.asarray(getattr(u, "values", u), dtype=complex)
    if guess is None:
        m2 = float(np.vdot(u, u).real)
        omega = float(np.interp(m2, branch.mass, branch.omegas))
        gamma = float(np.angle(np.sum(u * branch.phi[0].values)))
    else:
        omega, gamma = guess
    omega, gamma, it = _newton(u, branch, omega, gamma, 1e-15, max_iter)
    phi, d1, _ = branch.solve_at(omega)
    r = np.exp(-1j * gamma) * u - phi
    if check_unique:
        span = 0.2 * (omega - branch.E0)
        for dw, dg in ((span, 0.05), (-0.5 * span, -0.05)):
            o2, g2, _ = _newton(u, branch, omega + dw, gamma + dg, 1e-15, max_iter)
            if abs(o2 - omega) > 1e-10 * abs(omega) or abs(np.angle(np.exp(1j * (g2 - gamma)))) > 1e-9:
                raise DecompositionError("modulation parameters are not unique in the tube")
    gamma = float(np.angle(np.exp(1j * gamma)))
    return ModulationState(omega, gamma, r, _orth(r, phi, d1), it)


def split_discrete_continuous(r: np.ndarray, lin: LinearizationData, check: bool = True) -> tuple[complex, np.ndarray]:
    """``z = <R, sigma3 xi>`` and ``f = R - z xi - conj(z) sigma1 xi`` for ``R = (r, conj r)``."""
    xi = lin.xi
    R = np.stack([r, np.conj(r)])
    z = spinor_inner(R, sigma3(xi))
    f = R - z * xi - np.conj(z) * sigma1(xi)
    if check:
        fn = np.linalg.norm(f)
        leak = _pc_defect(f, lin)
        floor = 1e-11 * (np.linalg.norm(R) + np.linalg.norm(lin.phi))
        if leak > 1e-8 * fn + floor:
            raise DecompositionError(f"f not in the continuous subspace (defect {leak:.2e}, |f|={fn:.2e})")
        if np.max(np.abs(f[1] - np.conj(f[0])), initial=0.0) > 1e-12 * max(np.max(np.abs(R)), 1e-300):
            raise DecompositionError("f violates the reality structure")
    return complex(z), f


def _pc_defect(f: np.ndarray, lin: LinearizationData) -> float:
    """Norm of the components of ``f`` along the kernel and internal modes."""
    qp = lin.mass_prime
    s3P, dP = sigma3(lin.Phi), lin.dPhi
    png = s3P * spinor_inner(f, sigma3(dP)) / qp + dP * spinor_inner(f, lin.Phi) / qp
    pd = lin.xi * spinor_inner(f, sigma3(lin.xi)) - sigma1(lin.xi) * spinor_inner(f, sigma3(sigma1(lin.xi)))
    return float(np.linalg.norm(png + pd))


def modulation_rates(r: np.ndarray, phi: np.ndarray, d1: np.ndarray, d2: np.ndarray) -> tuple[float, float]:
    """``(omega_dot, gamma_dot)`` from the time derivative of the orthogonality constraints.

    ``gamma_dot`` is ``theta_dot - omega``.  With ``a = Re r``, ``b = Im r``,
    ``qh = <phi, dphi>`` and ``N`` from :func:`nonlinear_remainder`::

        [<a,dphi> - qh,  <b,phi>        ] [omega_dot]   [-<Im N, phi> ]
        [<b,d2phi>,      -(qh + <a,dphi>)] [gamma_dot] = [ <Re N, dphi>]
    """
    a, b = r.real, r.imag
    N = nonlinear_remainder(phi, r)
    qh = phi @ d1
    ad = a @ d1
    M = np.array([[ad - qh, b @ phi], [b @ d2, -(qh + ad)]])
    rhs = np.array([-(N.imag @ phi), N.real @ d1])
    if abs(np.linalg.det(M)) < 1e-12 * qh * qh:
        raise TubeExit("modulation matrix singular; remainder too large")
    w, g = np.linalg.solve(M, rhs)
    return float(w), float(g)


def modulation_rhs(state: ModulationState, branch: GroundStateBranch) -> tuple[float, float]:
    phi, d1, d2 = branch.solve_at(state.omega)
    return modulation_rates(state.r, phi, d1, d2)


def stability_falsifier(
    u: np.ndarray,
    branch: GroundStateBranch,
    sigma: float = 2.0,
    guess: tuple[float, float] | None = None,
    max_iter: int = 50,
) -> tuple[float, float, float]:
    """``min over (kappa, mu) of ||u - e^{i kappa} phi_mu||`` in the weight ``<n>^{-sigma}``.

    Gauss-Newton from ``guess`` (default: the modulation parameters of ``u``).
    Returns ``(distance, kappa, mu)``.
    """
    u = np.asarray(getattr(u, "values", u), dtype=complex)
    if guess is None:
        st = decompose(u, branch, check_unique=False)
        guess = (st.gamma, st.omega)
    kappa, mu = guess
    w = japanese_bracket(branch.lattice.sites) ** (-sigma)
    prev = np.inf
    for _ in range(max_iter):
        phi, d1, _ = branch.solve_at(mu)
        e = np.exp(1j * kappa)
        res = w * (u - e * phi)
        jk = w * (-1j * e * phi)
        jm = w * (-e * d1)
        A = np.column_stack([np.concatenate([jk.real, jk.imag]), np.concatenate([jm.real, jm.imag])])
        rr = np.concatenate([res.real, res.imag])
        scale = np.linalg.norm(A, axis=0)
        step = np.linalg.lstsq(A / scale, -rr, rcond=None)[0] / scale
        kappa += step[0]
        mu += step[1]
        if mu <= branch.E0:
            raise DecompositionError("falsifier minimizer escaped the branch interval")
        val = np.linalg.norm(rr)
        if abs(step[0]) < 1e-14 and abs(step[1]) < 1e-15 * abs(mu) or abs(prev - val) <= 1e-15 * max(val, 1e-300):
            break
        prev = val
    phi, _, _ = branch.solve_at(mu)
    d = float(np.linalg.norm(w * (u - np.exp(1j * kappa) * phi)))
    return d, float(kappa), float(mu)


@dataclass
class ModulationTrajectory:
    t: np.ndarray
    omega: np.ndarray
    theta: np.ndarray  # full phase, unwrapped
    gamma: np.ndarray  # theta minus the running integral of omega
    z: np.ndarray
    f_wnorm: np.ndarray
    r_norm: np.ndarray
    infdist: np.ndarray
    radiation_integral: np.ndarray
    orthogonality: np.ndarray
    omega_dot: np.ndarray
    gamma_dot: np.ndarray
    lam: float
    omega0: float
    f: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def abs_z(self) -> np.ndarray:
        return np.abs(self.z)

    @property
    def arg_z(self) -> np.ndarray:
        return np.unwrap(np.angle(self.z))


def track(
    traj: Trajectory,
    branch: GroundStateBranch,
    lin: LinearizationData | None = None,
    sigma: float = 2.0,
    falsifier: bool = True,
    keep_f: bool = False,
    relinearize_tol: float = 1e-3,
    tube_radius: float | None = None,
    falsifier_every: int = 1,
) -> ModulationTrajectory:
    """Decompose every snapshot of ``traj`` (warm started).

    The linearization is rebuilt when omega moves by more than
    ``relinearize_tol * (omega - E0)`` from the current base point; without an
    internal mode (single-eigenvalue potentials) ``z`` is reported as 0 and
    ``f = R``.  The falsifier is evaluated on every ``falsifier_every``-th
    sample (and the last); other entries are NaN.
    """
    n = len(traj.times)
    out = {k: np.zeros(n) for k in ("omega", "theta", "f_wnorm", "r_norm", "wd", "gd")}
    out["infdist"] = np.full(n, np.nan)
    z = np.zeros(n, dtype=complex)
    orth = np.zeros((n, 2))
    fs = [] if keep_f else None
    spec = WeightedNormSpec(2.0, -sigma)
    sites = branch.lattice.sites
    guess = None
    prev_theta = None
    has_mode = lin is not None and lin.xi is not None
    for k in range(n):
        u = traj.snapshots[k]
        st = decompose(u, branch, guess=guess, check_unique=(k == 0))
        th = st.gamma
        if prev_theta is not None:
            th = prev_theta + np.angle(np.exp(1j * (st.gamma - prev_theta)))
        prev_theta = th
        guess = (st.omega, th)
        if has_mode and abs(st.omega - lin.omega) > relinearize_tol * (lin.omega - branch.E0):
            lin = build_linearization(branch, st.omega, mode="sparse")
        if has_mode:
            zk, f = split_discrete_continuous(st.r, lin)
        else:
            zk, f = 0.0, np.stack([st.r, np.conj(st.r)])
        if tube_radius is not None and np.linalg.norm(st.r) > tube_radius:
            raise TubeExit(f"remainder norm {np.linalg.norm(st.r):.3e} left the tube at t={traj.times[k]}")
        z[k] = zk
        out["omega"][k] = st.omega
        out["theta"][k] = th
        out["f_wnorm"][k] = weighted_norm(f, spec, sites)
        out["r_norm"][k] = np.linalg.norm(st.r)
        orth[k] = st.orthogonality
        phi, d1, d2 = branch.solve_at(st.omega)
        out["wd"][k], out["gd"][k] = modulation_rates(st.r, phi, d1, d2)
        if falsifier and (k % falsifier_every == 0 or k == n - 1):
            out["infdist"][k] = stability_falsifier(u, branch, sigma, guess=(th, st.omega))[0]
        if keep_f:
            fs.append(f)
    t = traj.times
    gamma = out["theta"] - cumulative_trapezoid(out["omega"], t, initial=0.0)
    return ModulationTrajectory(
        t=t,
        omega=out["omega"],
        theta=out["theta"],
        gamma=gamma,
        z=z,
        f_wnorm=out["f_wnorm"],
        r_norm=out["r_norm"],
        infdist=out["infdist"] if falsifier else np.full(n, np.nan),
        radiation_integral=cumulative_trapezoid(out["f_wnorm"] ** 2, t, initial=0.0),
        orthogonality=orth,
        omega_dot=out["wd"],
        gamma_dot=out["gd"],
        lam=float(lin.lam) if has_mode else float("nan"),
        omega0=float(out["omega"][0]),
        f=np.array(fs) if keep_f else None,
        meta={"sigma": sigma},
    )


def persistence_metric(mt: ModulationTrajectory) -> tuple[float, float]:
    """``(min_t |z(t)|/|z(0)|, max_t ||z(t)|^2 - |z(0)|^2|)``.

    Undefined (``ValueError``) when ``|z(0)|`` is zero up to roundoff.
    """
    z0 = abs(mt.z[0])
    if z0 <= Z_FLOOR:
        raise ValueError(f"persistence undefined: |z(0)| = {z0:.1e} is zero up to roundoff")
    a = np.abs(mt.z)
    return float(np.min(a) / z0), float(np.max(np.abs(a**2 - z0**2)))


def write_modulation_csv(path: str | Path, mt: ModulationTrajectory) -> None:
    """Columns ``t omega gamma abs_z arg_z f_wnorm r_norm infdist``."""
    cols = ["t", "omega", "gamma", "abs_z", "arg_z", "f_wnorm", "r_norm", "infdist"]
    data = [mt.t, mt.omega, mt.gamma, mt.abs_z, mt.arg_z, mt.f_wnorm, mt.r_norm, mt.infdist]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=" ")
        w.writerow(cols)
        for row in zip(*data):
            w.writerow([repr(float(x)) for x in row])


def summary_json(mt: ModulationTrajectory) -> str:
    d = {
        "omega0": mt.omega0,
        "lambda": mt.lam,
        "max_omega_dev": float(np.max(np.abs(mt.omega - mt.omega0))),
        "max_r_norm": float(np.max(mt.r_norm)),
        "min_infdist": float(np.nanmin(mt.infdist)) if np.any(np.isfinite(mt.infdist)) else None,
    }
    if abs(mt.z[0]) > Z_FLOOR:
        d["min_ratio"], d["drift"] = persistence_metric(mt)
    return json.dumps(d, indent=2)
