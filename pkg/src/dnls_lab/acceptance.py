"""The twelve acceptance criteria as executable checks.

Each criterion returns one :class:`~dnls_lab.scenario.CheckRecord`.  Its
``measured`` value is the worst normalized score over the criterion's parts
(``<= 1`` passes) and ``details`` lists every part with its own value and
tolerance.  Expensive runs shared by several criteria are cached per process.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .evolution import EvolutionConfig, decay_exponent, evolve, free_propagator_kernel, linear_propagator_H
from .ground_state import bifurcation_seed, continue_branch, residual
from .lattice import Lattice, LatticeField
from .linearization import build_linearization, generalized_kernel, nonresonance_certificate, sigma1
from .modulation import decompose, persistence_metric, track
from .potentials import (
    Potential,
    moment_functional,
    predict_small_eps_spectrum,
    q_star,
    validate_hypotheses,
    zero_sum_threshold_limit,
)
from .scattering import eigen_complement, limiting_absorption_projection, resonance_check
from .scenario import CheckRecord, Report, ScenarioConfig, ScenarioState, default_config, run_scenario

__all__ = ["CRITERIA", "run_criterion", "run_acceptance"]


@dataclass
class _Part:
    name: str
    value: float
    tol: float
    kind: str = "le"  # "le": value <= tol, "ge": value >= tol, "gt": value > tol

    @property
    def ok(self) -> bool:
        if self.kind == "le":
            return self.value <= self.tol
        if self.kind == "ge":
            return self.value >= self.tol
        return self.value > self.tol

    @property
    def score(self) -> float:
        v, t = abs(self.value), abs(self.tol)
        if self.kind == "le":
            return v / t if t > 0 else (0.0 if v == 0 else np.inf)
        if self.ok:
            return t / v if v > 0 else 0.0
        return np.inf if v == 0 else max(t / v, 1.0 + 1e-12)


def _record(criterion: int, name: str, anchor: str, parts: list[_Part], runtime: float, limit: float | None) -> CheckRecord:
    if limit is not None:
        parts = parts + [_Part("runtime [s]", runtime, limit)]
    worst = max(p.score for p in parts)
    details = {p.name: {"value": p.value, "tolerance": p.tol, "kind": p.kind, "pass": p.ok} for p in parts}
    return CheckRecord(name, anchor, float(worst), 1.0, all(p.ok for p in parts), criterion, details)


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# --------------------------------------------------------------------------- shared runs


@lru_cache(maxsize=None)
def _internal_kick_run():
    st = ScenarioState()
    rep = run_scenario(default_config("internal_mode_kick"), st)
    return rep, st


@lru_cache(maxsize=None)
def _mixed_run(eps: float):
    cfg = default_config("mixed_kick")
    cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "kick": {**cfg.to_dict()["kick"], "eps_kick": eps}})
    st = ScenarioState()
    rep = run_scenario(cfg, st)
    return rep, st


@lru_cache(maxsize=None)
def _branch(half_width: int, eps: float = 0.3):
    return continue_branch(q_star(Lattice.symmetric(half_width), eps))


def _check(rep: Report, key: str):
    for c in rep.checks:
        if c.name == key:
            return c
    raise KeyError(f"check {key!r} missing from report ({[e['stage'] for e in rep.errors]} failed)")


# --------------------------------------------------------------------------- criteria


def criterion_1() -> CheckRecord:
    def run():
        lat = Lattice.symmetric(1024)
        free = Potential(LatticeField(lat, np.zeros(lat.size)), 1.0)
        u0 = np.zeros(lat.size, dtype=complex)
        u0[lat.index(0)] = 1.0
        u = linear_propagator_H(free, 10.0, LatticeField(lat, u0)).values
        return float(np.max(np.abs(u - free_propagator_kernel(10.0, lat.sites))))

    err, rt = _timed(run)
    return _record(1, "free-kernel oracle", "free lattice flow equals a Bessel kernel", [_Part("max error at t=10", err, 1e-8)], rt, 5.0)


def criterion_2() -> CheckRecord:
    def run():
        t = np.geomspace(10.0, 500.0, 40)
        lat = Lattice.symmetric(1280)
        free = decay_exponent(Potential(LatticeField(lat, np.zeros(lat.size)), 1.0), t, project=False)
        pot = decay_exponent(q_star(lat, 0.3), t, project=True)
        return free.exponent, pot.exponent

    (pf, pq), rt = _timed(run)
    parts = [_Part("free exponent + 1/3", abs(pf + 1 / 3), 0.05), _Part("0.3 q* projected exponent + 1/3", abs(pq + 1 / 3), 0.07)]
    return _record(2, "dispersive decay exponent", "dispersive decay of the lattice flow at rate t^(-1/3)", parts, rt, 60.0)


ZERO_SUM_PROFILES = {
    "q_star": {-1: -0.5, 0: 1.0, 1: -0.5},
    "asymmetric four-site": {-1: 0.3, 0: -0.1, 1: -0.4, 2: 0.2},
    "wide dipole pair": {-3: 0.25, -1: -0.5, 2: 0.5, 4: -0.25},
}


def zero_sum_potential(values: dict[int, float], half_width: int = 64) -> Potential:
    lat = Lattice.symmetric(half_width)
    v = np.zeros(lat.size)
    for n, x in values.items():
        v[lat.index(n)] = x
    return Potential(LatticeField(lat, v), 1.0)


def criterion_3() -> CheckRecord:
    def run():
        parts = []
        for name, prof in ZERO_SUM_PROFILES.items():
            q = zero_sum_potential(prof)
            parts.append(_Part(f"{name}: |limit + moment/2|", abs(zero_sum_threshold_limit(q) + 0.5 * moment_functional(q)), 1e-6))
        return parts

    parts, rt = _timed(run)
    return _record(3, "zero-sum threshold limit", "threshold limit of the free pairing equals minus half the moment", parts, rt, 5.0)


def criterion_4() -> CheckRecord:
    def run():
        parts = []
        for eps in (0.1, 0.2, 0.3, 0.4):
            q = q_star(Lattice.symmetric(256), eps)
            h = validate_hypotheses(q)
            below = sum(1 for x in h.eigenvalues if x < 0)
            above = sum(1 for x in h.eigenvalues if x > 4)
            parts.append(_Part(f"eps={eps}: one eigenvalue below and one above", float(below == 1 and above == 1 and len(h.eigenvalues) == 2), 1.0, "ge"))
            W0, Wpi, _ = resonance_check(q)
            parts.append(_Part(f"eps={eps}: min(|W(0)|, |W(pi)|)", min(abs(W0), abs(Wpi)), 1e-6, "gt"))
            if eps == 0.3:
                e0p, _ = predict_small_eps_spectrum(q, eps)
                parts.append(_Part("eps=0.3: |E0 - prediction| / prediction", abs(e0p - h.E0) / e0p, 0.3))
        return parts

    parts, rt = _timed(run)
    return _record(4, "hypothesis certification", "decay, threshold non-resonance and the two-eigenvalue structure", parts, rt, 30.0)


def criterion_5() -> CheckRecord:
    def run():
        b = _branch(256)
        q = b.q
        newton = max(float(np.max(np.abs(residual(q, om, p.values)))) for om, p in zip(b.omegas, b.phi))
        implicit = 0.0
        for om, p, d in zip(b.omegas, b.phi, b.dphi_domega):
            phi, dv = p.values, d.values
            lp = (2.0 + q.values + om - 7.0 * phi**6) * dv  # L_plus applied to dphi
            lp[:-1] -= dv[1:]
            lp[1:] -= dv[:-1]
            implicit = max(implicit, float(np.linalg.norm(lp + phi) / np.linalg.norm(phi)))
        ratios = []
        for k in range(4):
            om = b.E0 + b.eta * 2.0**-k
            phi = b.solve_at(om)[0]
            seed = bifurcation_seed(b.phi0, b.E0, om).values
            c = np.linalg.norm(seed)  # = c(omega), since phi0 is unit normalized
            ratios.append(float(np.linalg.norm(phi / c - b.phi0.values) / (om - b.E0)))
        spread = max(ratios) / min(ratios)
        return newton, implicit, spread, ratios

    (newton, implicit, spread, ratios), rt = _timed(run)
    parts = [
        _Part("max Newton residual", newton, 1e-12),
        _Part("implicit-derivative residual", implicit, 1e-10),
        _Part("bifurcation-ratio spread over 3 dyadic refinements", spread, 2.0),
    ]
    return _record(5, "ground-state branch", "ground states bifurcate from the lowest eigenvalue", parts, rt, 60.0)


def criterion_6() -> CheckRecord:
    def run():
        b = _branch(256)
        kern, norm, margins, consts = 0.0, 0.0, [], []
        for om in b.omegas:
            lin = build_linearization(b, om, mode="sparse")
            kern = max(kern, generalized_kernel(lin)["kernel_residual"])
            xi = lin.xi
            norm = max(norm, abs(float(np.sum(xi[0] ** 2 - xi[1] ** 2)) - 1.0))
            consts.append(abs(lin.lam - lin.E1 - om) / (om - b.E0))
            margins.append(nonresonance_certificate(lin.lam, om)["margin"])
        return kern, norm, max(consts) / min(consts), min(margins)

    (kern, norm, spread, margin), rt = _timed(run)
    parts = [
        _Part("kernel residual |H sigma3 Phi| / |Phi|", kern, 1e-9),
        _Part("|<xi, sigma3 xi> - 1|", norm, 1e-10),
        _Part("spread of |lam - E1 - omega|/(omega - E0)", spread, 2.0),
        _Part("min nonresonance margin", margin, 0.0, "gt"),
    ]
    return _record(6, "linearization spectrum", "internal eigenvalue above the band with a two-dimensional generalized kernel", parts, rt, 60.0)


def strang_order_ratio(q: Potential, u0: np.ndarray, T: float = 1.0, dt: float = 0.02) -> float:
    """``|u_dt - u_{dt/2}| / |u_{dt/2} - u_{dt/4}|`` at time ``T`` (4 for a second-order scheme)."""
    sols = []
    for h in (dt, dt / 2, dt / 4):
        tr = evolve(q, LatticeField(q.lattice, u0), EvolutionConfig(dt=h, T=T, obs_every=T))
        sols.append(tr.snapshots[-1])
    return float(np.linalg.norm(sols[0] - sols[1]) / np.linalg.norm(sols[1] - sols[2]))


def criterion_7() -> CheckRecord:
    def run():
        rep, st = _mixed_run(default_config("mixed_kick").kick.eps_kick)
        drift = _check(rep, "relative mass and energy drift")
        ratio = strang_order_ratio(st.q, st.u0)
        return drift.details["mass"], drift.details["energy"], ratio

    (dm, de, ratio), rt = _timed(run)
    parts = [
        _Part("relative mass drift", dm, 1e-8),
        _Part("relative energy drift", de, 1e-8),
        _Part("order ratio >= 3.5", ratio, 3.5, "ge"),
        _Part("order ratio <= 4.5", ratio, 4.5),
    ]
    return _record(7, "conservation and splitting order", "mass and energy are invariants of the flow", parts, rt, 120.0)


def _central_difference(y: np.ndarray, h: float) -> np.ndarray:
    """Five-point O(h^4) central difference on interior samples ``2 .. n-3``."""
    return (y[:-4] - 8.0 * y[1:-3] + 8.0 * y[3:-1] - y[4:]) / (12.0 * h)


def modulation_rate_check(T: float = 10.0, dt: float = 1e-2, eps: float = 1e-2, half_width: int = 320) -> dict[str, float]:
    """Orthogonality, rate-versus-finite-difference and gauge checks on an internal kick.

    The series oscillate at about twice the internal eigenvalue, so a
    second-order difference at the sampling step would carry an error near
    ``(2 lam h)^2 / 6``; the five-point stencil brings it below the time-stepping
    error of the fourth-order splitting.
    """
    b = _branch(half_width)
    om0 = float(b.omegas[3])
    lin = build_linearization(b, om0)
    u0 = b.solve_at(om0)[0] + eps * (lin.xi[0] + lin.xi[1])
    h = dt
    tr = evolve(b.q, LatticeField(b.q.lattice, u0), EvolutionConfig(dt=dt, T=T, obs_every=h, scheme="strang4"))
    mt = track(tr, b, lin, falsifier=False)
    fd_w = _central_difference(mt.omega, h)
    fd_g = _central_difference(mt.gamma, h)
    rel_w = float(np.max(np.abs(fd_w - mt.omega_dot[2:-2])) / np.max(np.abs(mt.omega_dot)))
    rel_g = float(np.max(np.abs(fd_g - mt.gamma_dot[2:-2])) / np.max(np.abs(mt.gamma_dot)))
    gauge = 0.0
    rng = np.random.default_rng(7)
    for k in rng.choice(len(mt.t), 5, replace=False):
        u = tr.snapshots[k]
        s0 = decompose(u, b, check_unique=False)
        kappa = rng.uniform(-np.pi, np.pi)
        s1 = decompose(np.exp(1j * kappa) * u, b, check_unique=False)
        dg = abs(np.angle(np.exp(1j * (s1.gamma - s0.gamma - kappa))))
        gauge = max(gauge, abs(s1.omega - s0.omega) / s0.omega, dg, float(np.linalg.norm(s1.r - s0.r) / np.linalg.norm(u)))
    return {"orthogonality": float(np.max(np.abs(mt.orthogonality))), "omega_rate": rel_w, "gamma_rate": rel_g, "gauge": gauge}


def criterion_8() -> CheckRecord:
    res, rt = _timed(modulation_rate_check)
    parts = [
        _Part("max orthogonality residual", res["orthogonality"], 1e-10),
        _Part("omega rate vs finite difference (relative)", res["omega_rate"], 1e-3),
        _Part("gamma rate vs finite difference (relative)", res["gamma_rate"], 1e-3),
        _Part("gauge covariance defect", res["gauge"], 1e-10),
    ]
    return _record(8, "modulation equations", "orthogonality conditions select the modulation parameters", parts, rt, None)


def criterion_9() -> CheckRecord:
    (rep, st), rt = _timed(_internal_kick_run)
    ratio, _ = persistence_metric(st.mt)
    flat = _check(rep, "order-2 |zeta|^2 drift below raw |z|^2 oscillation")
    parts = [
        _Part("min |z(t)|/|z(0)|", ratio, 0.5, "ge"),
        _Part("order-2 |zeta|^2 drift over raw |z|^2 oscillation", flat.measured / flat.tolerance, 1.0, "le"),
    ]
    rec = _record(9, "internal-mode persistence", "the internal-mode amplitude |z| stays bounded below", parts, rt, 300.0)
    rec.details["raw |z|^2 oscillation"] = flat.tolerance
    rec.details["|zeta|^2 drift"] = flat.measured
    return rec


def criterion_10() -> CheckRecord:
    def run():
        rep, _ = _internal_kick_run()
        floor = _check(rep, "inf-distance after transients")
        st = ScenarioState()
        crep = run_scenario(default_config("contrast_single_eigenvalue"), st)
        decay = next(c for c in crep.checks if c.name.startswith("inf-distance at t="))
        return floor, decay

    (floor, decay), rt = _timed(run)
    parts = [
        _Part("two eigenvalues: min inf-distance after transients", floor.measured, floor.tolerance, "ge"),
        _Part("single eigenvalue: inf-distance(500)/inf-distance(50)", decay.measured, 0.5),
    ]
    return _record(10, "falsifier dichotomy", "distance to the ground-state family stays bounded below: no asymptotic stability", parts, rt, 300.0)


def criterion_11() -> CheckRecord:
    from .normal_form import grading_defect, normal_form_step, source_system

    def run():
        b = _branch(320)
        lin = build_linearization(b, float(b.omegas[3]))
        S0 = source_system(lin, 3)
        S1, g1 = normal_form_step(S0, lin, 1)
        S2, g2 = normal_form_step(S1, lin, 2)
        resid = max(v for g in (g1, g2) for k, v in g.residuals.items() if k != "projection_correction")
        deg2 = max(grading_defect(S1, lin).values())
        deg3 = max(grading_defect(S2, lin).values())
        real = 0.0
        for S in (S0, S1, S2):
            for poly in (S.a, S.b, S.d):
                real = max(real, max((abs(np.imag(v)) for v in poly.coeffs.values()), default=0.0))
        refl = 0.0
        for g in (g1, g2):
            for (m, n), v in g.Phi.items():
                refl = max(refl, float(np.linalg.norm(sigma1(v) - g.Phi[(n, m)]) / max(np.linalg.norm(v), 1e-300)))
        tv = {}
        for eps in (1e-2, 5e-3):
            rep, st = _mixed_run(eps)
            _check(rep, "total variation of varpi below that of omega")
            tv[eps] = st.extra["tv_varpi"]
        return resid, deg2, deg3, real, refl, tv[1e-2] / tv[5e-3]

    (resid, deg2, deg3, real, refl, ratio), rt = _timed(run)
    parts = [
        _Part("max homological residual", resid, 1e-10),
        _Part("degree-2 nonresonant coefficients after the first step", deg2, 1e-10),
        _Part("degree <= 3 nonresonant coefficients after the second step", deg3, 1e-10),
        _Part("imaginary part of a, b, d coefficients", real, 1e-10),
        _Part("reflection defect |sigma1 Phi_mn - Phi_nm|", refl, 1e-10),
        _Part("TV(varpi) ratio under eps halving >= 2", ratio, 2.0, "ge"),
        _Part("TV(varpi) ratio under eps halving <= 8", ratio, 8.0),
    ]
    return _record(11, "normal form", "the normal-form frequency varpi has total variation of order eps^2", parts, rt, None)


def criterion_12() -> CheckRecord:
    def run():
        # bound states decay like exp(-sqrt(E0)|n|); 960 sites keep their truncation below 1e-9
        q = q_star(Lattice.symmetric(960), 0.3)
        rng = np.random.default_rng(12)
        worst = 0.0
        for _ in range(10):
            v = np.zeros(q.lattice.size, dtype=complex)
            sl = slice(q.lattice.index(-10), q.lattice.index(10) + 1)
            v[sl] = rng.normal(size=21) + 1j * rng.normal(size=21)
            u = LatticeField(q.lattice, v)
            a = limiting_absorption_projection(q, u).values
            bb = eigen_complement(q, u).values
            worst = max(worst, float(np.linalg.norm(a - bb) / np.linalg.norm(v)))
        return worst

    worst, rt = _timed(run)
    return _record(12, "limiting absorption projection", "the resolvent jump across the band reproduces the continuous projection", [_Part("max relative difference over 10 inputs", worst, 1e-6)], rt, 30.0)


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 13)}


def run_criterion(k: int) -> CheckRecord:
    """Run one criterion; an exception becomes a failed record carrying the error text."""
    try:
        return CRITERIA[k]()
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        return CheckRecord(f"criterion {k}", "error", float("inf"), 1.0, False, k, {"error": f"{type(exc).__name__}: {exc}"})


def run_acceptance(which=None) -> Report:
    """Report with one record per criterion (all twelve by default)."""
    rep = Report(title="acceptance suite")
    for k in which or range(1, 13):
        t0 = time.perf_counter()
        rep.checks.append(run_criterion(k))
        rep.timings[f"criterion_{k}"] = time.perf_counter() - t0
    return rep
