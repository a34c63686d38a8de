"""Scenario configuration, pipeline orchestration and reports.

A scenario is one sequential pipeline::

    hypotheses -> branch -> linearization -> initial data -> evolution
               -> modulation tracking -> diagnostics -> normal form -> report

Every stage runs inside a guard: a failure is recorded with the stage name and
the report built so far is still returned (and written, if an output directory
is configured).  Given a configuration and seed the CSV outputs are
bit-identical between runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from .evolution import (
    EvolutionConfig,
    SCHEMES,
    Trajectory,
    decay_exponent,
    evolve,
    save_trajectory,
    write_conserved_csv,
)
from .ground_state import GroundStateBranch, continue_branch, save_branch
from .lattice import Lattice, LatticeField, WeightedNormSpec, weighted_norm
from .linearization import (
    LinearizationData,
    ModeNotFound,
    build_linearization,
    generalized_kernel,
    nonresonance_certificate,
)
from .modulation import ModulationTrajectory, persistence_metric, summary_json, track, write_modulation_csv
from .potentials import (
    HypothesisReport,
    Potential,
    delta_potential,
    load_potential,
    q_star,
    save_potential,
    validate_hypotheses,
)

__all__ = [
    "SCENARIO_KINDS",
    "ConfigError",
    "PotentialSpec",
    "BranchSpec",
    "KickSpec",
    "Diagnostics",
    "ScenarioConfig",
    "default_config",
    "load_config",
    "CheckRecord",
    "Report",
    "environment_fingerprint",
    "build_potential",
    "initial_data",
    "radiation_packet",
    "ScenarioState",
    "STAGES",
    "run_scenario",
    "write_plot_script",
]

SCENARIO_KINDS = (
    "standing_wave",
    "internal_mode_kick",
    "radiation_kick",
    "mixed_kick",
    "contrast_single_eigenvalue",
    "free_decay",
)

# anchor strings name the mathematical fact each check probes
ANCHORS = {
    "conservation": "mass and energy are invariants of the flow",
    "fixed_point": "standing waves are fixed points of the flow modulo phase",
    "orthogonality": "orthogonality conditions select the modulation parameters",
    "persistence": "the internal-mode amplitude |z| stays bounded below",
    "falsifier_floor": "distance to the ground-state family stays bounded below: no asymptotic stability",
    "nf_flattening": "after the normal-form change of variables |zeta|^2 is nearly conserved",
    "homological": "homological equations are solved on the continuous subspace",
    "radiation_decay": "radiation decays in weighted norms",
    "contrast_decay": "with a single eigenvalue the ground state is asymptotically stable",
    "dispersive_decay": "dispersive decay of the lattice flow at rate t^(-1/3)",
    "varpi_variation": "the normal-form frequency varpi has total variation of order eps^2",
    "hypotheses": "decay, threshold non-resonance and the two-eigenvalue structure",
    "nonresonance": "multiples of the internal eigenvalue avoid the continuous spectrum",
}


class ConfigError(ValueError):
    """Invalid scenario configuration."""


# --------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class PotentialSpec:
    """``profile`` is ``q_star`` (scaled by ``eps``), ``delta`` (``amplitude`` at site 0) or ``file``."""

    profile: str = "q_star"
    eps: float = 0.3
    amplitude: float = -0.5
    path: str | None = None


@dataclass(frozen=True)
class BranchSpec:
    eta: float | None = None
    count: int = 8
    omega_index: int = 3


@dataclass(frozen=True)
class KickSpec:
    """Kick data.  ``radiation_amplitude`` defaults to ``eps_kick``."""

    eps_kick: float = 1e-2
    radiation_amplitude: float | None = None
    packet_center: int = 0
    packet_width: float = 4.0


@dataclass(frozen=True)
class Diagnostics:
    falsifier: bool = True
    falsifier_every: int = 1
    sigma: float = 2.0
    transient: float = 50.0
    normal_form: bool = False
    nf_order: int = 3
    snapshots_every: int = 0
    plot_script: bool = True
    edge_tol: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    window: int = 256
    branch: BranchSpec = field(default_factory=BranchSpec)
    kick: KickSpec = field(default_factory=KickSpec)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    out: str | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        _validate(self)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        """SHA-256 of the canonical JSON, excluding the output directory."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def with_overrides(self, **kw) -> "ScenarioConfig":
        """Top-level overrides (``window``, ``seed``, ``out``, ``scenario``); None values are ignored."""
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        d = dict(d)
        if "scenario" not in d:
            raise ConfigError("missing 'scenario'")
        base = default_config(d["scenario"]).to_dict()
        sections = {
            "potential": PotentialSpec,
            "branch": BranchSpec,
            "kick": KickSpec,
            "evolution": EvolutionConfig,
            "diagnostics": Diagnostics,
        }
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}")
        kw: dict[str, Any] = {}
        for name, typ in sections.items():
            sub = dict(base[name])
            given = d.get(name, {}) or {}
            bad = set(given) - {f.name for f in fields(typ)}
            if bad:
                raise ConfigError(f"unknown keys in '{name}': {sorted(bad)}")
            sub.update(given)
            try:
                kw[name] = typ(**sub)
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        for key in ("window", "out", "seed"):
            kw[key] = d.get(key, base[key])
        return cls(scenario=d["scenario"], **kw)


def _validate(cfg: ScenarioConfig) -> None:
    if cfg.scenario not in SCENARIO_KINDS:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}; choose from {SCENARIO_KINDS}")
    p = cfg.potential
    if p.profile not in ("q_star", "delta", "file"):
        raise ConfigError(f"unknown potential profile {p.profile!r}")
    if p.profile == "file" and not p.path:
        raise ConfigError("profile 'file' needs a path")
    if not isinstance(cfg.window, int) or cfg.window < 16:
        raise ConfigError("window must be an integer half width >= 16")
    if cfg.branch.count < 2 or not 0 <= cfg.branch.omega_index < cfg.branch.count:
        raise ConfigError("branch needs count >= 2 and 0 <= omega_index < count")
    if cfg.branch.eta is not None and not cfg.branch.eta > 0:
        raise ConfigError("branch eta must be positive")
    k = cfg.kick
    if cfg.scenario in ("internal_mode_kick", "radiation_kick", "mixed_kick", "contrast_single_eigenvalue") and not k.eps_kick > 0:
        raise ConfigError("kick scenarios need eps_kick > 0")
    if abs(k.packet_center) + 6 * k.packet_width >= cfg.window:
        raise ConfigError("radiation packet does not fit inside the window")
    if not k.packet_width > 0:
        raise ConfigError("packet_width must be positive")
    if cfg.evolution.scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {cfg.evolution.scheme!r}")
    ratio = cfg.evolution.obs_every / cfg.evolution.dt
    if ratio < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
        raise ConfigError("obs_every must be a whole multiple of dt")
    dg = cfg.diagnostics
    if not 2 <= dg.nf_order <= 5:
        raise ConfigError("nf_order must lie in [2, 5]")
    if dg.falsifier_every < 1 or dg.snapshots_every < 0:
        raise ConfigError("falsifier_every must be >= 1 and snapshots_every >= 0")
    if not dg.sigma > 0:
        raise ConfigError("sigma must be positive (the weight is <n>^-sigma)")


def default_config(kind: str) -> ScenarioConfig:
    """Defaults per scenario kind, tuned to desk-scale runtimes."""
    if kind not in SCENARIO_KINDS:
        raise ConfigError(f"unknown scenario {kind!r}; choose from {SCENARIO_KINDS}")
    ev = EvolutionConfig
    table = {
        "standing_wave": dict(window=256, evolution=ev(dt=1e-2, T=100.0, obs_every=1.0), kick=KickSpec(eps_kick=0.0)),
        "internal_mode_kick": dict(
            window=320,
            evolution=ev(dt=0.04, T=2000.0, obs_every=0.4, scheme="strang4"),
            diagnostics=Diagnostics(falsifier_every=25, normal_form=True),
        ),
        "radiation_kick": dict(window=320, evolution=ev(dt=2e-2, T=100.0, obs_every=0.2, scheme="strang4")),
        "mixed_kick": dict(
            window=320,
            kick=KickSpec(eps_kick=1e-3),
            evolution=ev(dt=1e-2, T=100.0, obs_every=0.25),
            diagnostics=Diagnostics(falsifier_every=8, normal_form=True),
        ),
        "contrast_single_eigenvalue": dict(
            window=600,
            potential=PotentialSpec(profile="delta", amplitude=-0.5),
            evolution=ev(dt=0.05, T=500.0, obs_every=1.0, scheme="strang4"),
            diagnostics=Diagnostics(falsifier_every=10),
        ),
        "free_decay": dict(window=1280, evolution=ev(dt=1.0, T=500.0, obs_every=1.0), kick=KickSpec(eps_kick=0.0)),
    }
    return ScenarioConfig(scenario=kind, **table[kind])


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a JSON config; missing entries take the defaults of its scenario kind."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ScenarioConfig.from_dict(d)


# --------------------------------------------------------------------------- reports


@dataclass
class CheckRecord:
    name: str
    anchor: str
    measured: float
    tolerance: float
    passed: bool
    criterion: int | None = None
    details: dict[str, Any] = field(default_factory=dict)

    def line(self) -> str:
        tag = f"[{self.criterion:2d}] " if self.criterion is not None else ""
        return f"{'PASS' if self.passed else 'FAIL'} {tag}{self.name}: measured {self.measured:.3e} vs {self.tolerance:.3e} ({self.anchor})"


def environment_fingerprint() -> dict[str, str]:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
        "machine": platform.machine(),
    }


@dataclass
class Report:
    title: str
    config_hash: str = ""
    checks: list[CheckRecord] = field(default_factory=list)
    errors: list[dict[str, str]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    environment: dict[str, str] = field(default_factory=environment_fingerprint)

    def add(self, name: str, key: str, measured: float, tolerance: float, passed: bool, criterion: int | None = None, **details) -> CheckRecord:
        rec = CheckRecord(name, ANCHORS.get(key, key), float(measured), float(tolerance), bool(passed), criterion, details)
        self.checks.append(rec)
        return rec

    @property
    def passed(self) -> bool:
        return not self.errors and all(c.passed for c in self.checks)

    def criteria_once(self, n: int = 12) -> bool:
        """True when criteria ``1..n`` each appear exactly once."""
        got = sorted(c.criterion for c in self.checks if c.criterion is not None)
        return got == list(range(1, n + 1))

    def to_dict(self) -> dict[str, Any]:
        return {
            "title": self.title,
            "config_hash": self.config_hash,
            "passed": self.passed,
            "checks": [asdict(c) for c in self.checks],
            "errors": self.errors,
            "timings": self.timings,
            "environment": self.environment,
        }

    def write(self, directory: str | Path) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(json.dumps(self.to_dict(), indent=2, default=_jsonable))
        with open(d / "checks.csv", "w", newline="") as fh:
            w = csv.writer(fh, delimiter=" ")
            w.writerow(["criterion", "name", "measured", "tolerance", "pass"])
            for c in self.checks:
                w.writerow(["-" if c.criterion is None else c.criterion, c.name, repr(c.measured), repr(c.tolerance), int(c.passed)])
        return d / "report.json"

    def summary(self) -> str:
        lines = [c.line() for c in self.checks]
        lines += [f"ERROR in stage {e['stage']}: {e['error']}" for e in self.errors]
        lines.append(f"{self.title}: {'all checks pass' if self.passed else 'FAILED'}")
        return "\n".join(lines)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return str(x)


# --------------------------------------------------------------------------- stages


def build_potential(cfg: ScenarioConfig) -> Potential:
    lat = Lattice.symmetric(cfg.window)
    p = cfg.potential
    if p.profile == "q_star":
        return q_star(lat, p.eps)
    if p.profile == "delta":
        return delta_potential(p.amplitude, lat)
    q = load_potential(p.path)
    return q.on(lat)


def _continuous(lin: LinearizationData, X: np.ndarray) -> np.ndarray:
    from .normal_form import continuous_projection

    return continuous_projection(lin, X, with_mode=lin.xi is not None)


def radiation_packet(lin: LinearizationData, kick: KickSpec, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Continuous-subspace packet ``f`` (first spinor component) with ``max |f| = amplitude``.

    A Gaussian envelope with random carrier wavenumber and phase is projected
    onto the continuous subspace of the linearization.
    """
    n = lin.sites
    k = rng.uniform(0.5, 2.6)
    ph = rng.uniform(0.0, 2.0 * np.pi)
    p = np.exp(-((n - kick.packet_center) ** 2) / (2.0 * kick.packet_width**2) + 1j * (k * n + ph))
    f = _continuous(lin, np.stack([p, np.conj(p)]))[0]
    return amplitude * f / np.max(np.abs(f))


def initial_data(cfg: ScenarioConfig, phi: np.ndarray, lin: LinearizationData | None) -> tuple[np.ndarray, complex]:
    """``(u0, z0)`` for the configured kick.  Internal kicks use ``z0 = eps_kick`` (real)."""
    kind, k = cfg.scenario, cfg.kick
    rng = np.random.default_rng(cfg.seed)
    u0 = phi.astype(complex)
    z0 = 0.0
    if kind in ("internal_mode_kick", "mixed_kick"):
        z0 = k.eps_kick
        # r = z xi_1 + conj(z) xi_2, the first component of z xi + conj(z) sigma1 xi
        u0 = u0 + z0 * lin.xi[0] + np.conj(z0) * lin.xi[1]
    if kind in ("radiation_kick", "mixed_kick", "contrast_single_eigenvalue"):
        amp = k.radiation_amplitude if k.radiation_amplitude is not None else k.eps_kick
        u0 = u0 + radiation_packet(lin, k, amp, rng)
    return u0, complex(z0)


@dataclass
class ScenarioState:
    """Intermediate artifacts of one run (filled stage by stage)."""

    q: Potential | None = None
    hypotheses: HypothesisReport | None = None
    branch: GroundStateBranch | None = None
    omega0: float | None = None
    lin: LinearizationData | None = None
    u0: np.ndarray | None = None
    z0: complex = 0j
    traj: Trajectory | None = None
    mt: ModulationTrajectory | None = None
    nf: dict | None = None
    generators: list | None = None
    extra: dict = field(default_factory=dict)


class _Stage:
    def __init__(self, report: Report, name: str):
        self.report, self.name = report, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, typ, exc, tb):
        self.report.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and isinstance(exc, Exception):
            self.report.errors.append({"stage": self.name, "error": f"{typ.__name__}: {exc}"})
            raise _Abort from exc
        return False


class _Abort(Exception):
    pass


STAGES = ("hypotheses", "branch", "linearize", "initial_data", "evolve", "track", "diagnostics", "normal_form")


def run_scenario(cfg: ScenarioConfig, state: ScenarioState | None = None, stop_after: str | None = None) -> Report:
    """Run the pipeline for ``cfg`` and return its report.

    Outputs go to ``cfg.out`` when set.  ``state`` (if given) receives the
    intermediate artifacts for inspection.  ``stop_after`` names the last stage
    to run (one of ``STAGES``); by default all stages run.
    """
    if stop_after is not None and stop_after not in STAGES:
        raise ValueError(f"unknown stage {stop_after!r}; choose from {STAGES}")
    report = Report(title=f"scenario {cfg.scenario}", config_hash=cfg.hash())
    st = state if state is not None else ScenarioState()
    out = Path(cfg.out) if cfg.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json())
    try:
        if cfg.scenario == "free_decay":
            _free_decay(cfg, report, out)
        else:
            _pipeline(cfg, report, st, out, stop_after)
    except (_Abort, _Stop):
        pass
    if out is not None:
        report.write(out)
    return report


class _Stop(Exception):
    pass


def _pipeline(cfg: ScenarioConfig, report: Report, st: ScenarioState, out: Path | None, stop_after: str | None = None) -> None:
    single = cfg.scenario == "contrast_single_eigenvalue"

    def done(name):
        if name == stop_after:
            raise _Stop

    with _Stage(report, "hypotheses"):
        st.q = build_potential(cfg)
        st.hypotheses = validate_hypotheses(st.q)
        h = st.hypotheses
        if single:
            ok = h.h1_ok and h.h2_ok and len(h.eigenvalues) == 1
            report.add("single eigenvalue below the band", "hypotheses", len(h.eigenvalues), 1, ok)
        else:
            report.add("hypotheses certified", "hypotheses", float(h.ok), 1, h.ok)
        if out is not None:
            (out / "hypotheses.json").write_text(h.to_json())
            save_potential(out / "potential.txt", st.q)
        if not (single or h.ok):
            raise ValueError("potential fails the working hypotheses")
    done("hypotheses")

    with _Stage(report, "branch"):
        b = cfg.branch
        st.branch = continue_branch(st.q, n_points=b.count, eta=b.eta)
        st.omega0 = float(st.branch.omegas[b.omega_index])
        if out is not None:
            save_branch(out / "branch", st.branch)
    done("branch")

    with _Stage(report, "linearize"):
        st.lin = build_linearization(st.branch, st.omega0, mode=None if single else "sparse")
        gk = generalized_kernel(st.lin)
        info = {"omega0": st.omega0, **gk}
        if not single:
            cert = nonresonance_certificate(st.lin.lam, st.omega0)
            info.update(lam=st.lin.lam, nonresonance=cert)
            report.add("nonresonance margin", "nonresonance", cert["margin"], 0.0, cert["ok"])
        if out is not None:
            (out / "linearization.json").write_text(json.dumps(info, indent=2, default=_jsonable))
    done("linearize")

    with _Stage(report, "initial_data"):
        phi = st.branch.solve_at(st.omega0)[0]
        st.u0, st.z0 = initial_data(cfg, phi, st.lin)
    done("initial_data")

    with _Stage(report, "evolve"):
        st.traj = evolve(st.q, LatticeField(st.q.lattice, st.u0), cfg.evolution, edge_tol=cfg.diagnostics.edge_tol)
        tr = st.traj
        dm = float(np.max(np.abs(tr.mass - tr.mass[0])) / tr.mass[0])
        de = float(np.max(np.abs(tr.energy - tr.energy[0])) / abs(tr.energy[0]))
        report.add("relative mass and energy drift", "conservation", max(dm, de), 1e-8, max(dm, de) <= 1e-8, mass=dm, energy=de)
        if out is not None:
            write_conserved_csv(out / "conserved.csv", tr)
            if cfg.diagnostics.snapshots_every:
                save_trajectory(out / "snapshots", tr, every=cfg.diagnostics.snapshots_every)
    done("evolve")

    dg = cfg.diagnostics
    with _Stage(report, "track"):
        st.mt = track(
            st.traj,
            st.branch,
            None if single else st.lin,
            sigma=dg.sigma,
            falsifier=dg.falsifier,
            keep_f=dg.normal_form,
            falsifier_every=dg.falsifier_every,
        )
        orth = float(np.max(np.abs(st.mt.orthogonality)))
        report.add("orthogonality residual at every sample", "orthogonality", orth, 1e-10, orth <= 1e-10)
        if out is not None:
            write_modulation_csv(out / "modulation.csv", st.mt)
            (out / "modulation_summary.json").write_text(summary_json(st.mt))
            if dg.plot_script:
                write_plot_script(out / "plot_modulation.py")
    done("track")

    with _Stage(report, "diagnostics"):
        _diagnostics(cfg, report, st)
    done("diagnostics")

    if dg.normal_form and not single:
        with _Stage(report, "normal_form"):
            _normal_form_stage(cfg, report, st, out)


def _after(t: np.ndarray, t0: float) -> np.ndarray:
    return t >= min(t0, t[-1])


def _diagnostics(cfg: ScenarioConfig, report: Report, st: ScenarioState) -> None:
    mt, kind = st.mt, cfg.scenario
    phi = st.branch.solve_at(st.omega0)[0]
    if kind == "standing_wave":
        dev = float(np.max(mt.r_norm) / np.linalg.norm(phi))
        report.add("remainder relative to phi along the run", "fixed_point", dev, 1e-8, dev <= 1e-8)
        dw = float(np.max(np.abs(mt.omega - st.omega0)) / (st.omega0 - st.branch.E0))
        report.add("frequency deviation relative to omega - E0", "fixed_point", dw, 1e-8, dw <= 1e-8)
    if kind in ("internal_mode_kick", "mixed_kick"):
        ratio, drift = persistence_metric(mt)
        report.add("min |z(t)|/|z(0)|", "persistence", ratio, 0.5, ratio >= 0.5, drift=drift)
        if cfg.diagnostics.falsifier:
            xi1 = weighted_norm(st.lin.xi[0], WeightedNormSpec(2.0, -cfg.diagnostics.sigma), st.lin.sites)
            floor = 0.25 * abs(mt.z[0]) * xi1
            sel = _after(mt.t, cfg.diagnostics.transient) & np.isfinite(mt.infdist)
            low = float(np.min(mt.infdist[sel]))
            report.add("inf-distance after transients", "falsifier_floor", low, floor, low >= floor)
    if kind == "radiation_kick":
        fw = mt.f_wnorm
        ratio = float(fw[-1] / np.max(fw))
        report.add("weighted radiation norm at T over its maximum", "radiation_decay", ratio, 0.5, ratio <= 0.5)
    if kind == "contrast_single_eigenvalue":
        t, d = mt.t, mt.infdist
        ok = np.isfinite(d)
        d50 = float(np.interp(50.0, t[ok], d[ok]))
        dT = float(d[ok][-1])
        ratio = dT / d50
        report.add(f"inf-distance at t={t[ok][-1]:g} over t=50", "contrast_decay", ratio, 0.5, ratio <= 0.5, d50=d50, dT=dT)


def _normal_form_stage(cfg: ScenarioConfig, report: Report, st: ScenarioState, out: Path | None) -> None:
    from .normal_form import grading_defect, normal_form_step, save_generators, source_system, transform_trajectory

    L = cfg.diagnostics.nf_order
    lin = st.lin
    system = source_system(lin, L)
    gens = []
    for ell in range(1, L):
        system, g = normal_form_step(system, lin, ell)
        gens.append(g)
    st.generators = gens
    res = max(max((v for k, v in g.residuals.items() if k != "projection_correction"), default=0.0) for g in gens)
    report.add("largest homological residual", "homological", res, 1e-10, res <= 1e-10)
    gd = grading_defect(system, lin)
    report.add("remaining nonresonant coefficients", "homological", max(gd.values()), 1e-10, max(gd.values()) <= 1e-10, **gd)
    mt = st.mt
    nf2 = transform_trajectory(mt, gens[:1])
    st.nf = transform_trajectory(mt, gens)
    raw = np.abs(mt.z) ** 2
    amp_raw = float(np.max(np.abs(raw - raw[0])))
    zt = np.abs(nf2["zeta"]) ** 2
    drift2 = float(np.max(np.abs(zt - zt[0])))
    if cfg.scenario == "internal_mode_kick":
        report.add("order-2 |zeta|^2 drift below raw |z|^2 oscillation", "nf_flattening", drift2, amp_raw, drift2 < amp_raw)
    tv_w = float(np.sum(np.abs(np.diff(mt.omega))))
    tv_v = float(np.sum(np.abs(np.diff(st.nf["varpi"]))))
    st.extra.update(tv_omega=tv_w, tv_varpi=tv_v, raw_amplitude=amp_raw, zeta2_drift=drift2)
    report.add("total variation of varpi below that of omega", "varpi_variation", tv_v, tv_w, tv_v <= tv_w)
    if out is not None:
        save_generators(out / "generators", gens, st.q.lattice)
        with open(out / "normal_form.csv", "w", newline="") as fh:
            w = csv.writer(fh, delimiter=" ")
            w.writerow(["t", "abs_z2", "abs_zeta2_order2", f"abs_zeta2_order{L}", "omega", "varpi"])
            z_all = np.abs(st.nf["zeta"]) ** 2
            for row in zip(mt.t, raw, zt, z_all, mt.omega, st.nf["varpi"]):
                w.writerow([repr(float(x)) for x in row])


def _free_decay(cfg: ScenarioConfig, report: Report, out: Path | None) -> None:
    ev = cfg.evolution
    t = np.geomspace(10.0, ev.T, 40)
    lat = Lattice.symmetric(cfg.window)
    with _Stage(report, "free_decay"):
        free = decay_exponent(Potential(LatticeField(lat, np.zeros(lat.size)), 1.0), t, project=False)
        report.add("free flow decay exponent", "dispersive_decay", free.exponent, 0.05, abs(free.exponent + 1.0 / 3.0) <= 0.05)
    with _Stage(report, "potential_decay"):
        q = build_potential(cfg)
        pot = decay_exponent(q, t, project=True)
        report.add("decay exponent with potential (continuous part)", "dispersive_decay", pot.exponent, 0.07, abs(pot.exponent + 1.0 / 3.0) <= 0.07)
    if out is not None:
        with open(out / "decay.csv", "w", newline="") as fh:
            w = csv.writer(fh, delimiter=" ")
            w.writerow(["t", "sup_free", "sup_potential"])
            for row in zip(t, free.sup_norms, pot.sup_norms):
                w.writerow([repr(float(x)) for x in row])


# --------------------------------------------------------------------------- plotting script

_PLOT_SCRIPT = '''"""Plot the modulation series written next to this script (needs matplotlib)."""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
with open(here / "modulation.csv") as fh:
    rows = list(csv.DictReader(fh, delimiter=" "))
col = {k: [float(r[k]) for r in rows] for k in rows[0]}
fig, ax = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
for a, key, label in [
    (ax[0, 0], "abs_z", "|z|(t)"),
    (ax[0, 1], "omega", "omega(t)"),
    (ax[1, 0], "infdist", "inf-distance(t)"),
    (ax[1, 1], "f_wnorm", "weighted f-norm(t)"),
]:
    a.plot(col["t"], col[key], lw=0.8)
    a.set_title(label)
ax[1, 0].set_xlabel("t")
ax[1, 1].set_xlabel("t")
fig.tight_layout()
fig.savefig(here / "modulation.png", dpi=120)
'''


def write_plot_script(path: str | Path) -> Path:
    p = Path(path)
    p.write_text(_PLOT_SCRIPT)
    return p
