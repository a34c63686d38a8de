"""Command-line entry point: ``dnls-lab <subcommand> [--config PATH] [--out DIR] ...``.

Subcommands run the scenario pipeline up to a stage and write its artifacts:

design      potential profile, moment functional and predicted versus computed spectrum
validate    hypothesis certificate, scattering sweep, window-doubling meta-check
branch      ground-state branch
linearize   internal mode and nonresonance certificate
evolve      time integration and conserved quantities
modulate    modulation tracking and falsifier series
normalform  normal-form generators and transformed series
report      full scenario report (``--acceptance`` runs the twelve acceptance criteria)
all         design, validate and the full scenario

The exit code is 0 exactly when every enabled check passes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .potentials import (
    Potential,
    discrete_spectrum,
    moment_functional,
    predict_small_eps_spectrum,
    save_potential,
    validate_hypotheses,
    zero_sum_check,
    zero_sum_threshold_limit,
)
from .scattering import scattering_sweep, write_sweep_csv
from .scenario import (
    SCENARIO_KINDS,
    ConfigError,
    Report,
    ScenarioConfig,
    build_potential,
    default_config,
    run_scenario,
)

SUBCOMMANDS = ("design", "validate", "branch", "linearize", "evolve", "modulate", "normalform", "report", "all")
_STOP = {"branch": "branch", "linearize": "linearize", "evolve": "evolve", "modulate": "diagnostics"}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnls-lab", description="Ground-state dynamics laboratory for a septic discrete NLS.")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="JSON scenario configuration")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--window", type=int, help="lattice half width (overrides the config)")
    p.add_argument("--seed", type=int, help="seed for radiation-packet phases (overrides the config)")
    p.add_argument("--scenario", choices=SCENARIO_KINDS, help="scenario kind (overrides the config)")
    p.add_argument("--acceptance", action="store_true", help="with 'report': run the acceptance criteria")
    p.add_argument("--criteria", type=int, nargs="*", help="with --acceptance: subset of criteria to run")
    p.add_argument("--quiet", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> ScenarioConfig:
    raw: dict = {}
    if args.config is not None:
        raw = json.loads(args.config.read_text())
    if args.scenario is not None:
        raw["scenario"] = args.scenario
    raw.setdefault("scenario", "internal_mode_kick")
    for key in ("window", "seed"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    if args.out is not None:
        raw["out"] = str(args.out)
    return ScenarioConfig.from_dict(raw)


def design_report(cfg: ScenarioConfig) -> Report:
    """Profile diagnostics; the spectrum prediction applies to zero-sum profiles with negative moment."""
    rep = Report(title=f"design {cfg.potential.profile}", config_hash=cfg.hash())
    q = build_potential(cfg)
    unit = Potential(q.field, 1.0)
    info: dict = {"profile": cfg.potential.profile, "eps": q.eps, "support_radius": q.support_radius()}
    info["zero_sum"] = zero_sum_check(unit)
    info["moment"] = moment_functional(unit)
    eig = [float(x) for x in discrete_spectrum(q)]
    info["eigenvalues_windowed"] = eig
    if info["zero_sum"]:
        lim = zero_sum_threshold_limit(unit)
        info["threshold_limit"] = lim
        err = abs(lim + 0.5 * info["moment"])
        rep.add("threshold limit against minus half the moment", "threshold limit of the free pairing equals minus half the moment", err, 1e-6, err <= 1e-6)
        if info["moment"] < 0:
            h = validate_hypotheses(q)
            e0p, e1p = predict_small_eps_spectrum(q, q.eps)
            info.update(E0=h.E0, E1=h.E1, E0_pred=e0p, E1_pred=e1p)
            rel = abs(h.E0 - e0p) / e0p
            rep.add("E0 against the small-coupling prediction", "leading-order eigenvalue of a weakly coupled zero-sum potential", rel, 0.3, rel <= 0.3)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        save_potential(out / "potential.txt", q)
        (out / "design.json").write_text(json.dumps(info, indent=2, default=float))
    return rep


def validate_report(cfg: ScenarioConfig) -> Report:
    """Hypothesis certificate at the configured window and at twice it; verdicts must agree."""
    rep = Report(title="validate", config_hash=cfg.hash())
    q = build_potential(cfg)
    h = validate_hypotheses(q)
    q2 = build_potential(cfg.with_overrides(window=2 * cfg.window))
    h2 = validate_hypotheses(q2)
    single = cfg.scenario == "contrast_single_eigenvalue"
    verdict = (h.h1_ok, h.h2_ok, h.h3_ok)
    verdict2 = (h2.h1_ok, h2.h2_ok, h2.h3_ok)
    if single:
        ok = h.h1_ok and h.h2_ok and len(h.eigenvalues) == 1
        rep.add("single eigenvalue below the band", "hypotheses", len(h.eigenvalues), 1, ok)
    else:
        rep.add("hypotheses certified", "hypotheses", float(h.ok), 1, h.ok)
    same = verdict == verdict2
    rep.add("verdict unchanged under window doubling", "hypotheses", float(same), 1, same, base=list(verdict), doubled=list(verdict2))
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "hypotheses.json").write_text(h.to_json())
        (out / "hypotheses_doubled.json").write_text(h2.to_json())
        thetas = (np.arange(64) + 0.5) * np.pi / 64
        write_sweep_csv(out / "scattering.csv", scattering_sweep(q, thetas))
    return rep


def _merge(title: str, reports: list[Report]) -> Report:
    out = Report(title=title, config_hash=reports[0].config_hash if reports else "")
    for r in reports:
        out.checks += r.checks
        out.errors += r.errors
        out.timings.update({f"{r.title}: {k}": v for k, v in r.timings.items()})
    return out


def _guarded(title: str, fn, cfg) -> Report:
    try:
        return fn(cfg)
    except Exception as exc:  # noqa: BLE001 - recorded in the report
        rep = Report(title=title, config_hash=cfg.hash())
        rep.errors.append({"stage": title, "error": f"{type(exc).__name__}: {exc}"})
        return rep


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    cmd = args.command
    if cmd == "report" and args.acceptance:
        from .acceptance import run_acceptance

        rep = run_acceptance(args.criteria)
        if cfg.out:
            rep.write(cfg.out)
    elif cmd == "design":
        rep = _guarded("design", design_report, cfg)
    elif cmd == "validate":
        rep = _guarded("validate", validate_report, cfg)
    elif cmd in _STOP:
        rep = run_scenario(cfg, stop_after=_STOP[cmd])
    elif cmd == "normalform":
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "diagnostics": {**cfg.to_dict()["diagnostics"], "normal_form": True}})
        rep = run_scenario(cfg)
    elif cmd == "report":
        rep = run_scenario(cfg)
    else:
        parts = [_guarded("design", design_report, cfg), _guarded("validate", validate_report, cfg), run_scenario(cfg)]
        rep = _merge(f"all {cfg.scenario}", parts)
        if cfg.out:
            rep.write(cfg.out)
    if cmd in ("design", "validate") and cfg.out:
        rep.write(Path(cfg.out) / cmd)
    if not args.quiet:
        print(rep.summary())
    return 0 if rep.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
