import json

import numpy as np
import pytest

from dnls_lab.cli import main
from dnls_lab.normal_form import continuous_projection
from dnls_lab.scenario import (
    SCENARIO_KINDS,
    STAGES,
    CheckRecord,
    ConfigError,
    KickSpec,
    Report,
    ScenarioConfig,
    ScenarioState,
    default_config,
    load_config,
    radiation_packet,
    run_scenario,
)


def short(kind, T, **extra):
    d = {"scenario": kind, "evolution": {"T": T}, **extra}
    return ScenarioConfig.from_dict(d)


@pytest.mark.parametrize("kind", SCENARIO_KINDS)
def test_defaults_are_valid_and_roundtrip(kind):
    cfg = default_config(kind)
    assert ScenarioConfig.from_dict(json.loads(cfg.to_json())) == cfg


@pytest.mark.parametrize(
    "patch",
    [
        {"scenario": "nope"},
        {"window": 8},
        {"potential": {"profile": "gaussian"}},
        {"potential": {"profile": "file"}},
        {"kick": {"eps_kick": 0.0}},
        {"kick": {"packet_width": 100.0}},
        {"evolution": {"dt": 0.03, "obs_every": 0.1}},
        {"evolution": {"scheme": "euler"}},
        {"diagnostics": {"nf_order": 7}},
        {"diagnostics": {"sigma": -1.0}},
        {"branch": {"omega_index": 9}},
        {"colour": "blue"},
        {"kick": {"strength": 1}},
    ],
)
def test_invalid_configs_rejected(patch):
    d = {"scenario": "internal_mode_kick", **patch}
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(d)


def test_missing_scenario_and_bad_json(tmp_path):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"window": 64})
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_hash_ignores_output_directory():
    a = default_config("mixed_kick")
    assert a.hash() == a.with_overrides(out="/tmp/x").hash()
    assert a.hash() != a.with_overrides(seed=5).hash()


def test_partial_config_merges_with_kind_defaults():
    cfg = ScenarioConfig.from_dict({"scenario": "radiation_kick", "kick": {"eps_kick": 2e-2}})
    assert cfg.kick.eps_kick == 2e-2 and cfg.window == 320 and cfg.evolution.scheme == "strang4"


def test_radiation_packet_is_continuous_and_scaled(lin320):
    rng = np.random.default_rng(0)
    f = radiation_packet(lin320, KickSpec(), 1e-3, rng)
    F = np.stack([f, np.conj(f)])
    assert np.max(np.abs(f)) == pytest.approx(1e-3)
    assert np.linalg.norm(continuous_projection(lin320, F) - F) <= 1e-10 * np.linalg.norm(F)


def test_standing_wave_run_is_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = short("standing_wave", 5.0, out=str(tmp_path / name))
        rep = run_scenario(cfg)
        assert rep.passed, rep.summary()
        outs.append(tmp_path / name)
    for f in ("conserved.csv", "modulation.csv", "modulation_summary.json", "hypotheses.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    cfgs = [json.loads((o / "config.json").read_text()) for o in outs]
    assert {k: v for k, v in cfgs[0].items() if k != "out"} == {k: v for k, v in cfgs[1].items() if k != "out"}
    report = json.loads((outs[0] / "report.json").read_text())
    assert report["passed"] and report["config_hash"] == ScenarioConfig.from_dict(
        {"scenario": "standing_wave", "evolution": {"T": 5.0}}
    ).hash()
    assert (outs[0] / "branch" / "manifest.json").exists()
    assert (outs[0] / "plot_modulation.py").exists()


def test_stop_after_stage():
    st = ScenarioState()
    rep = run_scenario(short("standing_wave", 5.0), state=st, stop_after="branch")
    assert st.branch is not None and st.lin is None and st.traj is None
    assert set(rep.timings) == {"hypotheses", "branch"}
    with pytest.raises(ValueError):
        run_scenario(short("standing_wave", 5.0), stop_after="nowhere")
    assert STAGES[0] == "hypotheses"


def test_stage_failure_yields_partial_report(tmp_path):
    # a single-eigenvalue potential fails the two-eigenvalue hypotheses
    cfg = short("standing_wave", 5.0, potential={"profile": "delta"}, out=str(tmp_path / "fail"))
    rep = run_scenario(cfg)
    assert not rep.passed
    assert rep.errors and rep.errors[0]["stage"] == "hypotheses"
    saved = json.loads((tmp_path / "fail" / "report.json").read_text())
    assert saved["errors"] and not saved["passed"]
    assert (tmp_path / "fail" / "hypotheses.json").exists()


def test_radiation_kick_short_run():
    st = ScenarioState()
    rep = run_scenario(short("radiation_kick", 20.0, diagnostics={"falsifier": False}), state=st)
    assert not rep.errors, rep.summary()
    mt = st.mt
    assert np.max(np.abs(mt.z)) <= 1e-4
    # decreasing trend of the local norm of the radiation
    slope = np.polyfit(mt.t, np.log(mt.f_wnorm), 1)[0]
    assert slope < 0


def test_report_criteria_once_and_outputs(tmp_path):
    rep = Report("t")
    for k in range(1, 13):
        rep.checks.append(CheckRecord(f"c{k}", "x", 0.5, 1.0, True, k))
    assert rep.criteria_once() and rep.passed
    rep.checks.append(CheckRecord("dup", "x", 0.5, 1.0, True, 3))
    assert not rep.criteria_once()
    rep.write(tmp_path)
    rows = (tmp_path / "checks.csv").read_text().splitlines()
    assert rows[0].split() == ["criterion", "name", "measured", "tolerance", "pass"] and len(rows) == 14
    assert "PASS" in rep.checks[0].line() or "pass" in rep.checks[0].line().lower()


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["design", "--scenario", "standing_wave", "--out", str(tmp_path / "d"), "--quiet"]) == 0
    design = json.loads((tmp_path / "d" / "design.json").read_text())
    assert design["zero_sum"] and design["moment"] == pytest.approx(-1.0)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": "standing_wave", "window": 4}))
    assert main(["branch", "--config", str(bad)]) == 2
    fail = tmp_path / "fail.json"
    fail.write_text(json.dumps({"scenario": "standing_wave", "potential": {"profile": "delta"}}))
    assert main(["branch", "--config", str(fail), "--quiet"]) == 1


def test_cli_validate_window_doubling(tmp_path):
    out = tmp_path / "v"
    assert main(["validate", "--scenario", "standing_wave", "--out", str(out), "--quiet"]) == 0
    rep = json.loads((out / "validate" / "report.json").read_text())
    names = [c["name"] for c in rep["checks"]]
    assert "verdict unchanged under window doubling" in names
    assert (out / "hypotheses_doubled.json").exists()
    assert len((out / "scattering.csv").read_text().splitlines()) == 65


def test_cli_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "standing_wave", "evolution": {"T": 2.0}}))
    out = tmp_path / "e"
    assert main(["evolve", "--config", str(cfg), "--out", str(out), "--seed", "3", "--quiet"]) == 0
    saved = json.loads((out / "config.json").read_text())
    assert saved["seed"] == 3 and saved["evolution"]["T"] == 2.0
    assert (out / "conserved.csv").exists() and not (out / "modulation.csv").exists()
