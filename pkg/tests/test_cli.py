import json

import numpy as np
import pytest

from beltrami import cli
from beltrami.fieldio import read_field


def run(tmp_path, scenario, name="sc.json"):
    path = tmp_path / name
    path.write_text(json.dumps(scenario))
    return cli.main(["run", str(path), "--out", str(tmp_path / "out")])


def manifest(tmp_path, name):
    return json.loads((tmp_path / "out" / name / "manifest.json").read_text())


def ring_stages(n=64, t0=1.0):
    return [
        {"id": "r", "type": "solve", "params": {"n": n}},
        {"id": "l", "type": "extract", "inputs": {"factor": "r"}, "params": {"level": 2.0, "n_samples": 32}},
        {"id": "c", "type": "evolve-chart", "inputs": {"curve": "l"}, "params": {"t0": t0, "steps": 40}},
    ]


# -- validation (exit 1) ---------------------------------------------------------------------


@pytest.mark.parametrize("scenario", [
    {"name": "cyc", "stages": [
        {"id": "a", "type": "diagnose", "inputs": {"target": "b"}, "params": {"check": "prop31"}},
        {"id": "b", "type": "generate", "params": {"family": "abc"}}]},
    {"name": "self", "stages": [{"id": "a", "type": "extract", "inputs": {"factor": "a"}, "params": {"level": 1}}]},
    {"name": "x", "stages": [], "colour": "red"},
    {"name": "x", "stages": [{"id": "a", "type": "generate", "params": {"family": "abc"}, "extra": 1}]},
    {"name": "x", "stages": [{"id": "a", "type": "sweep"}]},
    {"name": "x", "stages": [{"id": "a", "type": "generate"}, {"id": "a", "type": "generate"}]},
    {"name": "x", "seed": -1, "stages": []},
    {"stages": []},
])
def test_invalid_scenarios_exit_1(tmp_path, scenario):
    assert run(tmp_path, scenario) == cli.EXIT_INVALID


def test_unknown_stage_parameter_exits_1(tmp_path):
    sc = {"name": "p", "stages": [{"id": "a", "type": "generate", "params": {"family": "abc", "n": 8, "size": 3}}]}
    assert run(tmp_path, sc) == cli.EXIT_INVALID
    m = manifest(tmp_path, "p")
    assert m["status"] == "invalid" and "size" in m["error"]


def test_missing_file_and_bad_json_exit_1(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == cli.EXIT_INVALID
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert cli.main(["run", str(bad), "--out", str(tmp_path)]) == cli.EXIT_INVALID


# -- numerical failures (exit 2) -------------------------------------------------------------


def test_truncated_domain_exits_2(tmp_path):
    sc = {"name": "trunc", "stages": [{"id": "r", "type": "solve", "params": {"extent": 2.0, "n": 32}}]}
    assert run(tmp_path, sc) == cli.EXIT_NUMERICAL
    assert manifest(tmp_path, "trunc")["status"] == "numerical-failure"


def test_chart_through_critical_point_exits_2(tmp_path):
    # the factor peaks near 5.3, so the level 2 + t cannot reach t = 4
    sc = {"name": "crit", "stages": ring_stages(t0=4.0)}
    assert run(tmp_path, sc) == cli.EXIT_NUMERICAL
    assert "DegenerateChartError" in manifest(tmp_path, "crit")["error"]


# -- success and thresholds ------------------------------------------------------------------


def test_abc_residual_reports_second_order(tmp_path):
    assert cli.main(["run", "abc-residual", "--out", str(tmp_path / "out")]) == cli.EXIT_OK
    m = manifest(tmp_path, "abc-residual")
    assert m["status"] == "ok" and set(m["versions"]) >= {"beltrami", "numpy", "scipy"}
    order = m["stages"][-1]["summary"]["observed_order"]["norm_inf"]
    assert order == pytest.approx(2.0, abs=0.2)
    report = json.loads((tmp_path / "out" / "abc-residual" / "residual_report.json").read_text())
    assert len(report["metadata"]["levels"]) == 2


def test_threshold_violation_exits_3_and_lists_entries(tmp_path, capsys):
    sc = json.loads(json.dumps(cli.BUILTIN["abc-residual"]))
    sc["name"] = "strict"
    sc["stages"][-1]["thresholds"] = {"observed_order": {"min": 2.5}, "divergence.norm_l2": {"max": 1.0}}
    assert run(tmp_path, sc) == cli.EXIT_THRESHOLD
    m = manifest(tmp_path, "strict")
    assert m["status"] == "threshold-violation"
    assert [f["entry"] for f in m["failures"]] == ["observed_order"]
    assert "FAIL residual observed_order" in capsys.readouterr().out


def test_torus_rigidity_pipeline(tmp_path):
    assert cli.main(["run", "torus-rigidity", "--out", str(tmp_path / "out")]) == cli.EXIT_OK
    m = manifest(tmp_path, "torus-rigidity")
    stages = {s["id"]: s for s in m["stages"]}
    assert stages["constancy"]["summary"]["beta2_variation"]["norm_inf"] < 5e-3
    assert stages["constancy3d"]["summary"]["beta1_xi2_variation"]["norm_inf"] < 5e-3
    # every tolerance that was used is recorded
    assert stages["ring"]["tolerances"]["solver_tol"] > 0
    assert stages["form"]["tolerances"]["tangency"] == 5e-2
    out = tmp_path / "out" / "torus-rigidity"
    for s in m["stages"]:
        for a in s["artifacts"]:
            assert (out / a).exists()


def test_reruns_are_byte_identical(tmp_path):
    sc = {"name": "noisy", "seed": 7, "stages": [
        {"id": "a", "type": "generate", "params": {"family": "abc", "n": 8, "noise": 0.01}},
        {"id": "b", "type": "generate", "params": {"family": "abc", "n": 8, "noise": 0.01}},
        {"id": "d", "type": "diagnose", "inputs": {"targets": ["a"]}, "params": {"check": "beltrami"}},
    ]}
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(sc))
    for k in (1, 2):
        assert cli.main(["run", str(path), "--out", str(tmp_path / f"o{k}")]) == cli.EXIT_OK
    files = sorted(p.name for p in (tmp_path / "o1" / "noisy").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "o2" / "noisy").iterdir())
    for name in files:
        assert (tmp_path / "o1" / "noisy" / name).read_bytes() == (tmp_path / "o2" / "noisy" / name).read_bytes()
    # the two stages draw from different streams
    a = read_field(tmp_path / "o1" / "noisy" / "a_u.csv").arrays()[0]
    b = read_field(tmp_path / "o1" / "noisy" / "b_u.csv").arrays()[0]
    assert not np.array_equal(a, b)


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BELTRAMI_OUT", str(tmp_path / "env"))
    sc = {"name": "e", "io": "here", "stages": [{"id": "a", "type": "generate", "params": {"family": "abc", "n": 4}}]}
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(sc))
    assert cli.main(["run", str(path)]) == cli.EXIT_OK
    assert (tmp_path / "env" / "here" / "manifest.json").exists()


# -- one-shot commands -----------------------------------------------------------------------


def test_generate_check_render(tmp_path, capsys):
    out = str(tmp_path)
    assert cli.main(["generate", "abc", "-p", "n=16", "--out", out]) == cli.EXIT_OK
    u, f = tmp_path / "abc_u.csv", tmp_path / "abc_f.csv"
    assert u.exists() and f.exists()
    capsys.readouterr()
    assert cli.main(["check", str(u), "--factor", "1"]) == cli.EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert {e["name"] for e in report["entries"]} >= {"curl_minus_fu", "divergence"}
    assert cli.main(["check", str(u), "--factor", str(f), "--max-residual", "1e-6"]) == cli.EXIT_THRESHOLD
    assert cli.main(["render", str(u), "--out", str(tmp_path / "u.svg")]) == cli.EXIT_OK
    assert (tmp_path / "u.svg").read_text().startswith("<svg")
    assert cli.main(["render", str(u), "--component", "nope"]) == cli.EXIT_INVALID


def test_render_solver_history(tmp_path):
    sc = {"name": "s", "stages": [{"id": "r", "type": "solve", "params": {"n": 64}}]}
    assert run(tmp_path, sc) == cli.EXIT_OK
    rep = tmp_path / "out" / "s" / "r_report.json"
    assert cli.main(["render", str(rep)]) == cli.EXIT_OK
    assert "<polyline" in rep.with_suffix(".svg").read_text()


def test_generate_rejects_unknown_parameter():
    assert cli.main(["generate", "abc", "-p", "size=3"]) == cli.EXIT_INVALID
    assert cli.main(["generate", "abc", "-p", "n"]) == cli.EXIT_INVALID


def test_scenarios_listing(capsys):
    assert cli.main(["scenarios"]) == cli.EXIT_OK
    listing = capsys.readouterr().out
    assert "abc-residual" in listing and "torus-rigidity" in listing
    assert cli.main(["scenarios", "abc-residual"]) == cli.EXIT_OK
    assert json.loads(capsys.readouterr().out)["name"] == "abc-residual"
    assert cli.main(["scenarios", "nope"]) == cli.EXIT_INVALID
