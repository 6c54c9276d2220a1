import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qconstraint.cli import main
from qconstraint.errors import ScenarioParseError, ScenarioValidationError
from qconstraint.io import read_csv
from qconstraint.scenario import _allowed_keys, parse_scenario, parse_scenario_text, suggest_key

ROOT = Path(__file__).resolve().parents[1]
SCEN = ROOT / "scenarios"

MINIMAL = """\
schema_version: 1
name: ring
geometry:
  family: circle
  params: {radius: 1.0}
transverse:
  kind: disk
  radius: 0.1
modes:
  angular: [1, -1]
"""


# -- parsing -------------------------------------------------------------------------------


def test_minimal_scenario_defaults():
    sc = parse_scenario_text(MINIMAL)
    assert sc.hbar == 1.0 and sc.solver.n_grid == 256 and sc.seed == 0
    assert sc.frame.profile == "untwisted"


@pytest.mark.parametrize("path", sorted(SCEN.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_scenarios_parse(path):
    assert parse_scenario(path).name == path.stem


def test_negative_epsilon_names_field():
    text = MINIMAL.replace("kind: disk\n  radius: 0.1", "kind: interval\n  width: 0.1") + \
        "solver:\n  eps_list: [0.2, -0.1, 0.05]\n"
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenario_text(text)
    msg = str(exc.value)
    assert "solver.eps_list" in msg and "positive" in msg and "line 12" in msg


def test_misspelled_key_gets_suggestion():
    text = MINIMAL + "frame:\n  twst: 1.0\n"
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenario_text(text)
    assert "did you mean 'twist'" in str(exc.value)
    assert "line 12" in str(exc.value)


def test_misplaced_key_suggests_full_path():
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenario_text(MINIMAL + "twst: 1.0\n")
    assert "frame.twist" in str(exc.value)


def test_all_problems_reported_together():
    text = MINIMAL.replace("radius: 0.1", "radius: -0.1") + "hbar: 0\n"
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenario_text(text)
    assert len(exc.value.problems) == 2


def test_malformed_yaml_has_line():
    with pytest.raises(ScenarioParseError) as exc:
        parse_scenario_text("schema_version: 1\nname: [unclosed\ngeometry: {}\n")
    assert exc.value.line is not None


def test_missing_table_file_reported(tmp_path):
    text = MINIMAL.replace("family: circle\n  params: {radius: 1.0}", "family: table\n  path: nowhere.csv")
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenario_text(text, tmp_path)
    assert "file not found" in str(exc.value)


def test_unsupported_schema_version():
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenario_text(MINIMAL.replace("schema_version: 1", "schema_version: 2"))
    assert "schema_version" in str(exc.value)


def test_unreadable_scenario(tmp_path):
    with pytest.raises(ScenarioParseError):
        parse_scenario(tmp_path / "missing.yaml")


def _lev(a, b):
    d = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        prev, d[0] = d[0], i
        for j, cb in enumerate(b, 1):
            prev, d[j] = d[j], min(d[j] + 1, d[j - 1] + 1, prev + (ca != cb))
    return d[-1]


SECTIONS = [("frame", "x"), ("solver", "x"), ("transverse", "x"), ("geometry", "x"), ("x",)]


@given(st.sampled_from(SECTIONS), st.data())
def test_suggestion_is_a_closest_key(loc, data):
    allowed = _allowed_keys(loc)
    key = data.draw(st.sampled_from([k for k in allowed if len(k) >= 5]))
    i = data.draw(st.integers(0, len(key) - 1))
    typo = key[:i] + key[i + 1:]  # one deleted character
    hit = suggest_key(typo, allowed)
    assert hit is not None
    assert _lev(typo, hit) == min(_lev(typo, k) for k in allowed)


@given(st.sampled_from(SECTIONS), st.text("abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=12))
def test_any_suggestion_minimizes_edit_distance(loc, word):
    allowed = _allowed_keys(loc)
    hit = suggest_key(word, allowed)
    if hit is not None and hit in allowed:
        assert _lev(word, hit) == min(_lev(word, k) for k in allowed)


# -- running ------------------------------------------------------------------------------


def _csv_bytes(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


def test_run_is_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert main(["run", "--scenario", str(SCEN / "disk_rotating.yaml"), "--out", str(tmp_path / sub),
                     "--seed", "7"]) == 0
    a, b = _csv_bytes(tmp_path / "a"), _csv_bytes(tmp_path / "b")
    assert set(a) >= {"curve.csv", "modes.csv", "lambda.csv", "effective_field.csv", "spectrum.csv"}
    assert a == b


def test_convention_header(tmp_path):
    assert main(["spectrum", "--scenario", str(SCEN / "circle.yaml"), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "spectrum.csv").read_text().splitlines()
    head = [ln for ln in lines if ln.startswith("#")]
    assert head[0] == "# hbar = 1.0"
    assert any("Lambda_12 = L_z/2" in ln for ln in head)
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["scenario"]["solver"]["n_grid"] == 256
    assert "numpy" in meta["versions"]


def test_stage_subcommands_stop_early(tmp_path):
    assert main(["modes", "--scenario", str(SCEN / "circle.yaml"), "--out", str(tmp_path)]) == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert "modes.csv" in names and "spectrum.csv" not in names


def test_bent_arc_convergence(tmp_path):
    assert main(["converge", "--scenario", str(SCEN / "bent_arc.yaml"), "--out", str(tmp_path)]) == 0
    header, data = read_csv(tmp_path / "convergence.csv")
    assert len(data) >= 3 and header[0] == "epsilon"
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["convergence"]["order"] >= 0.9


def test_sphere_field_has_zero_extrapotential(tmp_path):
    assert main(["effective", "--scenario", str(SCEN / "sphere.yaml"), "--out", str(tmp_path)]) == 0
    header, data = read_csv(tmp_path / "effective_field.csv")
    col = {h: i for i, h in enumerate(header)}
    assert np.max(np.abs(data[:, col["Vex_00_re"]])) < 1e-8
    assert np.all(data[:, [i for h, i in col.items() if h.startswith("A")]] == 0.0)


@pytest.fixture(scope="module")
def triangle_meta(tmp_path_factory):
    out = tmp_path_factory.mktemp("tri")
    assert main(["effective", "--scenario", str(SCEN / "triangle_tube.yaml"), "--out", str(out)]) == 0
    return json.loads((out / "metadata.json").read_text())


def test_triangle_metadata_reports_lambda(triangle_meta):
    assert "lambda_expectation" in triangle_meta["modes"]
    assert "gauge_coefficient" in triangle_meta["effective"]
    assert triangle_meta["effective"]["twist_mean"] == pytest.approx(-1.0, abs=1e-8)


@pytest.mark.xfail(strict=True, reason="a real nondegenerate mode has <Lambda> = 0 by time reversal")
def test_triangle_metadata_lambda_nonzero(triangle_meta):
    lam = np.array(triangle_meta["modes"]["lambda_expectation"])
    assert np.max(np.abs(lam)) > 1e-6
    assert np.max(np.abs(triangle_meta["effective"]["gauge_coefficient"])) > 1e-6


def test_bad_scenario_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(MINIMAL + "frame:\n  twst: 1\n")
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "did you mean" in capsys.readouterr().err
    assert main(["run", "--scenario", str(tmp_path / "none.yaml")]) == 1


def test_bad_threads(tmp_path):
    assert main(["run", "--scenario", str(SCEN / "circle.yaml"), "--threads", "0"]) == 2


def test_check_quick_flags_only_the_triangle(tmp_path, capsys):
    code = main(["check", "--quick", "--out", str(tmp_path)])
    out = capsys.readouterr().out.splitlines()
    fails = [ln for ln in out if ln.startswith("FAIL")]
    assert code == 1
    assert len(fails) == 1 and "scalene_triangle" in fails[0]
    assert json.loads((tmp_path / "checks.json").read_text())["passed"] is False


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "qconstraint", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "check" in r.stdout
