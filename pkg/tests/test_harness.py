"""Problem loading, sweeps, escape detection, and the CLI surface."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from instab import harness
from instab.cli import main
from instab.errors import NoPositiveDrift, ValidationError

UNSTABLE_PLANE = {
    "dimension": 3,
    "potential": "x3^2",
    "magnetic": ["0", "x3", "0"],
    "f": "x1",
    "center": [0.0, 0.0, 0.0],
    "T": 1.0,
    "epsilons": [0.1, 0.01],
    "expected": "unstable",
}


def test_load_problem_roundtrip(tmp_path):
    path = tmp_path / "plane.json"
    path.write_text(json.dumps(UNSTABLE_PLANE))
    problem = harness.load_problem(str(path), name="plane")
    assert problem.dimension == 3
    assert problem.epsilons == (0.1, 0.01)
    assert problem.magnetic is not None
    again = harness.load_problem(problem.to_dict())
    assert again.potential.source == problem.potential.source


def test_load_problem_aggregates_errors():
    bad = dict(UNSTABLE_PLANE,
               center=[0.0, 0.0, 0.5],
               epsilons=[0.01, 0.1],
               f="sin(")
    with pytest.raises(ValidationError) as err:
        harness.load_problem(bad)
    text = " ".join(err.value.problems)
    assert "strictly decreasing" in text
    assert "f:" in text
    assert any("zero-potential" in p for p in err.value.problems)


def test_load_problem_rejects_flat_candidate():
    bad = dict(UNSTABLE_PLANE, f="x3^2")
    with pytest.raises(ValidationError) as err:
        harness.load_problem(bad)
    assert any("gradient" in p for p in err.value.problems)


def test_load_problem_rejects_bad_metric_shape():
    bad = dict(UNSTABLE_PLANE, metric=[["1", "0"], ["0", "1"]])
    with pytest.raises(ValidationError):
        harness.load_problem(bad)


def test_corpus_is_valid_and_complete():
    entries = harness.corpus()
    assert len(entries) >= 7
    names = {e.name for e in entries}
    assert {"stable-magnetic-plane", "unstable-magnetic-plane",
            "mechanical-plane", "whitney-umbrella", "kolibri",
            "crossing-axes"} <= names
    whitney = harness.corpus_entry("whitney-umbrella")
    assert whitney.dimension == 3
    assert whitney.potential.eval(whitney.center) == 0.0
    crossing = harness.corpus_entry("crossing-axes")
    assert crossing.labels["certification"] == "refuted"


def test_sweep_closed_form_family():
    problem = harness.load_problem(dict(UNSTABLE_PLANE), name="plane")
    report = harness.run_epsilon_sweep(problem, with_certification=False)
    assert [r.status for r in report.runs] == ["ok", "ok"]
    for run in report.runs:
        grid = run.trajectory.grid_times
        assert np.max(np.abs(run.f_curve - grid)) < 1e-7
        assert run.zdot0_residual <= 1e-10
        assert run.bounds.passed
    assert report.sup_distances[0] < 1e-9
    assert report.limit_drift == pytest.approx(1.0, abs=1e-8)


def test_sweep_survives_failing_run():
    # potential turns negative along the backward branch; the monitor
    # rejects that run, the sweep records it and keeps going
    problem = harness.load_problem(dict(
        UNSTABLE_PLANE,
        potential="x3^2 + 1/(2 - x1) - 0.5",
        T=1.0, epsilons=[0.1]), name="negative-u")
    report = harness.run_epsilon_sweep(problem, with_certification=False)
    assert report.runs[0].status == "failed"
    assert report.runs[0].error


def test_detect_escape_closed_form():
    problem = harness.load_problem(dict(UNSTABLE_PLANE), name="plane")
    report = harness.run_epsilon_sweep(problem, with_certification=False)
    verdict = harness.detect_escape(report)
    assert verdict.verdict.startswith("escape demonstrated")
    assert verdict.level == pytest.approx(1.0, abs=1e-7)
    for crossing in verdict.crossings:
        assert crossing["tau_star"] == pytest.approx(0.5, abs=1e-7)
        assert crossing["physical_time"] == pytest.approx(
            0.5 / crossing["epsilon"], rel=1e-6)
    assert verdict.initial_speeds == pytest.approx([0.1, 0.01])


def test_detect_escape_flags_no_drift():
    problem = harness.corpus_entry("stable-magnetic-plane")
    report = harness.run_epsilon_sweep(problem, with_certification=False)
    with pytest.raises(NoPositiveDrift):
        harness.detect_escape(report)


def test_physical_time_consistency():
    problem = harness.corpus_entry("corollary1-mechanical")
    mismatch = harness.physical_consistency(problem, 0.1)
    assert mismatch < 1e-6


def test_report_serialization_deterministic():
    problem = harness.load_problem(dict(UNSTABLE_PLANE), name="plane")
    a = harness.run_epsilon_sweep(problem, seed=3).to_dict()
    b = harness.run_epsilon_sweep(problem, seed=3).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_build_problem_chart_single_and_multi():
    single = harness.corpus_entry("corollary1-mechanical")
    chart, fields, pullback = harness.build_problem_chart(single)
    assert chart.k == 1 and pullback is None
    multi = harness.corpus_entry("corollary1-unstable-magnetic")
    chart2, fields2, pullback2 = harness.build_problem_chart(multi)
    assert chart2.k == 2 and pullback2 is not None
    del fields, fields2


# --- CLI -------------------------------------------------------------------


def _run(*args):
    return CliRunner().invoke(main, list(args))


def test_cli_corpus_list_and_show():
    result = _run("corpus", "list")
    assert result.exit_code == 0
    names = [row["name"] for row in json.loads(result.output)]
    assert "whitney-umbrella" in names

    result = _run("corpus", "show", "kolibri")
    assert result.exit_code == 0
    data = json.loads(result.output)
    assert data["quasi_homogeneous"]["degree"] == 12

    assert _run("corpus", "show", "nope").exit_code == 2


def test_cli_certify_verdicts_and_exit_codes():
    result = _run("certify", "unstable-magnetic-plane", "--seed", "1")
    assert result.exit_code == 0
    data = json.loads(result.output)
    assert data["potential"]["verdict"] == "certified"
    assert data["magnetic"]["verdict"] == "certified"

    result = _run("certify", "stable-magnetic-plane", "--seed", "1")
    assert result.exit_code == 0  # refuted matches the entry's label
    data = json.loads(result.output)
    assert data["magnetic"]["verdict"] == "refuted"


def test_cli_certify_validation_exit(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(dict(UNSTABLE_PLANE, center=[0, 0, 1])))
    result = _run("certify", str(path))
    assert result.exit_code == 2


def test_cli_escape_and_mismatch(tmp_path):
    result = _run("escape", "unstable-magnetic-plane")
    assert result.exit_code == 0
    data = json.loads(result.output)
    assert data["outcome"] == "unstable"

    lying = dict(UNSTABLE_PLANE, expected="stable")
    path = tmp_path / "lying.json"
    path.write_text(json.dumps(lying))
    result = _run("escape", str(path))
    assert result.exit_code == 1


def test_cli_sweep_csv_artifacts(tmp_path):
    out = tmp_path / "art"
    result = _run("sweep", "unstable-magnetic-plane",
                  "--eps", "0.1", "--format", "csv", "--out", str(out))
    assert result.exit_code == 0
    csvs = list(out.glob("*.csv"))
    assert len(csvs) == 1
    header = csvs[0].read_text().splitlines()[0]
    assert header.startswith("tau,x1")


def test_cli_chart_reports():
    result = _run("chart", "corollary1-unstable-magnetic", "--multi")
    assert result.exit_code == 0
    data = json.loads(result.output)
    assert data["block"]["passed"] and data["injective"]
    assert data["contraction"]["passed"]
    assert data["pullback_field_at_center"] > 0

    assert _run("chart", "whitney-umbrella").exit_code == 2
    assert _run("chart", "corollary1-mechanical", "--multi").exit_code == 2
