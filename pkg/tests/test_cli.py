import csv
import json

import pytest

from replisim.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from replisim.reporting import series_csv, series_from_bins, series_svg

from conftest import MINIMAL


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_validate_fixture(capsys):
    assert main(["validate", "fixture"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("ok: packaging_1a (2 conditions, 5 measures, n=362)")


def test_validate_reports_violations(tmp_path, capsys):
    doc = json.loads(json.dumps(MINIMAL))
    doc["analysis_plan"][0]["dv"] = "nonexistent"
    path = tmp_path / "study.json"
    path.write_text(json.dumps(doc))
    assert main(["validate", str(path)]) == EXIT_INVALID
    assert "DANGLING_REFERENCE" in capsys.readouterr().out


def test_validate_unparseable(tmp_path):
    path = tmp_path / "study.json"
    path.write_text("{not json")
    assert main(["validate", str(path)]) == EXIT_INVALID


def test_fixture_pipeline_end_to_end(tmp_path, capsys):
    run_dir, an_dir, as_dir, plot_dir = (tmp_path / d for d in ("run", "an", "as", "plot"))
    assert main(["run", "fixture", "--out", str(run_dir), "--seed-personas", "3", "--max-parallel", "4"]) == EXIT_OK
    assert "362 done, 0 failed, 362 requests issued" in capsys.readouterr().out
    assert len(_rows(run_dir / "dataset.csv")) == 362
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["seed_personas"] == 3

    # a second run into the same directory must be explicit about resuming
    assert main(["run", "fixture", "--out", str(run_dir), "--seed-personas", "3"]) == EXIT_RUNTIME
    assert main(["run", "fixture", "--out", str(run_dir), "--seed-personas", "3", "--resume"]) == EXIT_OK
    assert "0 requests issued" in capsys.readouterr().out
    assert main(["run", "fixture", "--out", str(run_dir), "--seed-personas", "4", "--resume"]) == EXIT_RUNTIME

    assert main(["analyze", str(run_dir / "dataset.csv"), "fixture", "--out", str(an_dir)]) == EXIT_OK
    analysis = json.loads((an_dir / "analysis.json").read_text())
    assert len(analysis["findings"]) == 5

    assert main(["assess", str(an_dir / "analysis.json"), "fixture", "--out", str(as_dir)]) == EXIT_OK
    assessment = json.loads((as_dir / "assessment.json").read_text())
    assert len(assessment["outcomes"]) + len(assessment["errors"]) == 5
    assert assessment["summary"]["overall"]["total"] == len(assessment["outcomes"])

    assert main(["plotdata", str(as_dir / "assessment.json"), "--out", str(plot_dir)]) == EXIT_OK
    assert len(_rows(plot_dir / "figure2_series.csv")) == 7
    assert len(_rows(plot_dir / "figure3_series.csv")) == 4


def test_manifest_replay(tmp_path, capsys):
    first = tmp_path / "first"
    assert main(["run", "fixture", "--out", str(first), "--seed-personas", "2"]) == EXIT_OK
    second = tmp_path / "second"
    assert main(["run", "--manifest", str(first / "manifest.json"), "--out", str(second), "--max-parallel", "1"]) == EXIT_OK
    assert (first / "dataset.csv").read_bytes() == (second / "dataset.csv").read_bytes()


def test_run_without_study(capsys):
    assert main(["run"]) == EXIT_RUNTIME


def test_benchmark_table2(tmp_path, capsys):
    assert main(["benchmark-table2", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "overall       90/133 = 67.7%" in out
    assert "main effects  84/111 = 75.7%" in out
    assert "interactions  6/22 = 27.3%" in out
    assert "rule_inconsistent" in out
    report = json.loads((tmp_path / "benchmark_report.json").read_text())
    assert report["p_bins"]["deviations_from_published"] == []
    bins = _rows(tmp_path / "p_bins.csv")
    assert [(b["replicated"], b["total"]) for b in bins][0] == ("54", "65")

    assert main(["plotdata", str(tmp_path / "benchmark_report.json"), "--svg", "--out", str(tmp_path)]) == EXIT_OK
    series = _rows(tmp_path / "figure2_series.csv")
    assert [int(r["replicated"]) + int(r["failed"]) for r in series] == [65, 15, 13, 9, 7, 13, 11]
    assert (tmp_path / "figure2.svg").read_text().startswith("<svg")


def test_benchmark_policy_and_convention(capsys):
    assert main(["benchmark-table2", "--censored", "upper", "--policy", "boundary=exclusive"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "deviation: <0.001" in out
    assert main(["benchmark-table2", "--policy", "gamma=1"]) == EXIT_RUNTIME


def test_plotdata_empty_report(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("")
    assert main(["plotdata", str(empty), "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "figure2_series.csv").read_text() == "label,replicated,failed\n"


def test_series_helpers():
    assert series_from_bins(None) == []
    assert series_from_bins({"bins": []}) == []
    rows = series_from_bins({"bins": [{"label": "<x", "replicated": 2, "failed": 1, "total": 3}]})
    assert rows == [{"label": "<x", "replicated": 2, "failed": 1}]
    assert series_csv(rows).splitlines() == ["label,replicated,failed", "<x,2,1"]
    svg = series_svg(rows, "t & u")
    assert "&lt;x" in svg and "t &amp; u" in svg and "2/3" in svg
    assert series_svg([]).count("<rect") == 0


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
