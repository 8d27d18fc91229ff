import json
import shutil
import subprocess
import sys

import pytest

from compound_sched import cli, scenario
from compound_sched.model import WorkflowDag
from compound_sched.runtime import read_summary_csv, read_trace

DATA = scenario.DATA


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_run_writes_artifacts(tmp_path, capsys):
    code, out, err = run(["run", "--spec", scenario.VIDEO_JOB, "--out", tmp_path, "--seed", 3], capsys)
    assert code == 0 and err == ""
    rows = read_summary_csv(out)
    assert rows[0]["config_label"] == "selected"
    assert (float(rows[0]["makespan_s"]), float(rows[0]["gpu_wh"])) == (83.0, 34.0)
    assert rows[0]["seed"] == "3"
    for name in ("dag.json", "chosen_config.json", "trace.jsonl", "summary.csv", "tool_calls.json"):
        assert (tmp_path / name).is_file()
    dag = WorkflowDag.from_dict(json.loads((tmp_path / "dag.json").read_text()))
    assert len(dag.nodes) == 8
    entries, metrics = read_trace(tmp_path / "trace.jsonl")
    assert metrics["makespan_s"] == 83.0 and metrics["seed"] == 3
    assert metrics["planner_overhead_s"] == pytest.approx(0.83)
    assert read_summary_csv(tmp_path / "summary.csv") == rows
    calls = json.loads((tmp_path / "tool_calls.json").read_text())
    assert {"capability": "frame_extraction", "target": "cats.mov"}.items() <= calls[0].items()


def test_missing_spec(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code, out, err = run(["run", "--spec", missing], capsys)
    assert code == 2 and out == ""
    msg = json.loads(err)
    assert str(missing) in msg["message"] and msg["exit"] == 2


def _write_spec(tmp_path, **over):
    doc = json.loads(scenario.VIDEO_JOB.read_text())
    doc.update(over)
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(doc))
    return p


def test_quality_floor_exit_4(tmp_path, capsys):
    code, _, err = run(["run", "--spec", _write_spec(tmp_path, quality_floor=99)], capsys)
    assert code == 4
    assert json.loads(err)["error"] == "NoFeasibleConfig"


def test_planning_error_exit_3(tmp_path, capsys):
    code, _, err = run(["run", "--spec", _write_spec(tmp_path, tasks=["fold the laundry"])], capsys)
    assert code == 3
    assert json.loads(err)["error"] == "UnmappableTask"


def test_bad_spec_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run(["run", "--spec", bad], capsys)[0] == 2


def test_simulation_error_exit_5(tmp_path, capsys):
    cluster = tmp_path / "tiny.json"
    cluster.write_text(json.dumps({"nodes": [{"skus": [{"sku_id": "cpu-epyc", "units": 4}]}]}))
    code, _, err = run(["run", "--spec", scenario.BASELINE_JOB, "--cluster", cluster], capsys)
    assert code == 5
    assert json.loads(err)["error"] == "DeadlockError"


def test_pinned_plan_resolved_next_to_spec(tmp_path, capsys):
    shutil.copytree(DATA / "pins", tmp_path / "pins")
    shutil.copy(scenario.BASELINE_JOB, tmp_path / "job.json")
    code, out, _ = run(["run", "--spec", tmp_path / "job.json"], capsys)
    assert code == 0
    row = read_summary_csv(out)[0]
    assert (row["config_label"], float(row["makespan_s"]), float(row["gpu_wh"])) == ("baseline", 285.0, 155.0)


def test_compare_fixture(tmp_path, capsys):
    pins = [DATA / "pins" / f"{k}.json" for k in ("cpu", "gpu", "gpu_cpu")]
    argv = ["compare", "--baseline", scenario.BASELINE_JOB, "--spec", scenario.VIDEO_JOB, "--out", tmp_path]
    for p in pins:
        argv += ["--pin", p]
    code, out, _ = run(argv, capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[-2] == "speedup,3.43"
    assert lines[-1] == "energy_efficiency,4.56"
    rows = read_summary_csv("\n".join(lines[:-2]) + "\n")
    got = {r["config_label"]: (float(r["makespan_s"]), float(r["gpu_wh"])) for r in rows}
    assert got == {
        "baseline": (285.0, 155.0),
        "selected": (83.0, 34.0),
        "cpu": (83.0, 34.0),
        "gpu": (77.0, 43.0),
        "gpu_cpu": (77.0, 42.0),
    }
    subdirs = sorted(p.name for p in tmp_path.iterdir())
    assert subdirs == ["baseline", "declarative", "pin_cpu", "pin_gpu", "pin_gpu_cpu"]


def test_compare_identical_specs():
    req = cli.RunRequest(spec=scenario.VIDEO_JOB)
    report = cli.cmd_compare(req, req)
    assert f"{report['speedup']:.2f}" == "1.00"
    assert f"{report['energy_efficiency']:.2f}" == "1.00"


def test_exhaustive_flag_small_space(tmp_path, capsys):
    spec = _write_spec(tmp_path, tasks=["Run speech-to-text on all scenes"], description="transcribe")
    spec_doc = json.loads(spec.read_text())
    spec_doc["inputs"] = spec_doc["inputs"][:1]
    spec.write_text(json.dumps(spec_doc))
    greedy = run(["run", "--spec", spec, "--max-fanout", 2], capsys)
    exhaustive = run(["run", "--spec", spec, "--search", "exhaustive", "--max-fanout", 2], capsys)
    assert greedy[0] == exhaustive[0] == 0
    assert read_summary_csv(greedy[1]) == read_summary_csv(exhaustive[1])


def test_console_script_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "compound_sched.cli", "--help"], capture_output=True, text=True, check=True
    )
    assert "compare" in out.stdout and "run" in out.stdout
