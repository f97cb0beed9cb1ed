import json
import subprocess
import sys

import pytest

from sandstm.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from sandstm.harness.bench import CellResult, RunConfig, RunReport, run_benchmark_matrix
from sandstm.harness.report import COLUMNS, emit_report, parse_report
from sandstm.history import CommitRecord, History

SMALL = {"counter-array": {"ops_per_thread": 16}, "kv-index": {"ops_per_thread": 4}}


def small_matrix(**kw):
    cfg = dict(workloads=("counter-array",), threads=(1, 2), max_reps=3, params=SMALL)
    cfg.update(kw)
    return run_benchmark_matrix(RunConfig(**cfg))


def test_matrix_cells_are_consistent():
    report = small_matrix()
    assert len(report.cells) == 4 * 2
    for cell in report.cells:
        assert cell.consistent() and 2 <= cell.reps <= 3
        assert cell.commits == cell.ops == 16 * cell.threads * cell.reps
    assert report.metadata["ci_method"] == "normal approximation"


def test_single_thread_execution_ratio():
    report = small_matrix(threads=(1,))
    by = {c.strategy: c for c in report.cells}
    for s in ("eager", "lazy-timer"):
        assert by[s].leader_execs == by[s].commits and by[s].helper_execs == 0
    clone = by["lazy-helper-clone"]
    assert (clone.leader_execs + clone.helper_execs) >= 2 * clone.commits


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(workloads=("genome",))
    with pytest.raises(ValueError):
        RunConfig(threads=(0,))
    with pytest.raises(ValueError):
        RunConfig(confidence=1.5)
    with pytest.raises(ValueError):
        RunConfig(strategies=("optimistic",))


def cell(**kw):
    base = dict(workload="counter-array", strategy="eager", threads=2, mean_s=0.0123456789,
                ci_halfwidth_s=0.000456789, reps=3, stopped_by_rule=False, ops=48, commits=48,
                aborts=2, full_validations=7, comparisons=11, leader_execs=50, helper_execs=0,
                helper_rounds=0, dooms=0)
    base.update(kw)
    return CellResult(**base)


def test_empty_report_is_header_only():
    assert emit_report(RunReport(), "csv") == (",".join(COLUMNS) + "\n").encode()


def test_one_cell_one_row():
    lines = emit_report(RunReport([cell()]), "csv").decode().splitlines()
    assert lines[0].split(",") == list(COLUMNS)
    assert lines[1] == "counter-array,eager,2,0.012346,0.000457,3,48,2,7,11,50,0"


def test_json_csv_round_trip():
    report = RunReport([cell(), cell(strategy="lazy-timer", helper_execs=3, mean_s=1.5)],
                       {"confidence": 0.9})
    from_json = parse_report(emit_report(report, "json"), "json")
    from_csv = parse_report(emit_report(report, "csv"), "csv")
    for a, b in zip(from_json.cells, from_csv.cells):
        for col in COLUMNS:
            assert getattr(a, col) == getattr(b, col)
    assert emit_report(from_json, "csv") == emit_report(report, "csv")
    assert from_csv.cells[0].mean_s == 0.012346


def test_emit_is_deterministic_and_markdown():
    report = RunReport([cell()], {"b": 1, "a": 2})
    assert emit_report(report, "json") == emit_report(report, "json")
    md = emit_report(report, "markdown").decode()
    assert md.startswith("| workload |") and "CI: a=2, b=1" in md
    with pytest.raises(ValueError):
        emit_report(report, "xml")


# -- CLI ---------------------------------------------------------------------------

def test_cli_hazard_ok(capsys):
    assert main(["hazard", "--name", "stray-stack-write", "--strategy", "lazy-timer"]) == EXIT_OK
    assert "mechanism=guard" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["hazard", "--name", "nope"],
    ["hazard", "--name", "doomed-loop", "--strategy", "pessimistic"],
    ["bench", "--threads", "0"],
    ["bench", "--workloads", "genome"],
    ["bench", "--confidence", "2"],
    [],
])
def test_cli_usage_errors(argv):
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == EXIT_USAGE


def test_cli_check(tmp_path, capsys):
    good = History([0], [CommitRecord(1, ((0, 0),), ((0, 1),), 2)], [1])
    bad = History([0], [CommitRecord(1, ((0, 5),), ((0, 1),), 2)], [1])
    gp, bp = tmp_path / "good.json", tmp_path / "bad.json"
    good.save(gp)
    bad.save(bp)
    assert main(["check", "--history", str(gp)]) == EXIT_OK
    assert main(["check", "--history", str(bp)]) == EXIT_FAIL
    assert "tx 1" in capsys.readouterr().out
    with pytest.raises(SystemExit) as e:
        main(["check", "--history", str(tmp_path / "missing.json")])
    assert e.value.code == EXIT_USAGE


def test_cli_selfcheck(capsys):
    assert main(["selfcheck", "--workload", "counter-array"]) == EXIT_OK
    assert "declared Short" in capsys.readouterr().out


def test_cli_bench_json(tmp_path):
    out = tmp_path / "r.json"
    code = main(["bench", "--workloads", "counter-array", "--strategies", "eager,lazy-timer",
                 "--threads", "1", "--max-reps", "2", "--format", "json", "--out", str(out)])
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert len(doc["cells"]) == 2 and doc["columns"] == list(COLUMNS)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "sandstm", "hazard", "--name", "clone-miss",
                        "--strategy", "lazy-helper-readset"], capture_output=True, text=True)
    assert r.returncode == 0 and "clone-miss" in r.stdout
    r = subprocess.run([sys.executable, "-m", "sandstm", "bogus"], capture_output=True, text=True)
    assert r.returncode == 2
