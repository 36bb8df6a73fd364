from __future__ import annotations

import json

import numpy as np
import pytest

from tsrag.cli import main
from tsrag.store import read_store

SMALL_FLAGS = [
    "--window", "16", "--stride", "16", "--cap", "16", "--k", "3",
    "--probes", "2", "--d", "3", "--h", "3", "--horizon", "4",
    "--bandwidth", "1.0",
]


def run(capsys, *argv: str) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def workspace(tmp_path, capsys):
    """Benchmark stores plus a built tree, all via the CLI itself."""
    base = str(tmp_path / "base.crb.jsonl")
    targets = str(tmp_path / "targets.crb.jsonl")
    code, _, _ = run(
        capsys, "synth", "--kind", "forecast", "--seed", "0",
        "--out-base", base, "--out-targets", targets,
        "--domains", "2", "--motifs-per-domain", "2", "--base-per-motif", "3",
        "--targets-per-motif", "1", "--length", "120", "--noise", "0.2",
    )
    assert code == 0
    tree = str(tmp_path / "index.crbtree")
    code, _, _ = run(capsys, "build", "--store", base, "--tree", tree, *SMALL_FLAGS)
    assert code == 0
    return {"base": base, "targets": targets, "tree": tree, "dir": tmp_path}


class TestSynthAndBuild:
    def test_build_prints_summary(self, workspace, capsys):
        code, out, _ = run(capsys, "stats", "--tree", workspace["tree"])
        assert code == 0
        assert out.startswith("tree: ")
        assert "window_size=16 cap=16" in out
        assert "domain nature: clusters=" in out
        assert "domain energy: clusters=" in out

    def test_json_flag_emits_json(self, workspace, capsys):
        code, out, _ = run(capsys, "stats", "--tree", workspace["tree"], "--json")
        assert code == 0
        payload = json.loads(out)
        assert payload["window_size"] == 16

    def test_build_is_deterministic_on_disk(self, workspace, tmp_path, capsys):
        other = str(tmp_path / "again.crbtree")
        code, _, _ = run(
            capsys, "build", "--store", workspace["base"], "--tree", other,
            *SMALL_FLAGS,
        )
        assert code == 0
        a = open(workspace["tree"], "rb").read()
        b = open(other, "rb").read()
        assert a == b


class TestQuery:
    def test_tabular_output(self, workspace, capsys):
        records = read_store(workspace["targets"])
        values = ",".join(str(v) for v in records[0].target[:16])
        code, out, err = run(
            capsys, "query", "--tree", workspace["tree"], f"--values={values}",
            "--domain", records[0].domain_category, *SMALL_FLAGS,
        )
        assert code == 0
        lines = out.strip().split("\n")
        assert len(lines) == 3
        for line in lines:
            wid, score, domain = line.split("\t")
            float(score)
            assert ":" in wid
        assert "# evaluations=" in err

    def test_values_file(self, workspace, tmp_path, capsys):
        records = read_store(workspace["targets"])
        vf = tmp_path / "values.txt"
        vf.write_text(" ".join(str(v) for v in records[0].target[:16]))
        code, out, _ = run(
            capsys, "query", "--tree", workspace["tree"],
            "--values-file", str(vf), *SMALL_FLAGS,
        )
        assert code == 0
        assert len(out.strip().split("\n")) == 3

    def test_missing_values_is_usage_error(self, workspace, capsys):
        code, _, err = run(capsys, "query", "--tree", workspace["tree"], *SMALL_FLAGS)
        assert code == 1
        assert "--values" in err

    def test_wrong_length_is_data_error(self, workspace, capsys):
        code, _, err = run(
            capsys, "query", "--tree", workspace["tree"], "--values", "1,2,3",
            *SMALL_FLAGS,
        )
        assert code == 2
        assert "16 values" in err

    def test_missing_tree_is_data_error(self, workspace, capsys):
        code, _, err = run(
            capsys, "query", "--tree", str(workspace["dir"] / "nope.crbtree"),
            "--values", ",".join(["0"] * 16), *SMALL_FLAGS,
        )
        assert code == 2


class TestInsert:
    def test_insert_reports_and_saves(self, workspace, capsys):
        code, out, _ = run(
            capsys, "insert", "--tree", workspace["tree"],
            "--store", workspace["targets"],
        )
        assert code == 0
        assert out.startswith("inserted=")
        code, out2, _ = run(capsys, "stats", "--tree", workspace["tree"])
        assert code == 0
        inserted = int(out.split("inserted=")[1].split()[0])
        assert inserted > 0
        total = int(out2.split("total_windows=")[1].split()[0])
        baseline_total = int(out.split("total_windows=")[1].split()[0])
        assert total == baseline_total  # stats reflects the saved insert

    def test_duplicate_insert_exits_2(self, workspace, capsys):
        code, _, err = run(
            capsys, "insert", "--tree", workspace["tree"],
            "--store", workspace["base"],
        )
        assert code == 2
        assert "duplicate" in err


class TestEval:
    def test_csv_on_stdout_and_report(self, workspace, capsys):
        report = str(workspace["dir"] / "eval.csv")
        code, out, err = run(
            capsys, "eval", "--tree", workspace["tree"], "--queries", "8",
            "--probes", "1,all", "--report", report,
            "--window", "16", "--k", "3",
        )
        assert code == 0
        lines = out.strip().split("\n")
        assert lines[0] == (
            "probes,k,queries,recall,mean_evaluations,oracle_evaluations,mean_seconds"
        )
        assert len(lines) == 3
        assert lines[1].startswith("1,3,8,")
        assert lines[2].startswith("all,3,8,")
        assert open(report).read().strip().split("\n")[0] == lines[0]


class TestForecast:
    def test_numeric_run_and_report(self, workspace, capsys):
        report = str(workspace["dir"] / "forecast.csv")
        params = str(workspace["dir"] / "params.json")
        code, out, err = run(
            capsys, "forecast", "--store", workspace["targets"],
            "--tree", workspace["tree"], "--epochs", "2", "--sample-stride", "8",
            "--report", report, "--save-params", params, *SMALL_FLAGS,
        )
        assert code == 0
        lines = out.strip().split("\n")
        assert lines[0] == "split,samples,mse,mse_normalized"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["train", "val", "test"]
        assert "# report_path=" in err
        assert "# params_path=" in err
        disk = open(report).read().strip().split("\n")
        assert disk == lines

    def test_ablation_without_tree(self, workspace, capsys):
        code, out, _ = run(
            capsys, "forecast", "--store", workspace["targets"], "--ablate-rag",
            "--epochs", "1", "--sample-stride", "8", *SMALL_FLAGS,
        )
        assert code == 0

    def test_tree_required_without_ablation(self, workspace, capsys):
        code, _, err = run(
            capsys, "forecast", "--store", workspace["targets"],
            "--epochs", "1", "--sample-stride", "8", *SMALL_FLAGS,
        )
        assert code == 1
        assert "tree" in err

    def test_backend_prefix_enforced(self, workspace, capsys):
        code, _, err = run(
            capsys, "forecast", "--store", workspace["targets"],
            "--tree", workspace["tree"], "--backend", "just-a-command",
            *SMALL_FLAGS,
        )
        assert code == 1
        assert "external:" in err

    def test_broken_backend_exits_3(self, workspace, capsys):
        code, _, err = run(
            capsys, "forecast", "--store", workspace["targets"],
            "--tree", workspace["tree"], "--backend", "external:/no/such/cmd",
            "--limit", "1", *SMALL_FLAGS,
        )
        assert code == 3
        assert "not found" in err


class TestConfigPlumbing:
    def test_config_file_with_flag_override(self, workspace, capsys):
        cfg = workspace["dir"] / "run.cfg"
        cfg.write_text("window=16\nk=2\nprobes=2\nlambda=0.2\n")
        records = read_store(workspace["targets"])
        values = ",".join(str(v) for v in records[0].target[:16])
        code, out, _ = run(
            capsys, "query", "--tree", workspace["tree"], f"--values={values}",
            "--config", str(cfg), "--k", "1",
        )
        assert code == 0
        assert len(out.strip().split("\n")) == 1  # the --k flag beat the file

    def test_bad_config_file_exits_1(self, workspace, capsys):
        cfg = workspace["dir"] / "bad.cfg"
        cfg.write_text("nonsense=1\n")
        code, _, err = run(
            capsys, "query", "--tree", workspace["tree"],
            "--values", "0,0", "--config", str(cfg),
        )
        assert code == 1
        assert "nonsense" in err


class TestUsageErrors:
    def test_unknown_command_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["wibble"])
        assert exc.value.code == 1

    def test_missing_required_flag_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["build", "--tree", "x.crbtree"])
        assert exc.value.code == 1

    def test_ingest_round_trip(self, tmp_path, capsys):
        csv = tmp_path / "series.csv"
        csv.write_text("date,a,b\n20200101,1.0,5.0\n20200102,2.0,\n20200103,3.0,7.0\n")
        store = str(tmp_path / "out.crb.jsonl")
        code, out, _ = run(
            capsys, "ingest", str(csv), "--domain", "web",
            "--freq", "Daily", "--store", store, "--json",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["records_added"] == 2  # one per channel column
        records = read_store(store)
        assert {r.item_id for r in records} == {"series_0", "series_1"}
        np.testing.assert_array_equal(records[0].target, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(records[1].target, [5.0, 6.0, 7.0])
