import json
from pathlib import Path

import pandas as pd
import pytest

from refeed.analysis.coverage import COVERAGE_CSV
from refeed.analysis.evaluate import REPORT_FILE
from refeed.cli import ABLATION_FILE, RUN_MANIFEST_FILE, main
from refeed.corpus.store import PASSAGES_FILE
from refeed.pipeline.records import read_traces
from refeed.pipeline.runner import FAILURES_FILE, TRACES_FILE
from refeed.retrieval.bm25 import INDEX_FILE

EXPECTED_ABLATION = Path(__file__).parent / "fixtures" / "ablation_expected.csv"


@pytest.fixture
def workspace(ablation_workspace, capsys):
    code = main(["index", "--corpus", str(ablation_workspace["raw"]), "--out", str(ablation_workspace["corpus"])])
    assert code == 0
    assert capsys.readouterr().out.strip() == "num_raw_docs=65 num_passages=65 total_tokens=639"
    return ablation_workspace


def test_index_is_byte_identical_across_runs(workspace, tmp_path):
    again = tmp_path / "again"
    assert main(["index", "--corpus", str(workspace["raw"]), "--out", str(again)]) == 0
    for name in (INDEX_FILE, PASSAGES_FILE):
        assert (again / name).read_bytes() == (workspace["corpus"] / name).read_bytes()


def test_retrieve_prints_ranked_passages(workspace, capsys):
    assert main(["retrieve", "--index", str(workspace["corpus"]), "--query", "zephyr3", "-k", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1
    passage_id, score, title = lines[0].split("\t")
    assert (passage_id, title) == ("gold3", "Vault 3")
    assert float(score) > 0


def test_run_then_eval(workspace, capsys):
    assert main(["run", "--config", str(workspace["config"])]) == 0
    out_dir = workspace["root"] / "out"
    assert "5 traces, 0 failures" in capsys.readouterr().out
    assert len((out_dir / TRACES_FILE).read_text(encoding="utf-8").splitlines()) == 5
    assert (out_dir / FAILURES_FILE).read_text(encoding="utf-8") == ""
    manifest = json.loads((out_dir / RUN_MANIFEST_FILE).read_text(encoding="utf-8"))
    assert manifest["mode"] == "refeed_basic"

    assert main(["eval", "--traces", str(out_dir), "--dataset", str(workspace["dataset"])]) == 0
    printed = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert printed["em"] == "0.6000"
    assert printed["num_examples"] == "5"
    report = json.loads((out_dir / REPORT_FILE).read_text(encoding="utf-8"))
    assert report["metadata"]["fingerprint"]["mode"] == "refeed_basic"


def test_flags_override_the_config_file(workspace, capsys):
    out_dir = workspace["root"] / "full"
    args = ["run", "--config", str(workspace["config"]), "--mode", "refeed_full", "--output-dir", str(out_dir), "--workers", "1"]
    assert main(args) == 0
    capsys.readouterr()
    assert main(["eval", "--traces", str(out_dir / TRACES_FILE), "--dataset", str(workspace["dataset"]), "--ks", "1"]) == 0
    printed = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert printed["em"] == "1.0000"
    assert "recall@1" in printed


def test_ablate_writes_table(workspace, capsys):
    assert main(["ablate", "--config", str(workspace["config"])]) == 0
    table = pd.read_csv(workspace["root"] / "out" / ABLATION_FILE, index_col="variant")
    expected = pd.read_csv(EXPECTED_ABLATION, index_col="variant")
    pd.testing.assert_frame_equal(table, expected, check_dtype=False, atol=1e-6)
    assert "refeed_full-ensemble" in capsys.readouterr().out


def test_coverage_command(workspace, capsys):
    assert main(["run", "--config", str(workspace["config"]), "--mode", "refeed_full"]) == 0
    out_dir = workspace["root"] / "out"
    args = ["coverage", "--corpus", str(workspace["corpus"]), "--traces", str(out_dir), "--dataset", str(workspace["dataset"]), "--ks", "1", "10"]
    assert main(args) == 0
    frame = pd.read_csv(out_dir / COVERAGE_CSV, index_col="K")
    assert frame.loc[10, "question_only"] == 0.0
    assert frame.loc[10, "diverse_answers"] == 1.0


def test_retrieve_with_no_matching_terms_prints_nothing(workspace, capsys):
    assert main(["retrieve", "--index", str(workspace["corpus"]), "--query", "quokka !!", "-k", "5"]) == 0
    assert capsys.readouterr().out == ""


def test_eval_of_empty_traces_scores_zero_with_warning(workspace, tmp_path, capsys, caplog):
    traces = tmp_path / TRACES_FILE
    traces.write_text("", encoding="utf-8")
    assert main(["eval", "--traces", str(traces), "--dataset", str(workspace["dataset"]), "--ks", "1", "10"]) == 0
    printed = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert printed == {"num_examples": "5", "f1": "0.0000", "em": "0.0000", "recall@1": "0.0000", "recall@10": "0.0000"}
    assert "No traces" in caplog.text


def test_full_mode_without_logprobs_skips_ensemble_with_warning(workspace, caplog):
    script = json.loads(workspace["script"].read_text(encoding="utf-8"))
    workspace["script"].write_text(json.dumps({**script, "supports_logprobs": False}), encoding="utf-8")
    out_dir = workspace["root"] / "no-logprobs"
    args = ["run", "--config", str(workspace["config"]), "--mode", "refeed_full", "--output-dir", str(out_dir)]
    assert main(args) == 0

    traces = read_traces(out_dir / TRACES_FILE)
    assert len(traces) == 5
    assert not any(trace.ensemble_applied for trace in traces)
    assert "log-probabilities" in caplog.text


def test_missing_inputs_exit_with_status_one(workspace, tmp_path, capsys):
    assert main(["index", "--corpus", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "c")]) == 1
    assert "Raw corpus not found" in capsys.readouterr().err

    assert main(["eval", "--traces", str(tmp_path / "nothing"), "--dataset", str(workspace["dataset"])]) == 1
    assert "Traces not found" in capsys.readouterr().err

    config = json.loads(workspace["config"].read_text(encoding="utf-8"))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**config, "corpus_dir": str(tmp_path / "nowhere")}), encoding="utf-8")
    assert main(["run", "--config", str(bad)]) == 1
    assert "ingested corpus" in capsys.readouterr().err


def test_api_key_in_config_is_refused(workspace, capsys):
    config = json.loads(workspace["config"].read_text(encoding="utf-8"))
    config["backend"]["api_key"] = "sk-secret"
    workspace["config"].write_text(json.dumps(config), encoding="utf-8")
    assert main(["run", "--config", str(workspace["config"])]) == 1
    assert "credentials" in capsys.readouterr().err


def test_malformed_corpus_reports_line(tmp_path, capsys):
    raw = tmp_path / "raw.jsonl"
    raw.write_text('{"id": "a", "text": "fine"}\n{"id": "b", "text": "ok"}\n{"id": 3\n', encoding="utf-8")
    assert main(["index", "--corpus", str(raw), "--out", str(tmp_path / "c")]) == 1
    assert "line 3" in capsys.readouterr().err


def test_failed_reindex_leaves_corpus_and_index_consistent(tmp_path, capsys):
    out = tmp_path / "corpus"
    good = tmp_path / "good.jsonl"
    good.write_text("".join(json.dumps({"id": f"d{i}", "text": f"word{i} shared"}) + "\n" for i in range(5)), encoding="utf-8")
    assert main(["index", "--corpus", str(good), "--out", str(out)]) == 0

    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"id": "x0", "text": "new"}\n{"id": "x1", "text"\n', encoding="utf-8")
    assert main(["index", "--corpus", str(broken), "--out", str(out)]) == 1
    capsys.readouterr()

    assert main(["retrieve", "--index", str(out), "--query", "word3", "-k", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split("\t")[0] for line in lines] == ["d3#0"]


def test_malformed_shots_file_reports_line(workspace, tmp_path, capsys):
    shots = tmp_path / "shots.jsonl"
    shots.write_text('{"question": "q", "answer": "a"}\nnot json\n', encoding="utf-8")
    assert main(["run", "--config", str(workspace["config"]), "--shots", str(shots)]) == 1
    assert "line 2" in capsys.readouterr().err
