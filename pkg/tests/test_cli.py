import json

import pytest
from click.testing import CliRunner

from convrag.cli import main
from fixtures import (
    PLANTED_DOCS,
    RETRIEVE_QUESTION,
    TOY_DOCS,
    judge_69_31_rules,
    no_retrieve_rules,
    planted_benchmark_record,
    planted_rules,
    retrieve_rules,
)


@pytest.fixture
def runner():
    return CliRunner()


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return path


@pytest.fixture
def toy_corpus_file(tmp_path):
    return write_jsonl(tmp_path / "corpus.jsonl", TOY_DOCS)


@pytest.fixture
def retrieve_script_file(tmp_path):
    return write_jsonl(tmp_path / "script.jsonl", retrieve_rules())


@pytest.fixture
def retrieve_bench_file(tmp_path):
    return write_jsonl(
        tmp_path / "bench.jsonl",
        [{"id": "conv1", "turns": [{"role": "user", "text": RETRIEVE_QUESTION}]}],
    )


class TestIndexCommand:
    def test_builds_snapshot(self, runner, tmp_path, toy_corpus_file):
        out = tmp_path / "idx"
        result = runner.invoke(
            main, ["index", "--corpus", str(toy_corpus_file), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        snapshot = json.loads((out / "index.json").read_text())
        assert snapshot["doc_count"] == 3
        assert (out / "meta.json").exists()

    def test_refuses_nonempty_out_without_force(self, runner, tmp_path, toy_corpus_file):
        out = tmp_path / "idx"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        result = runner.invoke(
            main, ["index", "--corpus", str(toy_corpus_file), "--out", str(out)]
        )
        assert result.exit_code == 3
        assert "not empty" in result.output
        ok = runner.invoke(
            main, ["index", "--corpus", str(toy_corpus_file), "--out", str(out), "--force"]
        )
        assert ok.exit_code == 0

    def test_data_error_exit_code_and_cleanup(self, runner, tmp_path):
        bad = write_jsonl(tmp_path / "bad.jsonl", [{"id": "a", "text": "x"}, {"id": "a", "text": "y"}])
        out = tmp_path / "idx"
        result = runner.invoke(main, ["index", "--corpus", str(bad), "--out", str(out)])
        assert result.exit_code == 3
        line = json.loads(result.output.strip().splitlines()[-1])
        assert line["error"] == "data"
        assert not out.exists()  # partial output removed


class TestRunCommand:
    def test_run_writes_log_and_metrics(
        self, runner, tmp_path, toy_corpus_file, retrieve_script_file, retrieve_bench_file
    ):
        out = tmp_path / "run1"
        result = runner.invoke(
            main,
            [
                "run",
                "--bench", str(retrieve_bench_file),
                "--corpus", str(toy_corpus_file),
                "--script", str(retrieve_script_file),
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = (out / "runlog.jsonl").read_text().splitlines()
        assert len(lines) == 1
        record = json.loads(lines[0])
        assert record["decision"]["choice"] == "Retrieve"
        assert [e["id"] for e in record["retrieved"]] == ["d2", "d1"]
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["retrieval_rate"] == 1.0

    def test_byte_identical_across_repeats(
        self, runner, tmp_path, toy_corpus_file, retrieve_script_file, retrieve_bench_file
    ):
        logs = []
        for name in ("a", "b"):
            out = tmp_path / name
            result = runner.invoke(
                main,
                [
                    "run",
                    "--bench", str(retrieve_bench_file),
                    "--corpus", str(toy_corpus_file),
                    "--script", str(retrieve_script_file),
                    "--out", str(out),
                    "--seed", "7",
                ],
            )
            assert result.exit_code == 0, result.output
            logs.append((out / "runlog.jsonl").read_bytes())
        assert logs[0] == logs[1]

    def test_parallel_output_order_stable(
        self, runner, tmp_path, toy_corpus_file, retrieve_script_file
    ):
        bench = write_jsonl(
            tmp_path / "bench3.jsonl",
            [
                {"id": f"conv{i}", "turns": [{"role": "user", "text": RETRIEVE_QUESTION}]}
                for i in range(3)
            ],
        )
        outs = []
        for name, parallel in (("p1", "1"), ("p3", "3")):
            out = tmp_path / name
            result = runner.invoke(
                main,
                [
                    "run",
                    "--bench", str(bench),
                    "--corpus", str(toy_corpus_file),
                    "--script", str(retrieve_script_file),
                    "--out", str(out),
                    "--parallel", parallel,
                ],
            )
            assert result.exit_code == 0, result.output
            outs.append((out / "runlog.jsonl").read_bytes())
        assert outs[0] == outs[1]

    def test_backend_error_exit_code(self, runner, tmp_path, toy_corpus_file, retrieve_bench_file):
        empty_script = write_jsonl(tmp_path / "empty.jsonl", [])
        out = tmp_path / "run-fail"
        result = runner.invoke(
            main,
            [
                "run",
                "--bench", str(retrieve_bench_file),
                "--corpus", str(toy_corpus_file),
                "--script", str(empty_script),
                "--out", str(out),
            ],
        )
        assert result.exit_code == 4
        assert not out.exists()


class TestEvalRetrievalCommand:
    def test_planted_fixture_report(self, runner, tmp_path):
        corpus = write_jsonl(tmp_path / "planted.jsonl", PLANTED_DOCS)
        bench = write_jsonl(tmp_path / "bench.jsonl", [planted_benchmark_record()])
        script = write_jsonl(tmp_path / "script.jsonl", planted_rules())
        out = tmp_path / "report"
        result = runner.invoke(
            main,
            [
                "eval-retrieval",
                "--bench", str(bench),
                "--corpus", str(corpus),
                "--script", str(script),
                "--representations", "last_turn,full_conversation,summary",
                "--retrievers", "bm25",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        rows = [json.loads(l) for l in (out / "report.jsonl").read_text().splitlines()]
        by_rep = {r["representation"]: r for r in rows}
        assert by_rep["last_turn"]["r_at_5"] == 0.0
        assert by_rep["summary"]["r_at_5"] == 1.0
        assert by_rep["full_conversation"]["r_at_5"] == 1.0
        assert "R@5" in (out / "report.txt").read_text()


class TestEvalCriticCommand:
    def test_accuracy_report(self, runner, tmp_path):
        predictions = write_jsonl(
            tmp_path / "preds.jsonl",
            [
                {"task": "relevance", "variant": "na", "predicted": "[Relevant]", "gold": "[Relevant]"},
                {"task": "relevance", "variant": "na", "predicted": "[Non Relevant]", "gold": "[Relevant]"},
            ],
        )
        out = tmp_path / "critic"
        result = runner.invoke(
            main, ["eval-critic", "--predictions", str(predictions), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        (row,) = [json.loads(l) for l in (out / "report.jsonl").read_text().splitlines()]
        assert row["accuracy"] == 0.5 and row["n"] == 2


class TestEvalRunCommand:
    def test_metrics_from_runlog(
        self, runner, tmp_path, toy_corpus_file, retrieve_script_file, retrieve_bench_file
    ):
        run_out = tmp_path / "run"
        runner.invoke(
            main,
            [
                "run",
                "--bench", str(retrieve_bench_file),
                "--corpus", str(toy_corpus_file),
                "--script", str(retrieve_script_file),
                "--out", str(run_out),
            ],
        )
        out = tmp_path / "metrics"
        result = runner.invoke(
            main, ["eval-run", "--runlog", str(run_out / "runlog.jsonl"), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["retrieval_rate"] == 1.0


class TestDatagenCommand:
    def test_collects_69_31(self, runner, tmp_path):
        instances = write_jsonl(
            tmp_path / "instances.jsonl",
            [
                {
                    "conversation": {
                        "id": f"c{i}",
                        "turns": [{"role": "user", "text": f"instance {i:03d} question"}],
                    }
                }
                for i in range(100)
            ],
        )
        script = write_jsonl(tmp_path / "judge.jsonl", judge_69_31_rules())
        out = tmp_path / "dataset"
        result = runner.invoke(
            main,
            [
                "datagen",
                "--task", "retrieval2",
                "--instances", str(instances),
                "--script", str(script),
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        stats = json.loads((out / "stats.json").read_text())
        assert stats["percentages"] == {"[Retrieve]": 69.0, "[No Retrieve]": 31.0}
        lines = (out / "dataset.jsonl").read_text().splitlines()
        assert len(lines) == 100
        first = json.loads(lines[0])
        assert first["template_hash"]


class TestDatagenPartialPersistence:
    def test_backend_failure_persists_partials_and_exits_4(self, runner, tmp_path):
        instances = write_jsonl(
            tmp_path / "instances.jsonl",
            [
                {
                    "conversation": {
                        "id": f"c{i}",
                        "turns": [{"role": "user", "text": f"instance {i:03d} question"}],
                    }
                }
                for i in range(10)
            ],
        )
        # rules cover only the first five instances; the sixth call misses
        script = write_jsonl(tmp_path / "judge.jsonl", judge_69_31_rules(n=5))
        out = tmp_path / "dataset"
        result = runner.invoke(
            main,
            [
                "datagen",
                "--task", "retrieval2",
                "--instances", str(instances),
                "--script", str(script),
                "--out", str(out),
            ],
        )
        assert result.exit_code == 4
        partial = (out / "dataset.partial.jsonl").read_text().splitlines()
        assert len(partial) == 5


class TestChatCommand:
    def test_interactive_turn(self, runner, tmp_path, toy_corpus_file):
        script = write_jsonl(tmp_path / "script.jsonl", no_retrieve_rules())
        result = runner.invoke(
            main,
            ["chat", "--corpus", str(toy_corpus_file), "--script", str(script)],
            input="Write a short haiku about rivers.\n/quit\n",
        )
        assert result.exit_code == 0, result.output
        assert "[decision: NoRetrieve]" in result.output
        assert "Rivers carve the stone." in result.output


class TestHelp:
    def test_every_subcommand_listed(self, runner):
        result = runner.invoke(main, ["--help"])
        for command in ("index", "run", "chat", "eval-retrieval", "eval-critic", "datagen", "serve"):
            assert command in result.output

    def test_usage_error_is_exit_2(self, runner):
        result = runner.invoke(main, ["run", "--nope"])
        assert result.exit_code == 2
