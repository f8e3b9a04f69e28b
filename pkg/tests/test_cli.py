import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from dialforge.cli import (
    CANONICAL_STAGES,
    PipelineRun,
    load_config,
    main,
    validate_config_doc,
)
from dialforge.corpus import write_corpus
from dialforge.errors import ValidationError

from conftest import build_fixture_corpus, pipeline_config, replay_client


@pytest.fixture()
def runner():
    return CliRunner()


PIPELINE_STAGES = [s for s in CANONICAL_STAGES if s != "eval"]


def replay_run(workspace: Path, out: Path, stages=None) -> Path:
    cfg = pipeline_config("replay")
    client = replay_client(workspace / "fixtures" / "pipeline.cassette.jsonl")
    PipelineRun(cfg, workspace, out, client=client).run(list(stages or CANONICAL_STAGES))
    return out / "manifest.json"


# ---------------------------------------------------------------------------
# validate-config


def test_validate_config_threshold_out_of_range(tmp_path, runner):
    cfg = pipeline_config("replay")
    cfg["quality"]["threshold"] = 1.5
    cfg["corpus"] = "missing.jsonl"
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    result = runner.invoke(main, ["validate-config", str(path)])
    assert result.exit_code == 1
    assert "quality.threshold" in result.output
    assert "corpus" in result.output


def test_validate_config_ok(pipeline_workspace, runner):
    result = runner.invoke(main, ["validate-config", str(pipeline_workspace)])
    assert result.exit_code == 0, result.output
    assert "config ok" in result.output


def test_validate_config_doc_weight_cells(tmp_path):
    cfg = pipeline_config("replay")
    cfg["sampling"]["weights"] = {"nonsense-cell": 1.0}
    problems = validate_config_doc(cfg, tmp_path)
    assert any("sampling.weights" in key for key, _ in problems)


def test_load_config_missing_file():
    with pytest.raises(ValidationError):
        load_config("/nonexistent/config.json")


# ---------------------------------------------------------------------------
# Pipeline runs


def test_full_replay_run_writes_manifest(pipeline_workspace, tmp_path):
    manifest_path = replay_run(pipeline_workspace.parent, tmp_path / "run")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    assert set(manifest["stages"]) == set(CANONICAL_STAGES)
    for stage, entry in manifest["stages"].items():
        for name, digest in entry["outputs"].items():
            assert digest.startswith("sha256:")
            assert (tmp_path / "run" / name).exists()


def test_identical_rerun_identical_manifest(pipeline_workspace, tmp_path):
    a = replay_run(pipeline_workspace.parent, tmp_path / "a").read_bytes()
    b = replay_run(pipeline_workspace.parent, tmp_path / "b").read_bytes()
    assert a == b


def test_label_without_sample_names_missing_stage(pipeline_workspace, tmp_path):
    with pytest.raises(ValidationError) as exc:
        replay_run(pipeline_workspace.parent, tmp_path / "run", stages=["label"])
    assert "'sample'" in str(exc.value)


def test_stage_outputs_are_write_once(pipeline_workspace, tmp_path):
    out = tmp_path / "run"
    replay_run(pipeline_workspace.parent, out, stages=["ingest"])
    with pytest.raises(ValidationError) as exc:
        replay_run(pipeline_workspace.parent, out, stages=["ingest"])
    assert "write-once" in str(exc.value)


def test_staged_runs_compose_to_combined_run(pipeline_workspace, tmp_path):
    combined = replay_run(pipeline_workspace.parent, tmp_path / "combined",
                          stages=PIPELINE_STAGES).read_bytes()
    out = tmp_path / "staged"
    for stage in PIPELINE_STAGES:
        manifest = replay_run(pipeline_workspace.parent, out, stages=[stage])
    assert manifest.read_bytes() == combined


def test_run_command_exit_codes(pipeline_workspace, runner, tmp_path):
    result = runner.invoke(
        main,
        ["run", "--config", str(pipeline_workspace), "--out", str(tmp_path / "cli-run"),
         "--stages", "ingest,scrub"],
    )
    assert result.exit_code == 0, result.output
    bad = runner.invoke(
        main,
        ["run", "--config", str(pipeline_workspace), "--out", str(tmp_path / "cli-run2"),
         "--stages", "label"],
    )
    assert bad.exit_code == 1
    assert "sample" in bad.output


def test_run_command_rejects_unknown_stage(pipeline_workspace, runner, tmp_path):
    result = runner.invoke(
        main,
        ["run", "--config", str(pipeline_workspace), "--out", str(tmp_path / "x"),
         "--stages", "ingest,transmogrify"],
    )
    assert result.exit_code == 1
    assert "transmogrify" in result.output


# ---------------------------------------------------------------------------
# Standalone commands


def test_ingest_command(tmp_path, runner):
    corpus_file = tmp_path / "corpus.jsonl"
    write_corpus(build_fixture_corpus(5), corpus_file)
    result = runner.invoke(main, ["ingest", "--in", str(corpus_file)])
    assert result.exit_code == 0
    assert "valid dialogues: 5" in result.output


def test_ingest_command_strict_failure_exit_code(tmp_path, runner):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x"}\n', encoding="utf-8")
    result = runner.invoke(main, ["ingest", "--in", str(bad), "--strict"])
    assert result.exit_code == 1


def test_scrub_command_with_report(tmp_path, runner):
    corpus_file = tmp_path / "corpus.jsonl"
    write_corpus(build_fixture_corpus(4), corpus_file)
    out = tmp_path / "clean.jsonl"
    report = tmp_path / "report.jsonl"
    result = runner.invoke(
        main, ["scrub", "--in", str(corpus_file), "--out", str(out), "--report", str(report)]
    )
    assert result.exit_code == 0, result.output
    assert out.exists() and report.exists()


def test_profile_command(tmp_path, runner):
    corpus_file = tmp_path / "corpus.jsonl"
    write_corpus(build_fixture_corpus(8), corpus_file)
    out = tmp_path / "profile.json"
    result = runner.invoke(main, ["profile", "--in", str(corpus_file), "--out", str(out)])
    assert result.exit_code == 0
    prof = json.loads(out.read_text(encoding="utf-8"))
    assert prof["n"] == 8
    assert sum(prof["scene_counts"].values()) == 8


def test_quality_command(pipeline_workspace, runner, tmp_path):
    run_dir = tmp_path / "run"
    replay_run(pipeline_workspace.parent, run_dir, stages=PIPELINE_STAGES)
    out = tmp_path / "report.json"
    result = runner.invoke(
        main,
        ["quality", "--in", str(run_dir / "samples.jsonl"),
         "--corpus", str(run_dir / "corpus.clean.jsonl"),
         "--version", "v-cli", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["richness"] + report["redundancy"] == 1.0
    assert "Repetition Rate" in result.output


def test_testset_profile_command(pipeline_workspace, runner):
    testset = pipeline_workspace.parent / "fixtures" / "testset.jsonl"
    result = runner.invoke(main, ["testset-profile", "--in", str(testset)])
    assert result.exit_code == 0
    assert "task_type" in result.output


def test_eval_command_replay(pipeline_workspace, runner, tmp_path):
    fixtures = pipeline_workspace.parent / "fixtures"
    out = tmp_path / "scoreboard.json"
    result = runner.invoke(
        main,
        ["eval", "--testset", str(fixtures / "testset.jsonl"),
         "--candidates", str(fixtures / "candidates.jsonl"),
         "--cassette", str(fixtures / "pipeline.cassette.jsonl"),
         "--model", "fixture-model", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    board = json.loads(out.read_text(encoding="utf-8"))
    assert board["summary"]["overall"]["count"] == 6
