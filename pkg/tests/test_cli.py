import json
import warnings

import pytest
import yaml

import tables
from boundprobe import cli
from boundprobe.cli import main
from boundprobe.clients import RAG_EVAL_TEMPLATE, SELF_EVAL_TEMPLATE, question_requirements, request_key
from boundprobe.dataset import QuestionRecord, load_dataset, question_id, save_dataset
from boundprobe.fixtures import QUESTION, demo_transcript, save_fixture
from boundprobe.pipeline import DiscoveryRecord, load_discoveries, save_discoveries
from boundprobe.verification import Provenance

REPLY = {
    "correct": "Yes, it is correct.",
    "incorrect": "No, it does not belong.",
    "unverifiable": "This cannot be verified.",
}


@pytest.fixture
def fx(tmp_path):
    return save_fixture(tmp_path / "fx")


def run(*args):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return main([str(a) for a in args])


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_build_dataset_is_deterministic(tmp_path):
    files = []
    for i in range(2):
        paths = save_fixture(tmp_path / f"r{i}")
        assert run("--config", paths["config"], "build-dataset") == 0
        files.append((tmp_path / f"r{i}" / "data" / "dataset.jsonl").read_bytes())
    assert files[0] == files[1]
    records = load_dataset(tmp_path / "r0" / "data" / "dataset.jsonl")
    assert len(records) == 3 and all(r.complete for r in records)


def test_resume_after_failure_matches_uninterrupted(tmp_path, fx):
    clean = tmp_path / "clean"
    assert run("--config", save_fixture(clean)["config"], "build-dataset") == 0
    rows = demo_transcript()
    faulty = [{"identity": "target", "match": "Tell me more", "turn": 2, "error": True, "response": ""}] + rows
    bad = write_jsonl(tmp_path / "faulty.jsonl", faulty)
    assert run("--config", fx["config"], "--replay", bad, "build-dataset") == 2
    data = fx["config"].parent / "data" / "dataset.jsonl"
    assert any(r.partial for r in load_dataset(data))
    assert run("--config", fx["config"], "build-dataset") == 0
    assert data.read_bytes() == (clean / "data" / "dataset.jsonl").read_bytes()


def test_empty_transcript_is_fatal_and_writes_nothing(tmp_path, fx):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run("--config", fx["config"], "--replay", empty, "build-dataset") == 3
    assert not (fx["config"].parent / "data" / "dataset.jsonl").exists()


def test_interrupt_flushes_partial_state(fx, monkeypatch):
    def interrupted(client, records, cfg, parallelism=1):
        from boundprobe.dataset import collect_answers

        collect_answers(client, records[0], cfg)
        raise KeyboardInterrupt

    monkeypatch.setattr(cli, "collect_all", interrupted)
    assert run("--config", fx["config"], "build-dataset") == 2
    records = load_dataset(fx["config"].parent / "data" / "dataset.jsonl")
    assert records[0].complete and records[0].entities and not records[1].rounds


def test_discover_modes(fx):
    cfg = fx["config"]
    assert run("--config", cfg, "build-dataset") == 0
    data = cfg.parent / "data"
    aor = {}
    for mode in ("prompt", "suppress"):
        out = data / f"{mode}.jsonl"
        assert run("--config", cfg, "--mode", mode, "--seed", 3, "discover", "--out", out) == 0
        d = next(x for x in load_discoveries(out) if x.question_id == question_id("Biology", QUESTION))
        assert d.mode == mode
        aor[mode] = d.aor
    assert aor["suppress"] < aor["prompt"]
    zero = data / "zero.jsonl"
    assert run("--config", cfg, "discover", "--lambda", 0, "--seed", 3, "--out", zero) == 0
    assert load_discoveries(zero)[0].text == load_discoveries(data / "prompt.jsonl")[0].text


def test_full_pipeline_and_report(fx):
    cfg = fx["config"]
    for cmd in ("build-dataset", "discover", "evaluate"):
        assert run("--config", cfg, cmd) == 0
    reports = cfg.parent / "reports"
    summary = json.loads((reports / "report.json").read_text())
    assert summary["n_pairs"] > 0 and summary["metrics"] is not None
    assert summary["boundary_admission"] == {"questions": 3, "admitting": 1, "pct": pytest.approx(100 / 3, abs=1e-5)}
    for name in ("report.md", "crosstab_target.csv", "crosstab_target.png", "metrics.csv", "metrics.png", "verdicts.jsonl"):
        assert (reports / name).exists()
    assert (reports / "crosstab_target.png").read_bytes()[:4] == b"\x89PNG"

    data = cfg.parent / "data"
    assert run("--config", cfg, "--mode", "prompt", "discover", "--out", data / "prompt.jsonl") == 0
    assert run("--config", cfg, "report", "--compare", f"suppress={data / 'discovery.jsonl'}", f"prompt={data / 'prompt.jsonl'}") == 0
    rows = (reports / "metrics.csv").read_text().splitlines()
    assert rows[0].startswith("run,em,f1,aor") and [r.split(",")[0] for r in rows[1:]] == ["suppress", "prompt"]


def test_zero_discovered_answers(fx):
    cfg = fx["config"]
    assert run("--config", cfg, "build-dataset") == 0
    records = load_dataset(cfg.parent / "data" / "dataset.jsonl")
    save_discoveries(cfg.parent / "data" / "discovery.jsonl",
                     [DiscoveryRecord(r.id, "suppress", 80.0, 0, "", [], []) for r in records])
    assert run("--config", cfg, "evaluate") == 0
    md = (cfg.parent / "reports" / "report.md").read_text()
    assert "_No discovered answers; metrics section empty._" in md
    assert json.loads((cfg.parent / "reports" / "report.json").read_text())["auxiliary"] is None


def _table_run(tmp_path, cells, provenance):
    """Dataset, discovery file and replay transcript whose verdicts realize ``cells``."""
    pairs = tables.realize(cells, provenance)
    names = [p.answer.surface for p in pairs]
    q = "Tell me a list of things in a table."
    rec = QuestionRecord(question_id("T", q), "T", q, rounds=["1. x"], entities=["x"], common=["x"],
                         ambiguous=names if provenance is Provenance.TARGET else [])
    save_dataset(tmp_path / "dataset.jsonl", [rec])
    disc = [DiscoveryRecord(rec.id, "suppress", 80.0, 0, "", names, names)] if provenance is Provenance.AUXILIARY else []
    save_discoveries(tmp_path / "discovery.jsonl", disc)
    reqs = question_requirements(q)
    rows = []
    for p in pairs:
        for who, tmpl, verdict in (("self", SELF_EVAL_TEMPLATE, p.self_verdict), ("rag", RAG_EVAL_TEMPLATE, p.truth_verdict)):
            msg = [{"role": "user", "content": tmpl.fill(ANSWER=p.answer.surface, QUESTION_REQUIREMENTS=reqs)}]
            rows.append({"identity": who, "key": request_key(msg), "response": REPLY[verdict.value]})
    write_jsonl(tmp_path / "transcript.jsonl", rows)
    cfg = tmp_path / "config.yaml"
    cfg.write_text(yaml.safe_dump({
        "dataset_path": str(tmp_path / "dataset.jsonl"),
        "discovery_path": str(tmp_path / "discovery.jsonl"),
        "cache_path": None,
        "report_dir": str(tmp_path / "reports"),
        "replay_path": str(tmp_path / "transcript.jsonl"),
        "figures": False,
    }))
    assert run("--config", cfg, "evaluate") == 0
    return (tmp_path / "reports" / "report.md").read_text(), json.loads((tmp_path / "reports" / "report.json").read_text())


def test_evaluate_realizes_target_table(tmp_path):
    md, summary = _table_run(tmp_path, tables.TARGET_CELLS, Provenance.TARGET)
    assert "- Unqualified answers: 40.15%" in md
    assert summary["target"]["crosstab_pct"][1] == [9.3, 47.77, 2.78]


def test_evaluate_realizes_auxiliary_table(tmp_path):
    md, summary = _table_run(tmp_path, tables.AUXILIARY_CELLS, Provenance.AUXILIARY)
    assert "- Hidden correct answers: 75.11%" in md  # 7512 of 10001 pairs
    assert abs(summary["auxiliary"]["hidden_correct_pct"] - 75.12) <= 0.01
    assert abs(summary["auxiliary"]["unexpected_wrong_pct"] - 62.43) <= 0.01


def test_report_from_verdicts_file(tmp_path, fx):
    verdicts = write_jsonl(tmp_path / "v.jsonl", [p.to_dict() for p in tables.target_pairs()])
    cfg = yaml.safe_load(fx["config"].read_text())
    cfg.update(figures=False, report_dir=str(tmp_path / "out"))
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert run("--config", path, "report", "--verdicts", verdicts) == 0
    assert "Unqualified answers: 40.15%" in (tmp_path / "out" / "report.md").read_text()


def test_config_errors_exit_1(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("no_such_key: 1\n")
    assert run("--config", bad, "build-dataset") == 1
    none = tmp_path / "none.yaml"
    none.write_text("dataset_path: x.jsonl\n")
    assert run("--config", none, "--replay", tmp_path / "missing.jsonl", "build-dataset") == 1


def test_missing_model_is_config_error(tmp_path, fx):
    cfg = yaml.safe_load(fx["config"].read_text())
    cfg.pop("model_dir")
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert run("--config", path, "build-dataset") == 0
    assert run("--config", path, "discover") == 1


def test_selfcheck(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out


def test_global_flags_after_subcommand(fx):
    assert run("build-dataset", "--config", fx["config"], "--seed", 4) == 0
