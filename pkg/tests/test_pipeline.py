import pytest

from boundprobe.clients import MockChatClient, RetryPolicy
from boundprobe.decoder import Mode, SamplerConfig
from boundprobe.fixtures import DISCOVERY_PROMPT, KNOWN, NOVEL
from boundprobe.metrics import normalize_answer
from boundprobe.pipeline import (
    DiscoveryRecord,
    discover_question,
    evaluate_answers,
    load_discoveries,
    save_discoveries,
)
from boundprobe.verification import Provenance, Verdict

NO_SLEEP = RetryPolicy(base_delay=0.0, sleep=lambda s: None)


def test_discovery_drops_known_answers(fixture_model, record):
    model, tok = fixture_model
    d = discover_question(model, tok, record, SamplerConfig(seed=1, max_tokens=40), DISCOVERY_PROMPT)
    known = {normalize_answer(k) for k in KNOWN}
    assert d.entities and all(normalize_answer(e) not in known for e in d.novel)
    assert set(d.novel) <= set(NOVEL)
    assert d.mode == "suppress" and d.anchor_ids


def test_prompt_mode_overlaps_more(fixture_model, record):
    model, tok = fixture_model
    aor = {}
    for mode in (Mode.PROMPT, Mode.SUPPRESS):
        runs = [discover_question(model, tok, record, SamplerConfig(mode=mode, seed=s, max_tokens=24), DISCOVERY_PROMPT)
                for s in range(30)]
        aor[mode] = sum(r.aor for r in runs if r.aor is not None) / len(runs)
    assert aor[Mode.SUPPRESS] < aor[Mode.PROMPT]


def test_discovery_round_trip(tmp_path):
    recs = [DiscoveryRecord("q", "prompt", 80.0, 0, "x", ["a"], ["a"], aor=0.0)]
    save_discoveries(tmp_path / "d.jsonl", recs)
    assert load_discoveries(tmp_path / "d.jsonl") == recs


def _judge(truth):
    def reply(messages):
        answer = messages[-1]["content"].split("Does ", 1)[1].split(" belong", 1)[0]
        v = truth.get(answer, "incorrect")
        return {"correct": "Yes, it is correct.", "incorrect": "No, it does not belong.",
                "unverifiable": "This cannot be verified."}[v]
    return reply


def test_evaluate_answers(record):
    disc = DiscoveryRecord(record.id, "suppress", 80.0, 0, "", ["bilby", "koala", "yowie"], ["bilby", "yowie"])
    self_client = MockChatClient(_judge({"bilby": "incorrect", "yowie": "correct", "dingo": "correct", "quokka": "correct"}), identity="self")
    rag_client = MockChatClient(_judge({"bilby": "correct", "yowie": "unverifiable", "dingo": "correct", "quokka": "incorrect"}), identity="rag")
    out = evaluate_answers([record], [disc], self_client, rag_client, retry=NO_SLEEP)
    by = {p.answer.surface: p for p in out.pairs}
    assert set(by) == {"dingo", "quokka", "bilby", "yowie"}
    assert by["dingo"].provenance is Provenance.TARGET
    assert by["bilby"].provenance is Provenance.AUXILIARY
    assert by["bilby"].truth_verdict is Verdict.CORRECT and by["bilby"].self_verdict is Verdict.INCORRECT
    m = out.per_question[record.id]
    # verified set: dingo, bilby; discovered entities bilby, koala, yowie
    assert m.em == pytest.approx(1 / 3)
    assert m.aor == pytest.approx(1 / 3)
    assert out.metrics == m and not out.failures


def test_evaluation_failures_are_gaps(record):
    broken = MockChatClient(["x"], fail_times=100, identity="self")
    out = evaluate_answers([record], [], broken, broken, retry=NO_SLEEP)
    assert len(out.failures) == len(record.ambiguous) and out.pairs == []
    assert out.metrics is None
