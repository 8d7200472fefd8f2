import json

import pytest

from boundprobe.clients import MockChatClient
from boundprobe.dataset import (
    CollectionConfig,
    QuestionRecord,
    collect_all,
    collect_answers,
    config_hash,
    extract_entities,
    generate_domains,
    generate_questions,
    load_dataset,
    parse_domains,
    question_id,
    save_dataset,
    split_common_ambiguous,
)
from boundprobe.errors import DroppedQuestionWarning, NoEntitiesFound, ParseFailure

DOMAIN_TEXT = (
    "Environment and Climate, Technology and Industry, Political Science, History and Archaeology, Sociology, "
    "Economy and Finance, Philosophy, Languages, Art, Architecture, Music, Physics, Astronomy, Chemistry, Biology, "
    "Geology, Computer Science, Anthropology and Cultures, Education, Psychology and Mental Health, Fitness and "
    "Physical Health, Literature, Religion, Law and Criminology, Military and War, Agriculture, Tourism, Film and "
    "Television, Sports and Athletics, Food and Diet, Energy and renewable resources, Mathematics and Statistics, "
    "Medicine and Health, Games, Clothing and Fashion."
)
Q = "Tell me a list of animals unique to Australia."


def test_published_domain_list():
    domains = generate_domains(MockChatClient([DOMAIN_TEXT]))
    # the published list names 35 domains
    assert len(domains) == 35
    assert {"Biology", "Music", "Geology"} <= set(domains)
    assert domains[-1] == "Clothing and Fashion"


def test_domains_numbered_and_deduplicated(tmp_path):
    raw = tmp_path / "raw.txt"
    assert generate_domains(MockChatClient(["1. Biology\n2. Music\n3. biology"]), raw) == ["Biology", "Music"]
    assert raw.read_text().startswith("1. Biology")
    with pytest.raises(ParseFailure):
        generate_domains(MockChatClient(["   "]))


def test_question_filter():
    ok = [f"{i}. Tell me a list of rivers that cross {c}." for i, c in enumerate("ABCDE", 1)]
    bad = ["6. List some animals", "7. Name mountains over 8000 m"]
    with pytest.warns(DroppedQuestionWarning) as w:
        qs = generate_questions(MockChatClient(["\n".join(ok + bad)]), "Geology")
    assert len(qs) == 5 and len(w) == 2
    qs = generate_questions(MockChatClient(["Question 1: Tell me a list of land animals unique to Australia."]), "Biology")
    assert qs == ["Tell me a list of land animals unique to Australia."]


def test_question_prompt_fills_category_and_demos():
    client = MockChatClient([""])
    generate_questions(client, "Music")
    prompt = client.calls[0][0]["content"]
    assert prompt.startswith("I am a professor of Music")
    assert "Question 1: Tell me a list of land animals unique to Australia." in prompt


def test_three_rounds_see_history():
    client = MockChatClient(["1. koala", "1. emu", "1. dingo"])
    rec = collect_answers(client, QuestionRecord("q", "Biology", Q))
    assert rec.rounds == ["1. koala", "1. emu", "1. dingo"] and rec.complete
    last = client.calls[2]
    assert [m["role"] for m in last] == ["user", "assistant", "user", "assistant", "user"]
    assert last[-1]["content"] == "Tell me more animals unique to Australia."


def test_single_round():
    client = MockChatClient(["1. koala"])
    rec = collect_answers(client, QuestionRecord("q", "Biology", Q), CollectionConfig(rounds=1))
    assert len(rec.rounds) == 1 and len(client.calls) == 1


def test_failure_leaves_partial_and_resumes():
    client = MockChatClient(["1. koala", "1. emu"])
    rec = collect_answers(client, QuestionRecord("q", "Biology", Q))
    assert rec.partial and len(rec.rounds) == 2
    resumed = collect_answers(MockChatClient(["1. dingo"]), rec)
    assert resumed.complete and resumed.rounds[-1] == "1. dingo"


def test_entity_extraction():
    assert extract_entities(["1. Carrots \n 2. Spinach"]) == ["Carrots", "Spinach"]
    assert extract_entities(["1. Koala\n2. Emu", "- koalas\n- Bilby: small marsupial"]) == ["Koala", "Emu", "Bilby"]
    assert extract_entities(["3) Dingo - wild dog\n* Quokka."]) == ["Dingo", "Quokka"]
    with pytest.raises(NoEntitiesFound):
        extract_entities(["I am not sure there are any more."])


@pytest.mark.parametrize("n,common,ambiguous", [(52, 39, 13), (1, 0, 1), (4, 3, 1)])
def test_split(n, common, ambiguous):
    c, a = split_common_ambiguous([f"e{i}" for i in range(n)])
    assert (len(c), len(a)) == (common, ambiguous)
    assert c + a == [f"e{i}" for i in range(n)]


def test_record_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        QuestionRecord("q", "x", "List some animals")
    rec = QuestionRecord(question_id("Biology", Q), "Biology", Q, rounds=["1. a\n2. b\n3. c\n4. d"]).finalize()
    assert rec.common == ["a", "b", "c"] and rec.ambiguous == ["d"]
    path = tmp_path / "d.jsonl"
    save_dataset(path, [rec], {"rounds": 3})
    assert load_dataset(path) == [rec]
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    assert meta["config_hash"] == config_hash({"rounds": 3})


def test_collect_all_parallel_preserves_order():
    qs = [QuestionRecord(f"q{i}", "Biology", f"Tell me a list of things number {i}.") for i in range(6)]
    client = MockChatClient(lambda m: "1. " + m[0]["content"].split()[-1])
    out = collect_all(client, qs, CollectionConfig(rounds=1), parallelism=3)
    assert [r.id for r in out] == [f"q{i}" for i in range(6)]
    assert out[4].entities == ["4"]
