"""A small constructed auxiliary model for desk-scale experiments.

The vocabulary holds single-token animal names.  "Known" names come in three
surface forms (``kangaroo``, `` kangaroo``, ``kangaroos``) whose head rows
share one hidden direction, so they behave as near-duplicates.  "Novel"
names each get their own direction and a smaller logit, so prompt-only
sampling rarely reaches them.  After the list separator ``"\\n- "`` the
model strongly prefers known names; after a name it prefers the separator,
occasionally the end-of-sequence token.  Every other token is a single
character used only to spell prompts.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .anchors import VocabTokenizer
from .dataset import QuestionRecord, question_id
from .decoder import MockLanguageModel
from .linalg import EmbeddingMatrix

EOS = "<eos>"
UNK = "<unk>"
SEP = "\n- "
KNOWN = ("kangaroo", "koala", "wombat", "wallaby", "possum", "echidna", "dingo", "quokka")
NOVEL = ("bilby", "numbat", "cassowary", "bandicoot", "kookaburra", "thylacine", "platypus", "emu")
QUESTION = "Tell me a list of animals unique to Australia."
DISCOVERY_PROMPT = "Tell me more {REQUIREMENTS}." + SEP


@dataclass(frozen=True)
class FixtureWeights:
    known: float = 2.0  # logit of every known surface form in the list state
    novel: float = 1.0  # novel names stay just outside the prompt-only nucleus
    sep_after_name: float = 3.0
    eos_after_name: float = 1.0
    repel: float = 6.0  # pushes structural tokens away where they do not belong
    noise: float = 0.05


def fixture_tokens() -> list[str]:
    tokens = [EOS, UNK, SEP]
    for name in KNOWN:
        tokens += [name, " " + name, name + "s"]
    tokens += list(NOVEL)
    chars = string.ascii_letters + string.digits + " .,'?!:-\n"
    tokens += [c for c in chars if c not in tokens]
    return tokens


def build_fixture(seed: int = 7, weights: FixtureWeights = FixtureWeights()) -> tuple[MockLanguageModel, VocabTokenizer]:
    tokens = fixture_tokens()
    tok = VocabTokenizer(tokens, unk_token=UNK, eos_token=EOS)
    rng = np.random.default_rng(seed)

    classes = ["sep", "eos", "char"] + [f"k:{n}" for n in KNOWN] + [f"n:{n}" for n in NOVEL]
    d = len(classes) + 4
    dirs, _ = np.linalg.qr(rng.standard_normal((d, len(classes))))
    direction = {c: dirs[:, i] for i, c in enumerate(classes)}

    def cls_of(t: str) -> str:
        if t == SEP:
            return "sep"
        if t == EOS:
            return "eos"
        base = t.strip()
        if base in KNOWN or (base.endswith("s") and base[:-1] in KNOWN):
            return "k:" + (base if base in KNOWN else base[:-1])
        if base in NOVEL:
            return "n:" + base
        return "char"

    token_class = [cls_of(t) for t in tokens]
    E = np.array([direction[c] for c in token_class])
    E = E + weights.noise * rng.standard_normal(E.shape) / np.sqrt(d)

    w = weights
    list_state = (
        sum(w.known * direction[f"k:{n}"] for n in KNOWN)
        + sum(w.novel * direction[f"n:{n}"] for n in NOVEL)
        - w.repel * (direction["sep"] + direction["eos"] + direction["char"])
    )
    name_state = (
        w.sep_after_name * direction["sep"]
        + w.eos_after_name * direction["eos"]
        - w.repel * direction["char"]
        - (w.repel / 1.5) * sum(direction[c] for c in classes if c[:2] in ("k:", "n:"))
    )
    H = np.array([name_state if c.startswith(("k:", "n:")) else list_state for c in token_class])
    model = MockLanguageModel(EmbeddingMatrix(E), H, eos_token=tok.eos_id)
    return model, tok


def fixture_record() -> QuestionRecord:
    rec = QuestionRecord(question_id("Biology", QUESTION), "Biology", QUESTION)
    rec.rounds = ["\n".join(f"{i + 1}. {n}" for i, n in enumerate(KNOWN))]
    return rec.finalize()


# on-disk fixture for the command line

OTHER_QUESTIONS = {
    "Biology": ["Tell me a list of fruits that grow on trees in tropical regions."],
    "Geology": ["Tell me a list of current deserts across the world that were previously covered by an ancient sea."],
}
_TARGET_ROUNDS = {
    QUESTION: [
        "1. kangaroo\n2. koala\n3. wombat",
        "1. wallaby\n2. possum\n3. echidna",
        "1. dingo\n2. quokka",
    ],
    OTHER_QUESTIONS["Biology"][0]: [
        "1. Mango\n2. Papaya\n3. Jackfruit",
        "1. Durian\n2. Rambutan",
        "I apologize for any confusion, but to the best of my knowledge, the list I provided includes all the correct answers.",
    ],
    OTHER_QUESTIONS["Geology"][0]: [
        "1. Qaidam Basin\n2. Dasht-e Kavir\n3. Great Karoo",
        "1. Dasht-e Lut\n2. The Registan Desert",
        "1. Tanami Desert",
    ],
}
# ground truth and the target's own belief for animal answers
_ANIMAL_TRUTH = {
    "kangaroo": ("correct", "correct"), "koala": ("correct", "correct"), "wombat": ("correct", "correct"),
    "emu": ("correct", "correct"), "possum": ("incorrect", "correct"), "echidna": ("correct", "incorrect"),
    "dingo": ("unverifiable", "correct"), "quokka": ("correct", "unverifiable"),
    "bilby": ("correct", "correct"), "numbat": ("correct", "incorrect"), "cassowary": ("incorrect", "correct"),
    "bandicoot": ("correct", "unverifiable"), "kookaburra": ("correct", "correct"),
    "thylacine": ("unverifiable", "unverifiable"), "platypus": ("correct", "incorrect"),
    "wallaby": ("incorrect", "incorrect"),
}
_OTHER_TRUTH = {
    "Jackfruit": ("correct", "correct"), "Durian": ("correct", "unverifiable"), "Rambutan": ("incorrect", "correct"),
    "Dasht-e Lut": ("unverifiable", "incorrect"), "The Registan Desert": ("incorrect", "correct"),
    "Tanami Desert": ("incorrect", "incorrect"),
}
_REPLY = {
    "correct": "Let me think step by step.\n\nYes, {a} is factually correct for this list.",
    "incorrect": "Let me think step by step.\n\nNo, {a} does not belong to this category.",
    "unverifiable": "I searched several sources.\n\nThis cannot be verified based on available information.",
}


def demo_transcript() -> list[dict]:
    """Replay entries for a three-question run over the fixture model."""
    from .clients import DOMAIN_PROMPT, question_requirements

    rows: list[dict] = [{"identity": "target", "match": DOMAIN_PROMPT, "response": "Biology, Geology"}]
    rows.append({"identity": "target", "match": "professor of Biology", "response":
                 f"1. {QUESTION}\n2. {OTHER_QUESTIONS['Biology'][0]}\n3. List some tropical birds."})
    rows.append({"identity": "target", "match": "professor of Geology", "response":
                 f"1. {OTHER_QUESTIONS['Geology'][0]}"})
    for q, rounds in _TARGET_ROUNDS.items():
        for i, text in enumerate(rounds):
            match = q if i == 0 else "Tell me more " + question_requirements(q)
            rows.append({"identity": "target", "match": match, "turn": i + 1, "response": text})
    for who, idx in (("self", 1), ("rag", 0)):
        animal_q = question_requirements(QUESTION)
        for name, verdicts in _ANIMAL_TRUTH.items():
            rows.append({"identity": who, "match": f"Does {name} belong to {animal_q}?", "repeat": True,
                         "response": _REPLY[verdicts[idx]].format(a=name)})
        for name, verdicts in _OTHER_TRUTH.items():
            rows.append({"identity": who, "match": f"Does {name} belong", "repeat": True,
                         "response": _REPLY[verdicts[idx]].format(a=name)})
        # animals offered for the fruit and desert questions
        rows.append({"identity": who, "match": "belong to", "repeat": True, "response": _REPLY["incorrect"].format(a="it")})
    return rows


def save_fixture(directory, seed: int = 7) -> dict:
    """Write model, vocabulary, replay transcript and a config file; return their paths."""
    import json
    from pathlib import Path

    import yaml

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    model, tok = build_fixture(seed)
    model_dir = d / "model"
    model.save(model_dir)
    tok.save(model_dir / "vocab.txt")
    meta = json.loads((model_dir / "model.json").read_text())
    meta.update({"eos": EOS, "unk": UNK})
    (model_dir / "model.json").write_text(json.dumps(meta) + "\n")
    transcript = d / "transcript.jsonl"
    transcript.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in demo_transcript()), encoding="utf-8")
    config = d / "config.yaml"
    config.write_text(yaml.safe_dump({
        "dataset_path": str(d / "data" / "dataset.jsonl"),
        "discovery_path": str(d / "data" / "discovery.jsonl"),
        "cache_path": str(d / "data" / "eval_cache.jsonl"),
        "report_dir": str(d / "reports"),
        "model_dir": str(model_dir),
        "replay_path": str(transcript),
        "max_tokens": 24,
    }, sort_keys=False))
    return {"model_dir": model_dir, "transcript": transcript, "config": config}
