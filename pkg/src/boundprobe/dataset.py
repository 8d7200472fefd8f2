"""Semi-open-ended question dataset: domains, questions, multi-round answers, split."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .clients import DEFAULT_DEMOS, DOMAIN_PROMPT, QUESTION_PROMPT, ChatClient, question_requirements
from .errors import ClientFailure, DroppedQuestionWarning, NoEntitiesFound, ParseFailure
from .metrics import normalize_answer

log = logging.getLogger(__name__)

QUESTION_PREFIX = "Tell me a list of"
COMMON_FRACTION = 0.75
DEFAULT_FOLLOWUP = "Tell me more {REQUIREMENTS}."


@dataclass(frozen=True)
class CollectionConfig:
    rounds: int = 3
    followup_template: str = DEFAULT_FOLLOWUP
    demos: tuple[str, ...] = DEFAULT_DEMOS

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("need at least one collection round")

    def followup(self, question: str) -> str:
        return self.followup_template.replace("{REQUIREMENTS}", question_requirements(question))


@dataclass
class QuestionRecord:
    id: str
    domain: str
    question: str
    rounds: list[str] = field(default_factory=list)
    entities: list[str] = field(default_factory=list)
    common: list[str] = field(default_factory=list)
    ambiguous: list[str] = field(default_factory=list)
    partial: bool = False

    def __post_init__(self):
        if not self.question.startswith(QUESTION_PREFIX):
            raise ValueError(f"question must start with {QUESTION_PREFIX!r}: {self.question!r}")

    @property
    def complete(self) -> bool:
        return bool(self.rounds) and not self.partial

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "QuestionRecord":
        return cls(**d)

    def finalize(self, common_fraction: float = COMMON_FRACTION) -> "QuestionRecord":
        """Extract entities from the rounds and apply the common/ambiguous split."""
        self.entities = extract_entities(self.rounds)
        self.common, self.ambiguous = split_common_ambiguous(self.entities, common_fraction)
        return self


def question_id(domain: str, question: str) -> str:
    return "q-" + hashlib.sha1(f"{domain}\x1f{question}".encode("utf-8")).hexdigest()[:10]


# parsing

_MARKER = re.compile(r"^\s*(?:\d+\s*[.)]|[-•*])\s+(.*\S)\s*$")
_TRAIL_PUNCT = ".,;:!"


def _split_lines(text: str) -> list[str]:
    # literal "\n" sequences appear in transcribed responses
    return text.replace("\\n", "\n").splitlines()


def _list_items(text: str) -> list[str]:
    items = []
    for line in _split_lines(text):
        m = _MARKER.match(line)
        if m:
            items.append(m.group(1))
    return items


def _clean_item(item: str) -> str:
    # "Koala: a marsupial ..." / "Koala - a marsupial" keep the name only
    item = re.split(r"\s+[-\u2013\u2014]\s+|:\s", item, maxsplit=1)[0]
    item = item.replace("**", "").strip()
    return item.rstrip(_TRAIL_PUNCT).strip()


def extract_entities(rounds: Sequence[str]) -> list[str]:
    """List items from all rounds, first occurrence kept, deduplicated on the normalized form."""
    if not rounds:
        raise NoEntitiesFound("no responses given")
    out: list[str] = []
    seen: set[str] = set()
    for text in rounds:
        for item in _list_items(text):
            name = _clean_item(item)
            key = normalize_answer(name)
            if key and key not in seen:
                seen.add(key)
                out.append(name)
    if not out:
        raise NoEntitiesFound("no list items found in the responses")
    return out


def split_common_ambiguous(entities: Sequence[str], common_fraction: float = COMMON_FRACTION) -> tuple[list[str], list[str]]:
    k = int(common_fraction * len(entities))
    return list(entities[:k]), list(entities[k:])


# generation steps


def parse_domains(text: str) -> list[str]:
    items = _list_items(text)
    if not items:
        items = [p for p in re.split(r"[,\n]", text.replace("\\n", "\n"))]
    out, seen = [], set()
    for item in items:
        name = _clean_item(item)
        if name and name.lower() not in seen:
            seen.add(name.lower())
            out.append(name)
    return out


def generate_domains(client: ChatClient, raw_path: str | Path | None = None) -> list[str]:
    text = client.complete([{"role": "user", "content": DOMAIN_PROMPT}])
    if raw_path is not None:
        Path(raw_path).write_text(text, encoding="utf-8")
    domains = parse_domains(text) if text.strip() else []
    if not domains:
        raise ParseFailure("could not parse any domain from the response", raw=text)
    return domains


def generate_questions(client: ChatClient, domain: str, cfg: CollectionConfig = CollectionConfig()) -> list[str]:
    if not domain.strip():
        raise ValueError("domain must be nonempty")
    demos = " \n ".join(f"Question {i + 1}: {q}" for i, q in enumerate(cfg.demos))
    prompt = QUESTION_PROMPT.replace("{CATEGORY}", domain).replace("{DEMOS}", demos)
    text = client.complete([{"role": "user", "content": prompt}])
    out: list[str] = []
    for line in _split_lines(text):
        line = line.strip()
        if not line:
            continue
        m = _MARKER.match(line)
        q = m.group(1) if m else line
        q = re.sub(r"^Question\s*\d+\s*:\s*", "", q).strip().strip('"')
        if q.startswith(QUESTION_PREFIX):
            if q not in out:
                out.append(q)
        else:
            warnings.warn(f"dropping non-conforming question {q!r}", DroppedQuestionWarning, stacklevel=2)
    return out


def collect_answers(client: ChatClient, q: QuestionRecord, cfg: CollectionConfig = CollectionConfig()) -> QuestionRecord:
    """Query the target model ``cfg.rounds`` times, each follow-up seeing all prior turns.

    A failing round leaves the earlier rounds in place and marks the record
    partial; calling again resumes from the first missing round.
    """
    if q.rounds and not q.partial:
        raise ValueError(f"{q.id} already collected")
    messages: list[dict] = [{"role": "user", "content": q.question}]
    for i, prior in enumerate(q.rounds):
        messages.append({"role": "assistant", "content": prior})
        messages.append({"role": "user", "content": cfg.followup(q.question)})
    for i in range(len(q.rounds), cfg.rounds):
        try:
            reply = client.complete(messages)
        except ClientFailure as exc:
            log.warning("%s: round %d failed: %s", q.id, i, exc)
            q.partial = True
            return q
        q.rounds.append(reply)
        messages.append({"role": "assistant", "content": reply})
        messages.append({"role": "user", "content": cfg.followup(q.question)})
    q.partial = False
    return q


def collect_all(
    client: ChatClient,
    records: Sequence[QuestionRecord],
    cfg: CollectionConfig = CollectionConfig(),
    parallelism: int = 1,
) -> list[QuestionRecord]:
    """Collect and finalize every unfinished record; order is preserved."""

    def work(rec: QuestionRecord) -> QuestionRecord:
        if rec.complete:
            return rec
        collect_answers(client, rec, cfg)
        if not rec.partial:
            try:
                rec.finalize()
            except NoEntitiesFound:
                log.warning("%s: no entities in responses", rec.id)
        return rec

    if parallelism <= 1:
        return [work(r) for r in records]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(work, records))


# persistence


def save_dataset(path: str | Path, records: Iterable[QuestionRecord], config: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    tmp.replace(path)
    meta_path = path.with_suffix(".meta.json")
    meta = {"config_hash": config_hash(config or {}), "written_at": time.time()}
    if meta_path.exists():
        old = json.loads(meta_path.read_text())
        meta["created_at"] = old.get("created_at", meta["written_at"])
    else:
        meta["created_at"] = meta["written_at"]
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")


def load_dataset(path: str | Path) -> list[QuestionRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(QuestionRecord.from_dict(json.loads(line)))
    return out


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode("utf-8")).hexdigest()[:16]
