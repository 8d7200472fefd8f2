"""Chat clients, prompt templates, verdict parsing and the evaluation cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence, runtime_checkable

from .errors import ClientFailure, ReplayMiss
from .metrics import normalize_answer
from .verification import Verdict

log = logging.getLogger(__name__)

Message = Mapping[str, str]


@runtime_checkable
class ChatClient(Protocol):
    identity: str
    rate_limit: float | None

    def complete(self, messages: Sequence[Message], **params) -> str: ...


def request_key(messages: Sequence[Message]) -> str:
    canon = json.dumps([{"role": m["role"], "content": m["content"]} for m in messages], sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class RateLimiter:
    """At most ``per_minute`` acquisitions in any sliding 60 second window."""

    def __init__(self, per_minute: float, clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if per_minute <= 0:
            raise ValueError("rate limit must be positive")
        self.per_minute = per_minute
        self.clock = clock
        self.sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        with self._lock:
            while True:
                now = self.clock()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.per_minute:
                    self._stamps.append(now)
                    return now
                self.sleep(60.0 - (now - self._stamps[0]))


@dataclass
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 1.0
    sleep: Callable[[float], None] = time.sleep

    def call(self, fn: Callable[[], str]) -> str:
        delay = self.base_delay
        for attempt in range(1, self.attempts + 1):
            try:
                return fn()
            except ReplayMiss:
                raise
            except ClientFailure as exc:
                if attempt == self.attempts:
                    raise
                log.warning("client call failed (attempt %d/%d): %s; retrying in %.1fs", attempt, self.attempts, exc, delay)
                self.sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")


class HTTPChatClient:
    """Chat-completion endpoint speaking the common ``choices[0].message`` shape.

    Endpoint and key default to ``BP_API_URL`` / ``BP_API_KEY``.
    """

    def __init__(
        self,
        model: str,
        url: str | None = None,
        api_key: str | None = None,
        temperature: float = 0.0,
        rate_limit: float | None = None,
        timeout: float = 120.0,
        session=None,
        limiter: RateLimiter | None = None,
    ):
        import requests

        self.model = model
        self.url = url or os.environ.get("BP_API_URL")
        self.api_key = api_key or os.environ.get("BP_API_KEY")
        if not self.url:
            raise ClientFailure("no endpoint configured (set BP_API_URL)")
        self.temperature = temperature
        self.rate_limit = rate_limit
        self.timeout = timeout
        self.identity = f"http:{model}"
        self._session = session or requests.Session()
        self._limiter = limiter or (RateLimiter(rate_limit) if rate_limit else None)

    def complete(self, messages: Sequence[Message], **params) -> str:
        import requests

        if self._limiter is not None:
            self._limiter.acquire()
        payload = {
            "model": self.model,
            "messages": [dict(m) for m in messages],
            "temperature": params.pop("temperature", self.temperature),
            **params,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            content = resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise ClientFailure(f"{self.identity}: {exc}") from exc
        if not content:
            raise ClientFailure(f"{self.identity}: empty completion")
        return content


class MockChatClient:
    """Scripted client: a list of replies served in order, or a function of the messages."""

    def __init__(
        self,
        replies: Sequence[str] | Callable[[Sequence[Message]], str],
        identity: str = "mock",
        fail_times: int = 0,
        rate_limit: float | None = None,
    ):
        self._replies = replies if callable(replies) else list(replies)
        self.identity = identity
        self.rate_limit = rate_limit
        self.fail_times = fail_times
        self.calls: list[list[dict]] = []
        self._next = 0

    def complete(self, messages: Sequence[Message], **params) -> str:
        self.calls.append([dict(m) for m in messages])
        if self.fail_times > 0:
            self.fail_times -= 1
            raise ClientFailure(f"{self.identity}: scripted failure")
        if callable(self._replies):
            return self._replies(messages)
        if self._next >= len(self._replies):
            raise ClientFailure(f"{self.identity}: script exhausted")
        reply = self._replies[self._next]
        self._next += 1
        return reply


class ReplayChatClient:
    """Serves replies from a recorded JSON-lines transcript.

    Each line is ``{"key": <request_key>, "response": ...}`` (exact request
    match) or ``{"match": <substring of the last user message>, "response": ...}``.
    Optional fields: ``"identity"`` restricts an entry to one client identity,
    ``"turn"`` to requests holding that many user messages, ``"repeat": true``
    keeps the entry available after use, and ``"error": true`` replays a
    failure.  Entries are consumed once unless repeating; first match wins.
    """

    def __init__(self, entries: Iterable[dict], identity: str = "replay", rate_limit: float | None = None):
        self.entries = list(entries)
        self.identity = identity
        self.rate_limit = rate_limit
        self._used = [False] * len(self.entries)
        self._lock = threading.Lock()
        self._by_key: dict[str, list[int]] = {}
        self._scan: list[int] = []
        for i, e in enumerate(self.entries):
            if "key" in e:
                self._by_key.setdefault(e["key"], []).append(i)
            if "match" in e:
                self._scan.append(i)

    @classmethod
    def from_file(cls, path: str | Path, identity: str = "replay") -> "ReplayChatClient":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([json.loads(x) for x in lines if x.strip()], identity=identity)

    def for_identity(self, identity: str) -> "ReplayChatClient":
        return ReplayChatClient(self.entries, identity=identity, rate_limit=self.rate_limit)

    def complete(self, messages: Sequence[Message], **params) -> str:
        key = request_key(messages)
        last = next((m["content"] for m in reversed(messages) if m["role"] == "user"), "")
        turn = sum(1 for m in messages if m["role"] == "user")
        with self._lock:
            keyed = self._by_key.get(key, [])
            for i in sorted(set(keyed) | set(self._scan)) if keyed else self._scan:
                e = self.entries[i]
                if self._used[i] or e.get("identity", self.identity) != self.identity:
                    continue
                if e.get("turn", turn) != turn:
                    continue
                if e.get("key") == key or ("match" in e and e["match"] in last):
                    self._used[i] = not e.get("repeat", False)
                    if e.get("error"):
                        raise ClientFailure(f"{self.identity}: recorded failure")
                    return e["response"]
        raise ReplayMiss(f"{self.identity}: no transcript entry for request {key[:12]} ({last[:60]!r})")


class RecordingChatClient:
    """Wraps a client and appends every exchange to a transcript file."""

    def __init__(self, inner: ChatClient, path: str | Path):
        self.inner = inner
        self.identity = inner.identity
        self.rate_limit = inner.rate_limit
        self.path = Path(path)
        self._lock = threading.Lock()

    def complete(self, messages: Sequence[Message], **params) -> str:
        reply = self.inner.complete(messages, **params)
        row = {"identity": self.identity, "key": request_key(messages), "response": reply}
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        return reply


# prompts

SELF_EVAL_BODY = (
    "Does {ANSWER} belong to {QUESTION_REQUIREMENTS}? I'll tip $100 for the factually correct answer. "
    "Think step by step and then give your answer."
)
RAG_EVAL_BODY = (
    "Search online for highly credible information related to the following question, and answer the "
    "question based on the search results. \n" + SELF_EVAL_BODY
)
DOMAIN_PROMPT = (
    "I hope to test my students' knowledge in different domains. Which domains can I use to create questions?"
)
QUESTION_PROMPT = (
    "I am a professor of {CATEGORY} and need to test students' understanding of {CATEGORY} by asking a series "
    "of challenging questions. These questions require respondents to list entities that they know meet a "
    "series of certain conditions. You need to create more different and diverse challenging questions "
    "according to the requirements. Read the following requirements carefully. I'm going to tip $100 for a "
    "perfect list of questions! \n The questions should meet the following criteria: \n 1. Each question "
    'should start with "Tell me a list of"; \n 2. To make the question challenging enough, each question '
    "should contain multiple limiting conditions. \n 3. The requirement of the question should not involve "
    "specific numbers (which makes the question too hard to answer) or vague descriptions (which makes it hard "
    'to evaluate the truthfulness of the answer), like "long lifespan", "quick speed", "popular", and '
    '"important"; \n 4. The boundaries of the question should be very clear, making it easy to evaluate its '
    "truthfulness; \n 5. The answers to the questions should be consistent through a relatively long time and "
    "not change frequently, for example, yearly. \n Refer to the style in the following two examples from an "
    "exemplary subject, biology. \n{DEMOS}"
)
DEFAULT_DEMOS = (
    "Tell me a list of land animals unique to Australia.",
    "Tell me a list of fruits that grow on trees in tropical regions.",
)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.body.encode("utf-8")).hexdigest()[:16]

    def fill(self, **values: str) -> str:
        out = self.body
        for k, v in values.items():
            out = out.replace("{" + k + "}", v)
        return out


SELF_EVAL_TEMPLATE = PromptTemplate("self-eval", SELF_EVAL_BODY)
RAG_EVAL_TEMPLATE = PromptTemplate("rag-eval", RAG_EVAL_BODY)

_LIST_PREFIX = re.compile(r"^\s*tell me a list of\s+", re.IGNORECASE)


def question_requirements(question: str) -> str:
    """``"Tell me a list of X."`` -> ``"X"``."""
    return _LIST_PREFIX.sub("", question).strip().rstrip(".?!").strip()


# verdict parsing


def load_rules(path: str | Path | None = None) -> dict[str, list[re.Pattern]]:
    if path is None:
        raw = json.loads(resources.files("boundprobe").joinpath("verdict_rules.json").read_text(encoding="utf-8"))
    else:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return {k: [re.compile(p, re.IGNORECASE | re.MULTILINE) for p in raw.get(k, [])] for k in ("incorrect", "correct", "unverifiable")}


_DEFAULT_RULES: dict[str, list[re.Pattern]] | None = None


def _final_paragraph(text: str) -> str:
    paras = [p.strip() for p in re.split(r"\n\s*\n", text) if p.strip()]
    return paras[-1] if paras else ""


def parse_verdict(text: str, rules: Mapping[str, list[re.Pattern]] | None = None) -> Verdict | None:
    """Rule cascade on the final paragraph; ``None`` means unparseable."""
    global _DEFAULT_RULES
    if rules is None:
        if _DEFAULT_RULES is None:
            _DEFAULT_RULES = load_rules()
        rules = _DEFAULT_RULES
    para = _final_paragraph(text).replace("’", "'")
    if not para:
        return None
    for name, verdict in (("incorrect", Verdict.INCORRECT), ("correct", Verdict.CORRECT), ("unverifiable", Verdict.UNVERIFIABLE)):
        if any(p.search(para) for p in rules[name]):
            return verdict
    return None


_URL = re.compile(r"https?://[^\s<>()\[\]\"']+")


def extract_citations(text: str) -> list[str]:
    seen: list[str] = []
    for m in _URL.findall(text):
        url = m.rstrip(".,;:")
        if url not in seen:
            seen.append(url)
    return seen


# evaluation records and cache


@dataclass
class EvalRecord:
    key: str
    question_id: str
    answer: str
    evaluator: str
    template: str
    raw_response: str
    verdict: Verdict
    parse_failed: bool = False
    citations: list[str] = field(default_factory=list)
    timestamp: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRecord":
        d = dict(d)
        d["verdict"] = Verdict(d["verdict"])
        return cls(**d)


def record_key(question_id: str, answer: str, evaluator: str, template: PromptTemplate) -> str:
    parts = "\x1f".join([question_id, normalize_answer(answer), evaluator, template.digest])
    return hashlib.sha256(parts.encode("utf-8")).hexdigest()


class EvalCache:
    """Append-only JSON-lines store of :class:`EvalRecord`, optionally in memory only."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._records: dict[str, EvalRecord] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = EvalRecord.from_dict(json.loads(line))
                    self._records[rec.key] = rec

    def get(self, key: str) -> EvalRecord | None:
        return self._records.get(key)

    def put(self, rec: EvalRecord) -> None:
        with self._lock:
            self._records[rec.key] = rec
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._records)


def _evaluate(
    client: ChatClient,
    question_id: str,
    requirements: str,
    answer: str,
    tmpl: PromptTemplate,
    cache: EvalCache | None,
    retry: RetryPolicy | None,
    with_citations: bool,
    clock: Callable[[], float],
) -> EvalRecord:
    if not requirements.strip() or not answer.strip():
        raise ValueError("question requirements and answer must be nonempty")
    key = record_key(question_id, answer, client.identity, tmpl)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    prompt = tmpl.fill(ANSWER=answer.strip(), QUESTION_REQUIREMENTS=requirements.strip())
    messages = [{"role": "user", "content": prompt}]
    retry = retry or RetryPolicy()
    text = retry.call(lambda: client.complete(messages))
    verdict = parse_verdict(text)
    rec = EvalRecord(
        key=key,
        question_id=question_id,
        answer=answer,
        evaluator=client.identity,
        template=tmpl.name,
        raw_response=text,
        verdict=verdict if verdict is not None else Verdict.UNVERIFIABLE,
        parse_failed=verdict is None,
        citations=extract_citations(text) if with_citations else [],
        timestamp=clock(),
    )
    if cache is not None:
        cache.put(rec)
    return rec


def self_evaluate(
    client: ChatClient,
    question_requirements: str,
    answer: str,
    tmpl: PromptTemplate = SELF_EVAL_TEMPLATE,
    *,
    question_id: str = "",
    cache: EvalCache | None = None,
    retry: RetryPolicy | None = None,
    clock: Callable[[], float] = time.time,
) -> EvalRecord:
    return _evaluate(client, question_id, question_requirements, answer, tmpl, cache, retry, False, clock)


def rag_evaluate(
    client: ChatClient,
    question_requirements: str,
    answer: str,
    tmpl: PromptTemplate = RAG_EVAL_TEMPLATE,
    *,
    question_id: str = "",
    cache: EvalCache | None = None,
    retry: RetryPolicy | None = None,
    clock: Callable[[], float] = time.time,
) -> EvalRecord:
    return _evaluate(client, question_id, question_requirements, answer, tmpl, cache, retry, True, clock)
