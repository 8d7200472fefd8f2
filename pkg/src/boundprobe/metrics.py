"""Answer normalization and the discovery metrics: EM, F1, AOR, BLEU-1..4."""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .errors import EmptyInput, EmptyResponse

IRREGULAR_PLURALS = {
    "mice": "mouse",
    "geese": "goose",
    "children": "child",
    "feet": "foot",
    "teeth": "tooth",
    "people": "person",
}
_ES_SUFFIXES = ("ses", "xes", "zes", "ches", "shes")
# words ending in these keep their final "s"
_S_KEEP = ("ss", "us", "is")

_TRAILING = string.punctuation + string.whitespace


def singularize(word: str) -> str:
    if word in IRREGULAR_PLURALS:
        return IRREGULAR_PLURALS[word]
    if len(word) > 3 and word.endswith("ies"):
        return word[:-3] + "y"
    for suf in _ES_SUFFIXES:
        if word.endswith(suf) and len(word) > len(suf):
            return word[:-2]
    if word.endswith("s") and len(word) > 3 and not word.endswith(_S_KEEP):
        return word[:-1]
    return word


def _normalize_once(s: str) -> str:
    s = s.lower().rstrip(_TRAILING).strip()
    return " ".join(singularize(w) for w in s.split())


def normalize_answer(s: str) -> str:
    """Lowercase, trim, drop terminal punctuation, singularize every word.

    Applied until a fixpoint so the result is stable under re-normalization.
    """
    prev = s
    for _ in range(16):
        cur = _normalize_once(prev)
        if cur == prev:
            return cur
        prev = cur
    return prev


@dataclass(frozen=True)
class NormalizedEntity:
    surface: str
    norm: str

    @classmethod
    def of(cls, surface: str) -> "NormalizedEntity":
        return cls(surface, normalize_answer(surface))


def exact_match(response_entities: Sequence[str], verified_ambiguous: Iterable[str], mode: str = "precision") -> float:
    """Share of response entities that are verified ambiguous answers.

    ``mode="recall"`` instead reports the share of verified answers that appear
    in the response.
    """
    if not response_entities:
        raise EmptyResponse("response has no entities")
    verified = {normalize_answer(v) for v in verified_ambiguous}
    if mode == "precision":
        hits = sum(1 for e in response_entities if normalize_answer(e) in verified)
        return hits / len(response_entities)
    if mode == "recall":
        if not verified:
            raise EmptyInput("no verified answers")
        seen = {normalize_answer(e) for e in response_entities}
        return len(verified & seen) / len(verified)
    raise ValueError(f"unknown em mode {mode!r}")


def _word_bag(entities: Iterable[str]) -> Counter:
    bag: Counter = Counter()
    for e in entities:
        bag.update(normalize_answer(e).split())
    return bag


def f1_word_overlap(response_entities: Sequence[str], verified_ambiguous: Iterable[str]) -> float:
    verified = list(verified_ambiguous)
    if not response_entities or not verified:
        raise EmptyInput("F1 needs a nonempty response and reference")
    pred, gold = _word_bag(response_entities), _word_bag(verified)
    common = sum((pred & gold).values())
    if common == 0:
        return 0.0
    precision = common / sum(pred.values())
    recall = common / sum(gold.values())
    return 2 * precision * recall / (precision + recall)


def answer_overlap_rate(new_entities: Sequence[str], reference_entities: Iterable[str], unit: str = "entity") -> float:
    """Fraction of new answers that duplicate the reference list.

    ``unit="word"`` counts words of the new answers found among reference words.
    """
    if not new_entities:
        raise EmptyInput("no new entities")
    reference = list(reference_entities)
    if unit == "entity":
        ref = {normalize_answer(r) for r in reference}
        return sum(1 for e in new_entities if normalize_answer(e) in ref) / len(new_entities)
    if unit == "word":
        ref_words = set(_word_bag(reference))
        words = [w for e in new_entities for w in normalize_answer(e).split()]
        if not words:
            raise EmptyInput("new entities contain no words")
        return sum(1 for w in words if w in ref_words) / len(words)
    raise ValueError(f"unknown AOR unit {unit!r}")


_PUNCT_RE = re.compile(f"[{re.escape(string.punctuation)}]")


def bleu_tokens(text: str) -> list[str]:
    return _PUNCT_RE.sub(" ", text.lower()).split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidate: str, reference: str, n: int = 4) -> float:
    """Cumulative BLEU-n (uniform weights, single reference, no smoothing)."""
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    cand, ref = bleu_tokens(candidate), bleu_tokens(reference)
    if not cand:
        raise EmptyInput("candidate has no tokens")
    if not ref:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        c_grams = _ngrams(cand, k)
        total = sum(c_grams.values())
        if total == 0:
            return 0.0
        clipped = sum((c_grams & _ngrams(ref, k)).values())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    c, r = len(cand), len(ref)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_sum / n)


@dataclass
class MetricReport:
    em: float
    f1: float
    aor: float
    bleu: tuple[float, float, float, float]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bleu"] = list(self.bleu)
        return d

    @classmethod
    def mean(cls, reports: Sequence["MetricReport"]) -> "MetricReport":
        if not reports:
            raise EmptyInput("no reports to average")
        k = len(reports)
        return cls(
            em=sum(r.em for r in reports) / k,
            f1=sum(r.f1 for r in reports) / k,
            aor=sum(r.aor for r in reports) / k,
            bleu=tuple(sum(r.bleu[i] for r in reports) / k for i in range(4)),
        )
