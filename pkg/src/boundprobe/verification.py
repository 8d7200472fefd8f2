"""Verdict comparison, the four answer categories, and their cross-tabulation."""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyAfterFilter
from .metrics import NormalizedEntity, normalize_answer


class Verdict(str, enum.Enum):
    INCORRECT = "incorrect"
    CORRECT = "correct"
    UNVERIFIABLE = "unverifiable"


VERDICT_ORDER = (Verdict.INCORRECT, Verdict.CORRECT, Verdict.UNVERIFIABLE)


class Provenance(str, enum.Enum):
    TARGET = "target"  # produced by the target model
    AUXILIARY = "auxiliary"  # discovered by the auxiliary model


class Category(str, enum.Enum):
    UNQUALIFIED = "unqualified"
    INACCURATE = "inaccurate"
    HIDDEN_CORRECT = "hidden_correct"
    UNEXPECTED_WRONG = "unexpected_wrong"


@dataclass(frozen=True)
class EvaluationPair:
    answer: NormalizedEntity
    question_id: str
    self_verdict: Verdict
    truth_verdict: Verdict
    provenance: Provenance

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "answer": self.answer.surface,
            "norm": self.answer.norm,
            "self_verdict": self.self_verdict.value,
            "truth_verdict": self.truth_verdict.value,
            "provenance": self.provenance.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationPair":
        return cls(
            NormalizedEntity(d["answer"], d.get("norm") or normalize_answer(d["answer"])),
            d["question_id"],
            Verdict(d["self_verdict"]),
            Verdict(d["truth_verdict"]),
            Provenance(d["provenance"]),
        )


def categorize(pair: EvaluationPair) -> frozenset[Category]:
    flags = set()
    disagree = pair.self_verdict != pair.truth_verdict
    if pair.provenance is Provenance.TARGET:
        if pair.truth_verdict is not Verdict.CORRECT:
            flags.add(Category.UNQUALIFIED)
        if disagree:
            flags.add(Category.INACCURATE)
    else:
        if pair.truth_verdict is Verdict.CORRECT:
            flags.add(Category.HIDDEN_CORRECT)
        if disagree:
            flags.add(Category.UNEXPECTED_WRONG)
    return frozenset(flags)


@dataclass
class CategoryTally:
    """Percentages over ``total`` pairs; crosstab rows = truth, cols = self."""

    total: int
    crosstab: list[list[float]]
    counts: list[list[int]]
    unqualified_pct: float
    inaccurate_pct: float
    hidden_correct_pct: float
    unexpected_wrong_pct: float
    admission_aligned_pct: float
    provenance: str | None = None

    def cell(self, truth: Verdict, self_verdict: Verdict) -> float:
        return self.crosstab[VERDICT_ORDER.index(truth)][VERDICT_ORDER.index(self_verdict)]

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "total": self.total,
            "rows": [v.value for v in VERDICT_ORDER],
            "cols": [v.value for v in VERDICT_ORDER],
            "counts": self.counts,
            "crosstab_pct": [[round(x, 6) for x in row] for row in self.crosstab],
            "unqualified_pct": round(self.unqualified_pct, 6),
            "inaccurate_pct": round(self.inaccurate_pct, 6),
            "hidden_correct_pct": round(self.hidden_correct_pct, 6),
            "unexpected_wrong_pct": round(self.unexpected_wrong_pct, 6),
            "admission_aligned_pct": round(self.admission_aligned_pct, 6),
        }


def tally(pairs: Iterable[EvaluationPair], provenance: Provenance | None = None) -> CategoryTally:
    selected = [p for p in pairs if provenance is None or p.provenance is provenance]
    if not selected:
        raise EmptyAfterFilter(f"no pairs with provenance {provenance}")
    n = len(selected)
    counts = [[0] * 3 for _ in range(3)]
    flags: Counter = Counter()
    admitted = 0
    for p in selected:
        counts[VERDICT_ORDER.index(p.truth_verdict)][VERDICT_ORDER.index(p.self_verdict)] += 1
        flags.update(categorize(p))
        if p.provenance is Provenance.AUXILIARY and p.self_verdict is Verdict.UNVERIFIABLE:
            admitted += 1
    pct = lambda k: 100.0 * k / n  # noqa: E731
    return CategoryTally(
        total=n,
        crosstab=[[pct(c) for c in row] for row in counts],
        counts=counts,
        unqualified_pct=pct(flags[Category.UNQUALIFIED]),
        inaccurate_pct=pct(flags[Category.INACCURATE]),
        hidden_correct_pct=pct(flags[Category.HIDDEN_CORRECT]),
        unexpected_wrong_pct=pct(flags[Category.UNEXPECTED_WRONG]),
        admission_aligned_pct=pct(admitted),
        provenance=provenance.value if provenance else None,
    )


DEFAULT_ADMISSION_KEYWORDS = (
    "i apologize",
    "i'm afraid",
    "to the best of my knowledge, the list i provided includes all",
)


def detect_boundary_admission(response_text: str, keywords: Sequence[str] = DEFAULT_ADMISSION_KEYWORDS) -> bool:
    text = response_text.lower().replace("’", "'")
    return any(k.lower() in text for k in keywords)


@dataclass
class OverrideStore:
    """Human-confirmed verdicts keyed by ``(question_id, normalized answer)``."""

    labels: dict[tuple[str, str], Verdict] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None) -> "OverrideStore":
        store = cls()
        if path is None or not Path(path).exists():
            return store
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                store.labels[(row["question_id"], normalize_answer(row["answer"]))] = Verdict(row["verdict"])
        return store

    def apply(self, pair: EvaluationPair) -> EvaluationPair:
        label = self.labels.get((pair.question_id, pair.answer.norm))
        if label is None or label is pair.truth_verdict:
            return pair
        return EvaluationPair(pair.answer, pair.question_id, pair.self_verdict, label, pair.provenance)


def crosstab_markdown(t: CategoryTally, self_label: str = "Self-evaluation") -> str:
    head = f"| Ground truth \\ {self_label} | Incorrect | Correct | Unverifiable |"
    lines = [head, "|---|---:|---:|---:|"]
    for i, v in enumerate(VERDICT_ORDER):
        cells = " | ".join(f"{x:.2f}" for x in t.crosstab[i])
        lines.append(f"| {v.value.capitalize()} | {cells} |")
    return "\n".join(lines)
