import json

import pytest

import tables
from boundprobe.errors import EmptyAfterFilter
from boundprobe.metrics import NormalizedEntity
from boundprobe.verification import (
    Category,
    EvaluationPair,
    OverrideStore,
    Provenance,
    Verdict,
    categorize,
    crosstab_markdown,
    detect_boundary_admission,
    tally,
)

I, C, U = Verdict.INCORRECT, Verdict.CORRECT, Verdict.UNVERIFIABLE


def pair(self_v, truth, prov=Provenance.TARGET, name="x", qid="q1"):
    return EvaluationPair(NormalizedEntity.of(name), qid, self_v, truth, prov)


def test_categories():
    assert categorize(pair(C, I)) == {Category.UNQUALIFIED, Category.INACCURATE}
    assert categorize(pair(C, C)) == frozenset()
    assert categorize(pair(I, C, Provenance.AUXILIARY)) == {Category.HIDDEN_CORRECT, Category.UNEXPECTED_WRONG}
    assert categorize(pair(U, U)) == {Category.UNQUALIFIED}
    assert categorize(pair(U, U, Provenance.AUXILIARY)) == frozenset()


def test_target_table_realization():
    t = tally(tables.target_pairs())
    assert t.total == 10000
    assert t.unqualified_pct == pytest.approx(40.15, abs=1e-9)
    for i, row in enumerate(tables.TARGET_CELLS):
        for j, cell in enumerate(row):
            assert t.crosstab[i][j] == pytest.approx(cell, abs=1e-9)
    # off-diagonal share, which the text also reports as an inaccuracy figure
    assert t.inaccurate_pct == pytest.approx(29.73, abs=1e-9)


def test_auxiliary_table_realization():
    t = tally(tables.auxiliary_pairs())
    assert t.total == 10001  # published cells sum to 100.01
    assert abs(t.hidden_correct_pct - 75.12) <= 0.01
    assert abs(t.unexpected_wrong_pct - 62.43) <= 0.01
    assert abs(t.admission_aligned_pct - 24.92) <= 0.01


def test_all_correct_agreement():
    t = tally([pair(C, C, name=str(i)) for i in range(5)])
    assert t.cell(C, C) == 100.0
    assert (t.unqualified_pct, t.inaccurate_pct, t.hidden_correct_pct, t.unexpected_wrong_pct) == (0, 0, 0, 0)


def test_tally_filter():
    pairs = [pair(C, C), pair(I, C, Provenance.AUXILIARY)]
    assert tally(pairs, Provenance.AUXILIARY).total == 1
    with pytest.raises(EmptyAfterFilter):
        tally([pair(C, C)], Provenance.AUXILIARY)


@pytest.mark.parametrize("text,want", [
    ("I apologize for any confusion, but to the best of my knowledge, the list I provided includes all the correct answers.", True),
    ("Here are more answers: 1. Bilby", False),
    ("", False),
    ("I’m afraid I cannot think of any more.", True),
])
def test_boundary_admission(text, want):
    assert detect_boundary_admission(text) is want


def test_overrides(tmp_path):
    p = tmp_path / "labels.jsonl"
    p.write_text(json.dumps({"question_id": "q1", "answer": "Koalas", "verdict": "incorrect"}) + "\n")
    store = OverrideStore.load(p)
    fixed = store.apply(pair(C, C, name="koala"))
    assert fixed.truth_verdict is I and fixed.self_verdict is C
    untouched = pair(C, C, name="emu")
    assert store.apply(untouched) is untouched
    assert OverrideStore.load(tmp_path / "missing.jsonl").labels == {}


def test_pair_round_trip_and_markdown():
    p = pair(U, I, Provenance.AUXILIARY, name="Bilbies")
    assert EvaluationPair.from_dict(p.to_dict()) == p
    md = crosstab_markdown(tally([p]))
    assert "| Incorrect | 0.00 | 0.00 | 100.00 |" in md
