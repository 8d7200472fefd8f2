"""Verdict multisets realizing the published cross-tab cells."""

from boundprobe.metrics import NormalizedEntity
from boundprobe.verification import VERDICT_ORDER, EvaluationPair, Provenance

# rows: ground truth, columns: self-evaluation; order incorrect, correct, unverifiable
TARGET_CELLS = [[20.98, 8.37, 2.25], [9.30, 47.77, 2.78], [3.30, 3.73, 1.52]]
AUXILIARY_CELLS = [[0.04, 9.53, 11.31], [23.97, 37.54, 13.61], [3.18, 0.83, 0.00]]


def realize(cells, provenance):
    """One pair per 0.01 percentage point of every cell."""
    pairs = []
    for i, truth in enumerate(VERDICT_ORDER):
        for j, judged in enumerate(VERDICT_ORDER):
            for k in range(round(cells[i][j] * 100)):
                name = f"a{i}{j}-{k}"
                pairs.append(EvaluationPair(NormalizedEntity.of(name), f"q{k % 97}", judged, truth, provenance))
    return pairs


def target_pairs():
    return realize(TARGET_CELLS, Provenance.TARGET)


def auxiliary_pairs():
    return realize(AUXILIARY_CELLS, Provenance.AUXILIARY)
