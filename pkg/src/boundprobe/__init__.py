"""Knowledge-boundary probing for semi-open-ended questions.

A target model answers list questions over several rounds; an auxiliary
model is steered away from the known answers by suppressing their semantic
direction in the output head, and every low-frequency or newly found answer
is checked by self-evaluation and retrieval-backed evaluation.
"""

from .anchors import AnchorSet, VocabTokenizer, extract_anchors
from .clients import (
    HTTPChatClient,
    MockChatClient,
    RecordingChatClient,
    ReplayChatClient,
    parse_verdict,
    rag_evaluate,
    self_evaluate,
)
from .dataset import QuestionRecord, extract_entities, split_common_ambiguous
from .decoder import Mode, MockLanguageModel, SamplerConfig, decode
from .linalg import (
    AnswerMassVector,
    EmbeddingMatrix,
    SuppressionPlan,
    adjust_logits,
    build_answer_mass,
    estimate_semantics,
    project_suppression,
)
from .metrics import (
    MetricReport,
    answer_overlap_rate,
    bleu_n,
    exact_match,
    f1_word_overlap,
    normalize_answer,
)
from .verification import CategoryTally, EvaluationPair, Provenance, Verdict, categorize, tally

__version__ = "0.1.0"
