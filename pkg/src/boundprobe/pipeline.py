"""End-to-end steps: discovery with the auxiliary model and dual evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .anchors import Tokenizer, extract_anchors
from .clients import (
    RAG_EVAL_TEMPLATE,
    SELF_EVAL_TEMPLATE,
    ChatClient,
    EvalCache,
    PromptTemplate,
    RetryPolicy,
    question_requirements,
    rag_evaluate,
    self_evaluate,
)
from .dataset import DEFAULT_FOLLOWUP, QuestionRecord, extract_entities
from .decoder import LanguageModel, Mode, SamplerConfig, decode
from .errors import EmptyInput, NoEntitiesFound
from .linalg import SuppressionPlan
from .metrics import (
    MetricReport,
    answer_overlap_rate,
    bleu_n,
    exact_match,
    f1_word_overlap,
    normalize_answer,
)
from .verification import EvaluationPair, OverrideStore, Provenance, Verdict
from .metrics import NormalizedEntity

log = logging.getLogger(__name__)

DEFAULT_DISCOVERY_PROMPT = DEFAULT_FOLLOWUP + "\n- "


@dataclass
class DiscoveryRecord:
    question_id: str
    mode: str
    lam: float
    seed: int
    text: str
    entities: list[str]  # every entity parsed from the generation
    novel: list[str]  # entities whose normalized form is not in the known answers
    anchor_ids: list[int] = field(default_factory=list)
    anchor_emissions: int = 0
    aor: float | None = None
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscoveryRecord":
        return cls(**d)


def discovery_prompt(record: QuestionRecord, template: str = DEFAULT_DISCOVERY_PROMPT) -> str:
    return template.replace("{REQUIREMENTS}", question_requirements(record.question))


def _parse_generation(prompt: str, text: str) -> list[str]:
    # the prompt may open the list item the model is completing
    tail = prompt[prompt.rfind("\n") + 1 :] if "\n" in prompt else ""
    try:
        return extract_entities([tail + text])
    except NoEntitiesFound:
        return []


def build_plan(model: LanguageModel, tok: Tokenizer, entities: Sequence[str], include_space_variant: bool = True,
               include_case_variants: bool = False, strip_leading_articles: bool = False) -> SuppressionPlan:
    anchors = extract_anchors(
        entities,
        tok,
        include_space_variant=include_space_variant,
        include_case_variants=include_case_variants,
        strip_leading_articles=strip_leading_articles,
    )
    return SuppressionPlan.build(model.embedding, anchors.token_ids, sources=anchors.source_entities)


def discover_question(
    model: LanguageModel,
    tok: Tokenizer,
    record: QuestionRecord,
    cfg: SamplerConfig,
    prompt_template: str = DEFAULT_DISCOVERY_PROMPT,
    plan: SuppressionPlan | None = None,
    aor_unit: str = "entity",
    **anchor_flags,
) -> DiscoveryRecord:
    if not record.entities:
        raise EmptyInput(f"{record.id} has no known answers")
    if plan is None:
        plan = build_plan(model, tok, record.entities, **anchor_flags)
    prompt = discovery_prompt(record, prompt_template)
    result = decode(
        model,
        tok.encode(prompt),
        None if cfg.mode is Mode.PROMPT else plan,
        cfg,
        detokenize=tok.decode,
    )
    entities = _parse_generation(prompt, result.text)
    known = {normalize_answer(e) for e in record.entities}
    novel = [e for e in entities if normalize_answer(e) not in known]
    anchor_set = set(plan.anchors)
    return DiscoveryRecord(
        question_id=record.id,
        mode=cfg.mode.value,
        lam=cfg.lam,
        seed=cfg.seed,
        text=result.text,
        entities=entities,
        novel=novel,
        anchor_ids=list(plan.anchors),
        anchor_emissions=sum(1 for t in result.tokens if t in anchor_set),
        aor=answer_overlap_rate(entities, record.entities, unit=aor_unit) if entities else None,
    )


def save_discoveries(path: str | Path, records: Sequence[DiscoveryRecord]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")


def load_discoveries(path: str | Path) -> list[DiscoveryRecord]:
    return [DiscoveryRecord.from_dict(json.loads(x)) for x in Path(path).read_text(encoding="utf-8").splitlines() if x.strip()]


# evaluation


def score_discovery(
    rec: QuestionRecord,
    disc: DiscoveryRecord,
    pairs: Sequence[EvaluationPair],
    em_mode: str = "precision",
    aor_unit: str = "entity",
) -> MetricReport:
    """Metrics for one question's discovered entities.

    The verified set is every evaluated answer of the question whose truth
    verdict is Correct; BLEU compares the newline-joined entity lists.
    """
    verified = [p.answer.surface for p in pairs if p.question_id == rec.id and p.truth_verdict is Verdict.CORRECT]
    try:
        em = exact_match(disc.entities, verified, mode=em_mode)
    except EmptyInput:
        em = 0.0
    f1 = f1_word_overlap(disc.entities, verified) if verified else 0.0
    candidate = "\n".join(disc.entities)
    reference = "\n".join(rec.entities)
    return MetricReport(
        em=em,
        f1=f1,
        aor=answer_overlap_rate(disc.entities, rec.entities, unit=aor_unit),
        bleu=tuple(bleu_n(candidate, reference, n) for n in range(1, 5)),
    )


@dataclass
class EvaluationOutcome:
    pairs: list[EvaluationPair]
    per_question: dict[str, MetricReport]
    failures: list[str]

    @property
    def metrics(self) -> MetricReport | None:
        return MetricReport.mean(list(self.per_question.values())) if self.per_question else None


def evaluate_answers(
    records: Sequence[QuestionRecord],
    discoveries: Sequence[DiscoveryRecord],
    self_client: ChatClient,
    rag_client: ChatClient,
    cache: EvalCache | None = None,
    overrides: OverrideStore | None = None,
    retry: RetryPolicy | None = None,
    self_template: PromptTemplate = SELF_EVAL_TEMPLATE,
    rag_template: PromptTemplate = RAG_EVAL_TEMPLATE,
    em_mode: str = "precision",
    aor_unit: str = "entity",
    clock=lambda: 0.0,
) -> EvaluationOutcome:
    """Self- and RAG-evaluate ambiguous and discovered answers, then score discoveries.

    Ground truth for EM/F1 is the set of answers (target-ambiguous or
    discovered) whose final truth verdict is Correct.
    """
    overrides = overrides or OverrideStore()
    by_question = {d.question_id: d for d in discoveries}
    pairs: list[EvaluationPair] = []
    failures: list[str] = []
    per_question: dict[str, MetricReport] = {}

    for rec in records:
        reqs = question_requirements(rec.question)
        disc = by_question.get(rec.id)
        todo = [(a, Provenance.TARGET) for a in rec.ambiguous]
        if disc is not None:
            todo += [(a, Provenance.AUXILIARY) for a in disc.novel]
        q_pairs = []
        for answer, prov in todo:
            try:
                s = self_evaluate(self_client, reqs, answer, self_template, question_id=rec.id, cache=cache, retry=retry, clock=clock)
                r = rag_evaluate(rag_client, reqs, answer, rag_template, question_id=rec.id, cache=cache, retry=retry, clock=clock)
            except Exception as exc:  # noqa: BLE001 - recorded as a gap in the report
                log.warning("%s / %r: evaluation failed: %s", rec.id, answer, exc)
                failures.append(f"{rec.id}: {answer}: {exc}")
                continue
            pair = EvaluationPair(NormalizedEntity.of(answer), rec.id, s.verdict, r.verdict, prov)
            q_pairs.append(overrides.apply(pair))
        pairs.extend(q_pairs)

        if disc is not None and disc.entities:
            per_question[rec.id] = score_discovery(rec, disc, q_pairs, em_mode, aor_unit)
    return EvaluationOutcome(pairs, per_question, failures)
