"""Sampling loop for the auxiliary model with logit suppression.

Per step the order is fixed: raw logits, suppression, repetition penalty,
temperature, softmax, nucleus truncation, categorical draw.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import ConfigInvalid, DegenerateDistribution, DimensionMismatch, ModelStepFailure
from .linalg import (
    DEFAULT_LAMBDA,
    EmbeddingMatrix,
    SuppressionPlan,
    adjust_logits,
    adjust_logits_mask,
    read_embd,
    write_embd,
)


class Mode(str, enum.Enum):
    SUPPRESS = "suppress"
    MASK = "mask"
    PROMPT = "prompt"


@dataclass(frozen=True)
class SamplerConfig:
    lam: float = DEFAULT_LAMBDA
    top_p: float = 0.9
    temperature: float = 0.7
    repetition_penalty: float = 1.15
    max_tokens: int = 512
    seed: int = 0
    mode: Mode = Mode.SUPPRESS

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.lam >= 0:
            raise ConfigInvalid(f"lambda must be >= 0, got {self.lam}")
        if not 0 < self.top_p <= 1:
            raise ConfigInvalid(f"top_p must lie in (0, 1], got {self.top_p}")
        if not self.temperature > 0:
            raise ConfigInvalid(f"temperature must be > 0, got {self.temperature}")
        if not self.repetition_penalty >= 1:
            raise ConfigInvalid(f"repetition_penalty must be >= 1, got {self.repetition_penalty}")
        if self.max_tokens < 1:
            raise ConfigInvalid("max_tokens must be >= 1")


@runtime_checkable
class LanguageModel(Protocol):
    embedding: EmbeddingMatrix
    eos_token: int

    @property
    def vocab_size(self) -> int: ...

    def step(self, context: Sequence[int]) -> np.ndarray: ...


class MockLanguageModel:
    """Bigram-style test double: ``step(c) = E @ H[c[-1]]``.

    ``hidden`` holds one hidden vector per token id; the context map looks
    only at the last token.  A custom ``context_map`` may replace the table.
    """

    def __init__(
        self,
        embedding: EmbeddingMatrix,
        hidden: np.ndarray | None = None,
        eos_token: int = 0,
        context_map: Callable[[Sequence[int]], np.ndarray] | None = None,
    ):
        if hidden is None and context_map is None:
            raise ValueError("need a hidden table or a context_map")
        self.embedding = embedding
        self.eos_token = int(eos_token)
        self.hidden = None
        if hidden is not None:
            h = np.array(hidden, dtype=np.float64)
            if h.shape != (embedding.rows, embedding.cols):
                raise DimensionMismatch(f"hidden table must be {embedding.shape}, got {h.shape}")
            h.flags.writeable = False
            self.hidden = h
        self._context_map = context_map

    @property
    def vocab_size(self) -> int:
        return self.embedding.rows

    def context_map(self, context: Sequence[int]) -> np.ndarray:
        if self._context_map is not None:
            return np.asarray(self._context_map(context), dtype=np.float64)
        return self.hidden[context[-1]]

    def step(self, context: Sequence[int]) -> np.ndarray:
        return self.embedding.data @ self.context_map(context)

    @classmethod
    def random(cls, vocab_size: int, dim: int, seed: int = 0, eos_token: int = 0) -> "MockLanguageModel":
        rng = np.random.default_rng(seed)
        E = EmbeddingMatrix(rng.standard_normal((vocab_size, dim)))
        H = rng.standard_normal((vocab_size, dim)) / np.sqrt(dim)
        return cls(E, H, eos_token=eos_token)

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.embedding.save(d / "head.embd")
        write_embd(d / "hidden.embd", self.hidden)
        (d / "model.json").write_text(json.dumps({"eos_token": self.eos_token}) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "MockLanguageModel":
        d = Path(directory)
        meta = json.loads((d / "model.json").read_text())
        return cls(EmbeddingMatrix.load(d / "head.embd"), read_embd(d / "hidden.embd"), eos_token=meta["eos_token"])


def apply_repetition_penalty(logits, history, penalty: float) -> np.ndarray:
    """Divide positive / multiply non-positive logits of tokens seen in ``history``."""
    out = np.array(logits, dtype=np.float64, copy=True)
    if penalty == 1 or not history:
        return out
    seen = np.fromiter(set(int(t) for t in history), dtype=np.int64)
    vals = out[seen]
    out[seen] = np.where(vals > 0, vals / penalty, vals * penalty)
    return out


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    finite = np.isfinite(z)
    if not finite.any():
        raise DegenerateDistribution("no finite logits")
    z = np.where(finite, z, -np.inf)
    e = np.exp(z - z[finite].max())
    return e / e.sum()


def nucleus_support(probs, top_p: float) -> np.ndarray:
    """Token ids kept by nucleus truncation, in descending-probability order.

    Ties are broken by ascending token id.
    """
    p = np.asarray(probs, dtype=np.float64)
    if not np.all(np.isfinite(p)) or p.sum() <= 0:
        raise DegenerateDistribution("probabilities are all zero or not finite")
    order = np.argsort(-p, kind="stable")
    cum = np.cumsum(p[order])
    k = int(np.searchsorted(cum, top_p * cum[-1], side="left")) + 1
    return order[: min(k, len(order))]


def nucleus_sample(probs, top_p: float, rng: np.random.Generator) -> int:
    if not 0 < top_p <= 1:
        raise ConfigInvalid(f"top_p must lie in (0, 1], got {top_p}")
    p = np.asarray(probs, dtype=np.float64)
    keep = nucleus_support(p, top_p)
    kept = p[keep]
    cum = np.cumsum(kept)
    u = rng.random() * cum[-1]
    idx = int(np.searchsorted(cum, u, side="right"))
    return int(keep[min(idx, len(keep) - 1)])


@dataclass
class StepTrace:
    raw: np.ndarray
    suppressed: np.ndarray
    token: int


@dataclass
class DecodeResult:
    tokens: list[int]
    text: str = ""
    stopped_by_eos: bool = False
    trace: list[StepTrace] = field(default_factory=list)


def suppress_logits(y1: np.ndarray, plan: SuppressionPlan | None, cfg: SamplerConfig) -> np.ndarray:
    if cfg.mode is Mode.PROMPT or plan is None:
        return np.asarray(y1, dtype=np.float64)
    if cfg.mode is Mode.SUPPRESS:
        return adjust_logits(np.asarray(y1, dtype=np.float64), plan.delta_y, cfg.lam)
    return adjust_logits_mask(np.asarray(y1, dtype=np.float64), plan.mass, cfg.lam)


def decode(
    model: LanguageModel,
    prompt_tokens: Sequence[int],
    plan: SuppressionPlan | None,
    cfg: SamplerConfig,
    detokenize: Callable[[Sequence[int]], str] | None = None,
    record_trace: bool = False,
) -> DecodeResult:
    if not prompt_tokens:
        raise ConfigInvalid("prompt must be nonempty")
    if cfg.mode is not Mode.PROMPT and plan is None:
        raise ConfigInvalid(f"mode {cfg.mode.value!r} needs a suppression plan")
    if cfg.mode is Mode.PROMPT and plan is not None:
        raise ConfigInvalid("prompt-only mode takes no suppression plan")
    if plan is not None and plan.delta_y.shape != (model.vocab_size,):
        raise DimensionMismatch("plan built for a different vocabulary")

    rng = np.random.default_rng(cfg.seed)
    context = list(prompt_tokens)
    generated: list[int] = []
    trace: list[StepTrace] = []
    eos = False
    for step in range(cfg.max_tokens):
        try:
            raw = np.asarray(model.step(context), dtype=np.float64)
        except Exception as exc:  # noqa: BLE001 - rewrapped with the step index
            raise ModelStepFailure(step, exc) from exc
        if raw.shape != (model.vocab_size,):
            raise ModelStepFailure(step, f"logits of shape {raw.shape}, expected ({model.vocab_size},)")
        adjusted = suppress_logits(raw, plan, cfg)
        z = apply_repetition_penalty(adjusted, generated, cfg.repetition_penalty)
        probs = softmax(z / cfg.temperature)
        token = nucleus_sample(probs, cfg.top_p, rng)
        if record_trace:
            trace.append(StepTrace(raw, adjusted, token))
        if token == model.eos_token:
            eos = True
            break
        generated.append(token)
        context.append(token)
    text = detokenize(generated) if detokenize is not None else ""
    return DecodeResult(generated, text, eos, trace)
