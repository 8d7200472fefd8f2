"""Run configuration: one flat YAML file, ``${VAR}`` interpolated from the environment."""

from __future__ import annotations

import os
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .dataset import COMMON_FRACTION, DEFAULT_FOLLOWUP, CollectionConfig
from .decoder import Mode, SamplerConfig
from .errors import ConfigError, ConfigInvalid
from .pipeline import DEFAULT_DISCOVERY_PROMPT
from .verification import DEFAULT_ADMISSION_KEYWORDS

_ENV = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")
# YAML keys that are not valid Python identifiers
_ALIASES = {"lambda": "lam"}


@dataclass
class RunConfig:
    # paths
    dataset_path: str = "data/dataset.jsonl"
    discovery_path: str = "data/discovery.jsonl"
    cache_path: str | None = "data/eval_cache.jsonl"
    report_dir: str = "reports"
    overrides_path: str | None = None
    replay_path: str | None = None
    # auxiliary model: a mock model directory, or a remote logits process
    model_dir: str | None = None
    model_command: str | None = None
    embedding_path: str | None = None
    vocab_path: str | None = None
    eos_token: str = "<eos>"
    unk_token: str | None = None
    # sampling
    lam: float = 80.0
    top_p: float = 0.9
    temperature: float = 0.7
    repetition_penalty: float = 1.15
    max_tokens: int = 512
    seed: int = 0
    mode: str = "suppress"
    discovery_prompt: str = DEFAULT_DISCOVERY_PROMPT
    # anchors
    include_space_variant: bool = True
    include_case_variants: bool = False
    strip_leading_articles: bool = False
    # collection
    rounds: int = 3
    common_fraction: float = COMMON_FRACTION
    followup_template: str = DEFAULT_FOLLOWUP
    domains: list[str] | None = None
    max_domains: int | None = None
    max_questions_per_domain: int | None = None
    parallelism: int = 1
    # clients
    api_url: str | None = "${BP_API_URL}"
    api_key: str | None = "${BP_API_KEY}"
    target_model: str = "gpt-4-turbo"
    self_eval_model: str = "gpt-4-turbo"
    rag_eval_model: str = "search-assistant"
    rate_limit: float | None = None
    retry_attempts: int = 3
    retry_base_delay: float = 1.0
    # metrics
    em_mode: str = "precision"
    aor_unit: str = "entity"
    admission_keywords: list[str] = field(default_factory=lambda: list(DEFAULT_ADMISSION_KEYWORDS))
    figures: bool = True

    def __post_init__(self):
        if self.em_mode not in ("precision", "recall"):
            raise ConfigError(f"em_mode must be precision or recall, got {self.em_mode!r}")
        if self.aor_unit not in ("entity", "word"):
            raise ConfigError(f"aor_unit must be entity or word, got {self.aor_unit!r}")
        if not 0 < self.common_fraction < 1:
            raise ConfigError("common_fraction must lie in (0, 1)")
        try:
            Mode(self.mode)
            self.sampler()
            self.collection()
        except (ValueError, ConfigInvalid) as exc:
            raise ConfigError(str(exc)) from exc

    def sampler(self, **overrides) -> SamplerConfig:
        base = dict(
            lam=self.lam,
            top_p=self.top_p,
            temperature=self.temperature,
            repetition_penalty=self.repetition_penalty,
            max_tokens=self.max_tokens,
            seed=self.seed,
            mode=Mode(self.mode),
        )
        base.update(overrides)
        return SamplerConfig(**base)

    def collection(self) -> CollectionConfig:
        return CollectionConfig(rounds=self.rounds, followup_template=self.followup_template)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def public_dict(self) -> dict:
        """Settings that shape results; secrets and paths excluded."""
        skip = {"api_key", "api_url"}
        return {k: v for k, v in asdict(self).items() if k not in skip and not k.endswith(("_path", "_dir"))}


def interpolate(value: Any, env: dict[str, str] | None = None) -> Any:
    env = os.environ if env is None else env
    if isinstance(value, str):
        out = _ENV.sub(lambda m: env.get(m.group(1), m.group(2) or ""), value)
        return out if out != "" or value == "" else None
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    return value


def load_config(path: str | Path | None = None, env: dict[str, str] | None = None, **overrides) -> RunConfig:
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a mapping of flat keys")
        raw = loaded
    known = {f.name for f in fields(RunConfig)}
    values: dict[str, Any] = {}
    unknown = []
    for key, val in raw.items():
        name = _ALIASES.get(key, key)
        if name not in known:
            unknown.append(key)
            continue
        values[name] = val
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("api_url", "api_key"):
        values.setdefault(key, getattr(RunConfig, key))
    values = {k: interpolate(v, env) for k, v in values.items()}
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
