"""Anchor-token extraction: the first token of each known answer entity."""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence, runtime_checkable

from .errors import EmptyEntityList, EmptyEntityWarning, TokenOutOfRange
from .linalg import AnswerMassVector, build_answer_mass

_LEADING_ARTICLE = re.compile(r"^(the|a|an)\s+", re.IGNORECASE)


@runtime_checkable
class Tokenizer(Protocol):
    vocab_size: int

    def encode(self, text: str) -> list[int]: ...

    def decode(self, ids: Sequence[int]) -> str: ...


class VocabTokenizer:
    """Greedy longest-match tokenizer over a fixed list of token strings.

    Loadable from a file with one token per line.  Escapes ``\\n``, ``\\t`` and
    ``\\s`` (space) are honoured so that whitespace tokens survive a text file.
    Characters with no matching token fall back to ``unk_token`` if given.
    """

    def __init__(self, tokens: Sequence[str], unk_token: str | None = None, eos_token: str | None = None):
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate token strings in vocabulary")
        if any(t == "" for t in tokens):
            raise ValueError("empty token string in vocabulary")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self._max_len = max(len(t) for t in self.tokens)
        self.unk_id = self.index[unk_token] if unk_token is not None else None
        self.eos_id = self.index[eos_token] if eos_token is not None else None

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        i = 0
        while i < len(text):
            for j in range(min(len(text), i + self._max_len), i, -1):
                tid = self.index.get(text[i:j])
                if tid is not None and tid != self.eos_id:
                    ids.append(tid)
                    i = j
                    break
            else:
                if self.unk_id is None:
                    raise TokenOutOfRange(f"no token covers {text[i]!r} at offset {i}")
                ids.append(self.unk_id)
                i += 1
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.tokens[i] for i in ids if i != self.eos_id)

    @classmethod
    def from_file(cls, path: str | Path, unk_token: str | None = None, eos_token: str | None = None) -> "VocabTokenizer":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls([_unescape(t) for t in lines], unk_token=unk_token, eos_token=eos_token)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(_escape(t) + "\n" for t in self.tokens), encoding="utf-8")


def _escape(tok: str) -> str:
    return tok.replace("\\", "\\\\").replace("\n", "\\n").replace("\t", "\\t").replace(" ", "\\s")


def _unescape(tok: str) -> str:
    out, i = [], 0
    table = {"n": "\n", "t": "\t", "s": " ", "\\": "\\"}
    while i < len(tok):
        c = tok[i]
        if c == "\\" and i + 1 < len(tok) and tok[i + 1] in table:
            out.append(table[tok[i + 1]])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


@dataclass(frozen=True)
class AnchorSet:
    token_ids: tuple[int, ...]
    source_entities: dict[int, list[str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.token_ids)

    def __contains__(self, tid: int) -> bool:
        return tid in self.source_entities


def _surface_variants(entity: str, include_case_variants: bool) -> list[str]:
    forms = [entity]
    if include_case_variants:
        for v in (entity.lower(), entity[:1].upper() + entity[1:], entity.capitalize()):
            if v not in forms:
                forms.append(v)
    return forms


def extract_anchors(
    entities: Iterable[str],
    tok: Tokenizer,
    include_space_variant: bool = True,
    include_case_variants: bool = False,
    strip_leading_articles: bool = False,
) -> AnchorSet:
    entities = list(entities)
    if not entities:
        raise EmptyEntityList("no entities given")

    order: list[int] = []
    sources: dict[int, list[str]] = {}
    used = 0
    for raw in entities:
        entity = raw.strip()
        if strip_leading_articles:
            entity = _LEADING_ARTICLE.sub("", entity)
        if not entity:
            warnings.warn(f"skipping empty entity {raw!r}", EmptyEntityWarning, stacklevel=2)
            continue
        used += 1
        for form in _surface_variants(entity, include_case_variants):
            texts = [form, " " + form] if include_space_variant else [form]
            for text in texts:
                ids = tok.encode(text)
                if not ids:
                    raise TokenOutOfRange(f"tokenizer returned nothing for {text!r}")
                first = ids[0]
                if not 0 <= first < tok.vocab_size:
                    raise TokenOutOfRange(f"token {first} outside vocabulary")
                if first not in sources:
                    order.append(first)
                    sources[first] = []
                if raw not in sources[first]:
                    sources[first].append(raw)
    if used == 0:
        raise EmptyEntityList("every entity was empty after trimming")
    return AnchorSet(tuple(order), sources)


def anchors_to_mass(anchors: AnchorSet, vocab_size: int) -> AnswerMassVector:
    return build_answer_mass(anchors.token_ids, vocab_size)
