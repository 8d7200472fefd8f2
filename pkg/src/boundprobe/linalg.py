"""Least-squares semantic suppression against an output embedding head.

The head ``E`` maps a hidden state ``x`` (length ``d``) to vocabulary logits
``E @ x`` (length ``|V|``).  Given the anchor tokens of answers that are
already known, we build a uniform mass vector over them, find the hidden
direction that best explains that mass in the least-squares sense, and map it
back to vocabulary space.  The result is subtracted from the logits at every
decoding step.

``E`` is factorized once (thin QR with column pivoting); the pseudo-inverse is
never materialized.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    EmbeddingFormatError,
    EmptyAnchorSet,
    RankDeficientWarning,
    TokenOutOfRange,
)

DEFAULT_LAMBDA = 80.0
RANK_RTOL = 1e-10
AUTO_RIDGE = 1e-6

_MAGIC = b"EMBD"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQB")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class _PivotedQR:
    q: np.ndarray  # |V| x d, orthonormal columns
    r: np.ndarray  # d x d, upper triangular
    perm: np.ndarray  # E[:, perm] = q @ r
    rank: int


class EmbeddingMatrix:
    """Immutable output head ``E`` (rows = tokens, columns = hidden dims)."""

    def __init__(self, data: np.ndarray):
        a = np.array(data, dtype=np.float64, copy=True)
        if a.ndim != 2:
            raise DimensionMismatch(f"embedding must be 2-D, got shape {a.shape}")
        rows, cols = a.shape
        if cols < 1 or rows < cols:
            raise DimensionMismatch(f"need |V| >= d >= 1, got {rows} x {cols}")
        if not np.all(np.isfinite(a)):
            raise ValueError("embedding contains non-finite entries")
        self._data = _frozen(a)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape

    @cached_property
    def factorization(self) -> _PivotedQR:
        q, r, perm = scipy.linalg.qr(self._data, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        rank = int(np.sum(diag > RANK_RTOL * diag[0])) if diag[0] > 0 else 0
        return _PivotedQR(_frozen(q), _frozen(r), _frozen(perm), rank)

    @property
    def rank(self) -> int:
        return self.factorization.rank

    @property
    def full_rank(self) -> bool:
        return self.rank == self.cols

    def reconstruct(self) -> np.ndarray:
        f = self.factorization
        out = np.empty_like(self._data)
        out[:, f.perm] = f.q @ f.r
        return out

    def __matmul__(self, other):
        return self._data @ other

    def __repr__(self) -> str:
        return f"EmbeddingMatrix({self.rows}x{self.cols}, rank={self.rank})"

    # construction helpers

    @classmethod
    def random(cls, rows: int, cols: int, seed: int = 0, scale: float = 1.0) -> "EmbeddingMatrix":
        rng = np.random.default_rng(seed)
        return cls(scale * rng.standard_normal((rows, cols)))

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingMatrix":
        return cls(read_embd(path))

    def save(self, path: str | Path, dtype: str = "float64") -> None:
        write_embd(path, self._data, dtype=dtype)


def write_embd(path: str | Path, array: np.ndarray, dtype: str = "float64") -> None:
    """Write a matrix in the raw ``EMBD`` little-endian row-major format."""
    dt = np.dtype(dtype)
    if dt not in _DTYPE_CODES:
        raise EmbeddingFormatError(f"unsupported dtype {dtype}")
    a = np.ascontiguousarray(array, dtype=dt.newbyteorder("<"))
    if a.ndim != 2:
        raise EmbeddingFormatError("EMBD stores 2-D matrices only")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, a.shape[0], a.shape[1], _DTYPE_CODES[dt]))
        fh.write(a.tobytes(order="C"))


def read_embd(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: truncated header")
    magic, version, rows, cols, code = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise EmbeddingFormatError(f"{path}: unknown dtype code {code}")
    dt = _DTYPES[code]
    expected = rows * cols * dt.itemsize
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise EmbeddingFormatError(f"{path}: expected {expected} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype=dt).reshape(rows, cols).astype(np.float64)


@dataclass(frozen=True)
class AnswerMassVector:
    """Uniform probability mass ``1/n`` on each of ``n`` unique anchor tokens."""

    token_ids: tuple[int, ...]
    size: int

    @property
    def n(self) -> int:
        return len(self.token_ids)

    @property
    def value(self) -> float:
        return 1.0 / self.n

    @property
    def entries(self) -> dict[int, float]:
        return {t: self.value for t in self.token_ids}

    def dense(self) -> np.ndarray:
        v = np.zeros(self.size)
        v[list(self.token_ids)] = self.value
        return v

    def __len__(self) -> int:
        return self.size


def build_answer_mass(anchors: Iterable[int], vocab_size: int) -> AnswerMassVector:
    ids = sorted({int(a) for a in anchors})
    if not ids:
        raise EmptyAnchorSet("at least one anchor token is required")
    bad = [i for i in ids if i < 0 or i >= vocab_size]
    if bad:
        raise TokenOutOfRange(f"anchor ids {bad} outside vocabulary of size {vocab_size}")
    return AnswerMassVector(tuple(ids), int(vocab_size))


def _as_dense(mass: AnswerMassVector | np.ndarray) -> np.ndarray:
    if isinstance(mass, AnswerMassVector):
        return mass.dense()
    return np.asarray(mass, dtype=np.float64)


def estimate_semantics(
    E: EmbeddingMatrix,
    mass: AnswerMassVector | np.ndarray,
    ridge: float = 0.0,
) -> np.ndarray:
    """Least-squares hidden vector ``dx`` with ``E @ dx`` closest to ``mass``.

    With ``ridge > 0`` the objective gains ``ridge * ||dx||^2``.  When ``E`` is
    rank deficient and ``ridge == 0`` a :class:`RankDeficientWarning` is issued
    and the minimum-norm solution is returned.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    b = _as_dense(mass)
    if b.shape != (E.rows,):
        raise DimensionMismatch(f"mass has length {b.shape}, head has {E.rows} rows")

    f = E.factorization
    d = E.cols
    qtb = f.q.T @ b
    if ridge > 0:
        # augmented system [R; sqrt(ridge) I] z = [Q^T b; 0]
        stacked = np.vstack([f.r, np.sqrt(ridge) * np.eye(d)])
        rhs = np.concatenate([qtb, np.zeros(d)])
        q2, r2 = np.linalg.qr(stacked)
        z = scipy.linalg.solve_triangular(r2, q2.T @ rhs)
    elif f.rank == d:
        z = scipy.linalg.solve_triangular(f.r, qtb)
    else:
        warnings.warn(
            f"embedding rank {f.rank} < hidden dim {d}; returning minimum-norm solution",
            RankDeficientWarning,
            stacklevel=2,
        )
        z = _min_norm_solve(f.r, qtb, f.rank)

    dx = np.empty(d)
    dx[f.perm] = z
    return dx


def _min_norm_solve(r: np.ndarray, qtb: np.ndarray, rank: int) -> np.ndarray:
    # complete orthogonal decomposition: [R11 R12]^T = Z S
    if rank == 0:
        return np.zeros(r.shape[1])
    top = r[:rank, :]
    z, s = np.linalg.qr(top.T)
    w = scipy.linalg.solve_triangular(s.T, qtb[:rank], lower=True)
    return z @ w


def project_suppression(E: EmbeddingMatrix, estimate: np.ndarray) -> np.ndarray:
    """Map a hidden-space estimate back to vocabulary space: ``E @ dx``."""
    dx = np.asarray(estimate, dtype=np.float64)
    if dx.shape != (E.cols,):
        raise DimensionMismatch(f"estimate has length {dx.shape}, head has {E.cols} columns")
    return E.data @ dx


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"length mismatch: {a.shape} vs {b.shape}")


def adjust_logits(y1, suppression, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """``y2 = y1 - lam * dy``, one subtraction per element."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    y1 = np.asarray(y1)
    dy = np.asarray(suppression)
    _check_same_length(y1, dy)
    if lam == 0:
        return y1.copy()
    return y1 - (lam * dy).astype(y1.dtype, copy=False)


def adjust_logits_mask(y1, mass: AnswerMassVector | np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Anchor-only baseline: ``y2 = y1 - lam * mass`` without projection."""
    return adjust_logits(y1, _as_dense(mass), lam)


@dataclass(frozen=True)
class SuppressionPlan:
    """Per-question bundle reused at every decoding step."""

    mass: AnswerMassVector
    delta_x: np.ndarray
    delta_y: np.ndarray
    ridge: float = 0.0
    rank: int = 0
    sources: Mapping[int, tuple[str, ...]] = field(default_factory=dict)

    @property
    def anchors(self) -> tuple[int, ...]:
        return self.mass.token_ids

    @classmethod
    def build(
        cls,
        E: EmbeddingMatrix,
        anchors: Iterable[int] | AnswerMassVector,
        ridge: float | None = None,
        sources: Mapping[int, Iterable[str]] | None = None,
    ) -> "SuppressionPlan":
        """Build the plan; ``ridge=None`` picks 0 for full-rank heads, else 1e-6."""
        mass = anchors if isinstance(anchors, AnswerMassVector) else build_answer_mass(anchors, E.rows)
        if mass.size != E.rows:
            raise DimensionMismatch(f"mass built for |V|={mass.size}, head has {E.rows} rows")
        if ridge is None:
            ridge = 0.0 if E.full_rank else AUTO_RIDGE
        dx = estimate_semantics(E, mass, ridge=ridge)
        dy = project_suppression(E, dx)
        src = {int(k): tuple(v) for k, v in (sources or {}).items()}
        return cls(mass, _frozen(dx), _frozen(dy), float(ridge), E.rank, src)
