"""Shared vocabulary, token distributions, and sampling primitives.

Everything here is immutable after construction and safe for concurrent
reads. Sampling takes an explicit RNG stream so callers own sequencing.

Probabilities are 64-bit floats end to end. All tie-breaks (top-k cuts,
nucleus cuts, argmax) resolve toward the lowest token id so that runs are
reproducible bit for bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidConfigError,
    InvalidDistributionError,
    InvalidInputError,
)
from .rng import Splitmix64

DENSE_SUM_TOL = 1e-9
SPARSE_MASS_TOL = 1e-9
# Below this deviation a distribution counts as already normalized and is
# left untouched, preserving bit-exact pass-through of clean inputs.
RENORM_SKIP_TOL = 1e-12


@dataclass(frozen=True)
class Vocab:
    """Ordered token inventory shared by every backend in a fused session."""

    tokens: tuple[str, ...]
    eos_id: int
    unk_id: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.tokens) < 2:
            raise InvalidInputError("vocab needs at least 2 tokens")
        index = {}
        for i, tok in enumerate(self.tokens):
            if tok in index:
                raise InvalidInputError(f"duplicate token {tok!r}")
            index[tok] = i
        for name, idx in (("eos_id", self.eos_id), ("unk_id", self.unk_id)):
            if not 0 <= idx < len(self.tokens):
                raise InvalidInputError(f"{name} {idx} out of range")
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        """Token id, falling back to the unknown id for OOV strings."""
        return self._index.get(token, self.unk_id)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def digest(self) -> str:
        """16-hex-char identity used in handshakes and config checks."""
        h = hashlib.sha256()
        for tok in self.tokens:
            h.update(tok.encode("utf-8"))
            h.update(b"\x00")
        h.update(f"\x01{self.eos_id}\x01{self.unk_id}".encode("ascii"))
        return h.digest()[:8].hex()


@dataclass(frozen=True)
class SamplingConfig:
    """Decoding knobs; the defaults mirror the engine's standard setup."""

    temperature: float = 0.7
    top_p: float = 0.9
    max_new_tokens: int = 1024
    seed: int = 0
    greedy: bool = False

    def __post_init__(self) -> None:
        if not (self.temperature > 0):
            raise InvalidConfigError("temperature must be > 0")
        if not (0 < self.top_p <= 1):
            raise InvalidConfigError("top_p must be in (0, 1]")
        if self.max_new_tokens < 1:
            raise InvalidConfigError("max_new_tokens must be >= 1")
        if not (0 <= self.seed < 2**64):
            raise InvalidConfigError("seed must fit in 64 unsigned bits")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TokenDistribution:
    """Probability mass over token ids, in dense or sparse (top-K) form.

    Dense form carries one probability per vocab index and must sum to 1.
    Sparse form carries (id, probability) entries sorted by descending
    probability (ties by ascending id) with total mass at most 1; it is
    what survives a top-K cut and is never renormalized by the cut itself.
    """

    vocab_size: int
    dense_probs: np.ndarray | None = None
    sparse_ids: np.ndarray | None = None
    sparse_probs: np.ndarray | None = None

    @classmethod
    def dense(cls, probs) -> "TokenDistribution":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise InvalidDistributionError("dense distribution must be a non-empty vector")
        if not np.all(np.isfinite(probs)):
            raise InvalidDistributionError("probabilities must be finite")
        if np.any(probs < 0) or np.any(probs > 1 + 1e-12):
            raise InvalidDistributionError("probabilities must lie in [0, 1]")
        mass = float(probs.sum())
        if abs(mass - 1.0) > DENSE_SUM_TOL:
            raise InvalidDistributionError(f"dense mass {mass!r} not within {DENSE_SUM_TOL} of 1")
        return cls(vocab_size=probs.size, dense_probs=_readonly(probs))

    @classmethod
    def sparse(cls, ids, probs, vocab_size: int) -> "TokenDistribution":
        ids = np.asarray(ids, dtype=np.int64)
        probs = np.asarray(probs, dtype=np.float64)
        if ids.ndim != 1 or probs.shape != ids.shape or ids.size == 0:
            raise InvalidDistributionError("sparse ids/probs must be matching non-empty vectors")
        if not np.all(np.isfinite(probs)):
            raise InvalidDistributionError("probabilities must be finite")
        if np.any(probs < 0) or np.any(probs > 1 + 1e-12):
            raise InvalidDistributionError("probabilities must lie in [0, 1]")
        if np.any(ids < 0) or np.any(ids >= vocab_size):
            raise InvalidDistributionError("sparse id out of vocab range")
        if len(set(ids.tolist())) != ids.size:
            raise InvalidDistributionError("sparse ids must be unique")
        if np.any(np.diff(probs) > 0):
            raise InvalidDistributionError("sparse entries must be sorted by descending probability")
        mass = float(probs.sum())
        if mass > 1 + SPARSE_MASS_TOL:
            raise InvalidDistributionError(f"sparse mass {mass!r} exceeds 1")
        return cls(vocab_size=vocab_size, sparse_ids=ids.copy(), sparse_probs=_readonly(probs))

    def __post_init__(self) -> None:
        if self.sparse_ids is not None:
            self.sparse_ids.flags.writeable = False

    @property
    def is_dense(self) -> bool:
        return self.dense_probs is not None

    @property
    def is_sparse(self) -> bool:
        return self.sparse_probs is not None

    @property
    def mass(self) -> float:
        if self.is_dense:
            return float(self.dense_probs.sum())
        return float(self.sparse_probs.sum())

    def prob_of(self, token_id: int) -> float:
        if self.is_dense:
            return float(self.dense_probs[token_id])
        hits = np.nonzero(self.sparse_ids == token_id)[0]
        return float(self.sparse_probs[hits[0]]) if hits.size else 0.0

    def top1(self) -> tuple[int, float]:
        """Highest-probability (id, p); ties resolve to the lowest id."""
        if self.is_dense:
            i = int(np.argmax(self.dense_probs))
            return i, float(self.dense_probs[i])
        return int(self.sparse_ids[0]), float(self.sparse_probs[0])

    def to_dense_array(self) -> np.ndarray:
        """Full-vocab probability vector (zeros off the sparse support)."""
        if self.is_dense:
            return np.array(self.dense_probs, dtype=np.float64)
        out = np.zeros(self.vocab_size, dtype=np.float64)
        out[self.sparse_ids] = self.sparse_probs
        return out


def softmax(logits) -> TokenDistribution:
    """Dense softmax with max-subtraction for overflow safety."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise InvalidInputError("logits must be a non-empty vector")
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("logits must be finite")
    shifted = logits - logits.max()
    exps = np.exp(shifted)
    probs = exps / exps.sum()
    return TokenDistribution(vocab_size=probs.size, dense_probs=_readonly(probs))


def apply_temperature(logits, temperature: float) -> np.ndarray:
    """Divide logits by a positive temperature."""
    if not (temperature > 0):
        raise InvalidConfigError("temperature must be > 0")
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("logits must be finite")
    return logits / temperature


def _descending_order(probs: np.ndarray) -> np.ndarray:
    """Indices sorted by descending probability, ties by ascending id."""
    return np.lexsort((np.arange(probs.size), -probs))


def _temper_probs(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Probability-space temperature: p**(1/T), renormalized.

    Equivalent to dividing log-probabilities by T; zeros stay zero. Done
    through logs so extreme temperatures neither overflow nor underflow.
    """
    if temperature == 1.0:
        return probs
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    scaled = logp / temperature
    finite = scaled[np.isfinite(scaled)]
    if finite.size == 0:
        raise InvalidDistributionError("distribution has no support")
    shifted = scaled - finite.max()
    with np.errstate(invalid="ignore"):
        out = np.exp(shifted)
    out[~np.isfinite(out)] = 0.0
    total = out.sum()
    if total <= 0:
        raise InvalidDistributionError("temperature scaling annihilated all mass")
    return out / total


def sample_top_p(dist: TokenDistribution, config: SamplingConfig, rng: Splitmix64) -> int:
    """Nucleus sampling after temperature scaling.

    Sorts by descending probability (ties toward lower ids), keeps the
    smallest prefix whose cumulative mass reaches ``top_p``, renormalizes
    it, and draws one token using exactly one RNG float.
    """
    if not dist.is_dense:
        raise InvalidDistributionError("sample_top_p requires a dense distribution")
    if abs(dist.mass - 1.0) > DENSE_SUM_TOL:
        raise InvalidDistributionError("sample_top_p requires a normalized distribution")
    probs = _temper_probs(np.asarray(dist.dense_probs), config.temperature)
    order = _descending_order(probs)
    sorted_probs = probs[order]
    cum = np.cumsum(sorted_probs)
    cut = int(np.searchsorted(cum, config.top_p, side="left")) + 1
    cut = min(cut, probs.size)
    nucleus = sorted_probs[:cut]
    nucleus = nucleus / nucleus.sum()
    u = rng.next_float()
    pick = int(np.searchsorted(np.cumsum(nucleus), u, side="right"))
    pick = min(pick, cut - 1)
    return int(order[pick])


def argmax_token(dist: TokenDistribution) -> int:
    """Greedy choice; ties resolve to the lowest token id."""
    if dist.is_dense:
        return int(np.argmax(dist.dense_probs))
    return int(dist.sparse_ids[0])


def top_k_project(dist: TokenDistribution, k: int) -> TokenDistribution:
    """Keep the k highest-probability entries without renormalizing.

    Ties at the cut go to lower token ids. Projection of an already
    normalized distribution with k >= vocab size keeps mass 1.
    """
    if k < 1:
        raise InvalidConfigError("k must be >= 1")
    if not dist.is_dense:
        raise InvalidInputError("top_k_project expects a dense distribution")
    probs = np.asarray(dist.dense_probs)
    order = _descending_order(probs)[: min(k, probs.size)]
    return TokenDistribution(
        vocab_size=dist.vocab_size,
        sparse_ids=np.asarray(order, dtype=np.int64),
        sparse_probs=_readonly(probs[order]),
    )
