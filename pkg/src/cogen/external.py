"""Adapter for external inference services exposing token log-probs.

Speaks the de-facto completions interface: POST a prompt with
max_tokens=1 and a logprob count, read back the top token log
probabilities. Returned tokens are mapped into the shared vocabulary
(exact match first, then with surrounding whitespace stripped); tokens
that map nowhere are dropped and their mass recorded as lost. Losing
more than half the mass flags the result as degraded so callers can
react.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import requests

from .backends import BackendDescriptor, BackendKind, ConditioningInput, Role
from .core import TokenDistribution, Vocab
from .errors import InvalidConfigError, TransportError
from .tokenizer import Tokenizer

API_KEY_ENV = "COGEN_API_KEY"
DEGRADED_MASS_FRACTION = 0.5


class HttpCompletionsClient:
    """Thin requests-based client; anything with the same ``complete``
    method (e.g. a test stub) can stand in for it."""

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 30.0) -> None:
        if not endpoint:
            raise InvalidConfigError("external service endpoint is empty")
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout

    def complete(self, prompt: str, max_tokens: int, logprobs: int) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(
                self.endpoint,
                json={"prompt": prompt, "max_tokens": max_tokens, "logprobs": logprobs},
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
            return response.json()
        except requests.RequestException as exc:
            raise TransportError(f"external service call failed: {exc}") from exc


@dataclass(frozen=True)
class ExternalLogits:
    distribution: TokenDistribution
    lost_mass: float
    degraded: bool


def _top_logprobs(payload: dict) -> dict:
    try:
        return payload["choices"][0]["logprobs"]["top_logprobs"][0]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(
            "external service reply lacks choices[0].logprobs.top_logprobs[0]",
            retryable=False,
        ) from exc


def external_next_logits(
    client,
    request: ConditioningInput,
    top_k: int,
    vocab: Vocab,
    tokenizer: Tokenizer | None = None,
) -> ExternalLogits:
    """One next-token distribution from an external completions service."""
    if top_k < 1:
        raise InvalidConfigError("top_k must be >= 1")
    tokenizer = tokenizer or Tokenizer(vocab, "whitespace")
    prompt = request.instruction
    if request.prefix_ids:
        prompt = prompt + " " + tokenizer.detokenize(request.prefix_ids)
    payload = client.complete(prompt=prompt, max_tokens=1, logprobs=top_k)
    raw = _top_logprobs(payload)

    probs_by_id: dict[int, float] = {}
    lost = 0.0
    for token_text, logprob in raw.items():
        p = math.exp(float(logprob))
        if token_text in vocab:
            tid = vocab.id_of(token_text)
        elif token_text.strip() in vocab and token_text.strip():
            tid = vocab.id_of(token_text.strip())
        else:
            lost += p
            continue
        probs_by_id[tid] = probs_by_id.get(tid, 0.0) + p
    total = sum(probs_by_id.values()) + lost
    degraded = total > 0 and lost / total > DEGRADED_MASS_FRACTION
    if not probs_by_id:
        return ExternalLogits(
            distribution=TokenDistribution.sparse([vocab.unk_id], [0.0], vocab.size),
            lost_mass=lost,
            degraded=True,
        )
    items = sorted(probs_by_id.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    ids = np.array([i for i, _ in items], dtype=np.int64)
    probs = np.array([min(p, 1.0) for _, p in items], dtype=np.float64)
    return ExternalLogits(
        distribution=TokenDistribution(vocab_size=vocab.size, sparse_ids=ids, sparse_probs=probs),
        lost_mass=lost,
        degraded=degraded,
    )


class ExternalBackend:
    """Backend facade over an external completions service.

    Role is fixed to large_cloud: requests cannot carry context, and the
    adapter only ever uploads the instruction plus the emitted prefix.
    """

    kind = BackendKind.EXTERNAL_HTTP
    role = Role.LARGE_CLOUD

    def __init__(self, client, vocab: Vocab, top_k: int = 10, tokenizer: Tokenizer | None = None):
        self.client = client
        self.vocab = vocab
        self.top_k = top_k
        self.tokenizer = tokenizer or Tokenizer(vocab, "whitespace")
        self.last_result: ExternalLogits | None = None

    def next_distribution(self, request: ConditioningInput) -> TokenDistribution:
        result = external_next_logits(
            self.client, request, self.top_k, self.vocab, self.tokenizer
        )
        self.last_result = result
        return result.distribution

    def describe(self) -> BackendDescriptor:
        return BackendDescriptor(
            kind=self.kind,
            role=self.role,
            vocab_ref=self.vocab.digest(),
            params_uri=getattr(self.client, "endpoint", "external"),
        )
