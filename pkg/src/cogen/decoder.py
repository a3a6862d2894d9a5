"""The collaborative generation loop and its baseline modes.

Each step queries the context-holding small backend with instruction,
context, and the emitted prefix, and (in fused modes) the context-blind
large backend with instruction and prefix only. Both views are truncated
to their top-k entries, aligned, blended by the active fusion strategy,
and one token is sampled from the result. The per-step blend weight,
chosen token, and both sources' top-1 probabilities go into a trace for
later visualization.

first-k mode restricts collaboration to the opening tokens: after step k
the large backend is never queried again and the loop continues on the
small model alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .backends import ConditioningInput, ContextBundle, Role
from .combmodel import comb_forward, padded_top_probs
from .core import (
    SamplingConfig,
    TokenDistribution,
    argmax_token,
    sample_top_p,
    top_k_project,
)
from .errors import (
    IncompatibleVocabError,
    InvalidConfigError,
    PrivacyContractError,
    SessionError,
    TransportError,
)
from .fusion import FusionStrategy, align_supports, fuse
from .rng import Splitmix64

DEFAULT_FUSION_TOP_K = 10


@dataclass(frozen=True)
class DecodeMode:
    kind: str
    strategy: FusionStrategy | None = None
    first_k: int | None = None
    top_k: int = DEFAULT_FUSION_TOP_K
    sketch_conditioning: str = "sketch"

    KINDS = (
        "slm_only",
        "llm_only_with_context",
        "llm_only_no_context",
        "logit_fusion",
        "first_k",
        "sketch_then_fill",
    )

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise InvalidConfigError(f"unknown decode mode {self.kind!r}")
        if self.kind in ("logit_fusion", "first_k") and self.strategy is None:
            raise InvalidConfigError(f"{self.kind} requires a fusion strategy")
        if self.kind == "first_k" and (self.first_k is None or self.first_k < 0):
            raise InvalidConfigError("first_k count must be >= 0")
        if self.top_k < 1:
            raise InvalidConfigError("top_k must be >= 1")
        if self.sketch_conditioning not in ("sketch", "full_content"):
            raise InvalidConfigError("sketch conditioning must be 'sketch' or 'full_content'")

    @classmethod
    def slm_only(cls):
        return cls(kind="slm_only")

    @classmethod
    def llm_with_context(cls):
        return cls(kind="llm_only_with_context")

    @classmethod
    def llm_no_context(cls):
        return cls(kind="llm_only_no_context")

    @classmethod
    def fusion(cls, strategy: FusionStrategy, top_k: int = DEFAULT_FUSION_TOP_K):
        return cls(kind="logit_fusion", strategy=strategy, top_k=top_k)

    @classmethod
    def first_k_mode(cls, n: int, strategy: FusionStrategy, top_k: int = DEFAULT_FUSION_TOP_K):
        return cls(kind="first_k", strategy=strategy, first_k=n, top_k=top_k)

    @classmethod
    def sketch(cls, conditioning: str = "sketch"):
        return cls(kind="sketch_then_fill", sketch_conditioning=conditioning)

    def label(self) -> str:
        if self.kind == "logit_fusion":
            return f"logit_fusion[{self.strategy.label()}]"
        if self.kind == "first_k":
            return f"first_k({self.first_k})[{self.strategy.label()}]"
        if self.kind == "sketch_then_fill":
            return f"sketch_then_fill[{self.sketch_conditioning}]"
        return self.kind


@dataclass(frozen=True)
class TraceStep:
    step: int
    token_id: int
    token: str
    w: float
    p_s_top1: float
    p_l_top1: float


@dataclass
class WeightTrace:
    mode: str
    seed: int
    steps: list[TraceStep] = field(default_factory=list)
    events: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class DecodeResult:
    token_ids: tuple[int, ...]
    trace: WeightTrace
    sketch: object | None = None

    def text(self, tokenizer) -> str:
        return tokenizer.detokenize(self.token_ids)


@dataclass(frozen=True)
class GenerationSession:
    """Everything one generation run needs, with the privacy split baked in.

    ``slm_instruction`` is the full (possibly personal) task; the large
    backend only ever sees ``llm_instruction``, populated from the
    record's context-free task variant.
    """

    slm: object
    llm: object | None
    mode: DecodeMode
    sampling: SamplingConfig
    slm_instruction: str
    llm_instruction: str
    context: ContextBundle | None = None
    record: object | None = None

    def __post_init__(self) -> None:
        if self.mode.kind != "slm_only" and self.llm is None:
            raise InvalidConfigError(f"mode {self.mode.kind} needs a large backend")
        if self.mode.kind in ("logit_fusion", "first_k"):
            if self.slm.vocab.digest() != self.llm.vocab.digest():
                raise IncompatibleVocabError(
                    "fused modes require both backends to share one vocabulary"
                )
        if self.mode.kind == "sketch_then_fill" and self.record is None:
            raise InvalidConfigError("sketch mode needs the corpus record for the fill prompt")


def session_for_record(record, mode, sampling, slm, llm=None) -> GenerationSession:
    """Session from a corpus record: the small model gets the personal
    task plus private context, the large model the context-free variant."""
    return GenerationSession(
        slm=slm,
        llm=llm,
        mode=mode,
        sampling=sampling,
        slm_instruction=record.task,
        llm_instruction=record.general_task or record.task,
        context=record.context_bundle(),
        record=record,
    )


def _pick_token(dist: TokenDistribution, sampling: SamplingConfig, rng: Splitmix64) -> int:
    if sampling.greedy:
        return argmax_token(dist)
    return sample_top_p(dist, sampling, rng)


def _dense(dist: TokenDistribution) -> TokenDistribution:
    if dist.is_dense:
        return dist
    return TokenDistribution.dense(dist.to_dense_array() / dist.mass)


def decode_single(
    backend,
    prompt_parts: tuple[str, ContextBundle | None],
    sampling: SamplingConfig,
    audit_log=None,
    context_upload_waiver: bool = False,
    trace: WeightTrace | None = None,
    trace_w: float = 1.0,
    initial_prefix: tuple[int, ...] = (),
) -> list[int]:
    """Ancestral sampling against one backend; returns the new tokens.

    Remote backends delegate the loop to the service's generate call,
    which runs this same function server-side, so local and remote
    placements emit identical sequences for identical seeds. When a trace
    is supplied, each emitted token is recorded with the constant weight
    ``trace_w`` (1.0 for small-model decodes, 0.0 for large).
    """
    instruction, context = prompt_parts
    if hasattr(backend, "generate_remote"):
        if context is not None and not context.is_empty():
            raise PrivacyContractError("the wire protocol carries no context fields")
        token_ids = list(backend.generate_remote(instruction, initial_prefix, sampling))
        if trace is not None:
            for i, tid in enumerate(token_ids, start=1):
                trace.steps.append(
                    TraceStep(i, tid, backend.vocab.token(tid), trace_w, 0.0, 0.0)
                )
        return token_ids
    rng = Splitmix64(sampling.seed)
    tokens: list[int] = list(initial_prefix)
    emitted: list[int] = []
    for step in range(1, sampling.max_new_tokens + 1):
        request = ConditioningInput(
            instruction,
            tuple(tokens),
            context,
            backend.role,
            context_upload_waiver=context_upload_waiver,
        )
        if audit_log is not None and backend.role == Role.LARGE_CLOUD and not context_upload_waiver:
            audit_log.record_input(request)
        dist = _dense(backend.next_distribution(request))
        token_id = _pick_token(dist, sampling, rng)
        if token_id == backend.vocab.eos_id:
            break
        tokens.append(token_id)
        emitted.append(token_id)
        if trace is not None:
            top1 = dist.top1()[1]
            small = trace_w >= 0.5
            trace.steps.append(
                TraceStep(
                    step,
                    token_id,
                    backend.vocab.token(token_id),
                    trace_w,
                    top1 if small else 0.0,
                    0.0 if small else top1,
                )
            )
    return emitted


def decode(
    session: GenerationSession,
    on_transport_error: str = "abort",
    audit_log=None,
    template_library=None,
) -> DecodeResult:
    """Run the session's mode to completion.

    ``on_transport_error`` selects the policy when a remote large backend
    fails mid-stream: ``abort`` raises a session error carrying the
    partial trace, ``degrade`` records the event and finishes on the
    small model alone. ``audit_log``, when given, captures every payload
    bound for the large backend for the privacy audit.
    """
    if on_transport_error not in ("abort", "degrade"):
        raise InvalidConfigError("on_transport_error must be 'abort' or 'degrade'")
    mode = session.mode
    sampling = session.sampling
    trace = WeightTrace(mode=mode.label(), seed=sampling.seed)

    if mode.kind == "sketch_then_fill":
        from .prompting import run_sketch_then_fill  # imported late: prompting builds on decoding

        extra = {} if template_library is None else {"library": template_library}
        tokens, artifact = run_sketch_then_fill(
            session.llm,
            session.slm,
            session.record,
            sampling,
            conditioning=mode.sketch_conditioning,
            dataset_kind=getattr(session.record, "dataset_kind", "context_aware"),
            audit_log=audit_log,
            trace=trace,
            **extra,
        )
        return DecodeResult(token_ids=tuple(tokens), trace=trace, sketch=artifact)

    if mode.kind == "slm_only":
        tokens = decode_single(
            session.slm,
            (session.slm_instruction, session.context),
            sampling,
            trace=trace,
            trace_w=1.0,
        )
        return DecodeResult(token_ids=tuple(tokens), trace=trace)

    if mode.kind in ("llm_only_with_context", "llm_only_no_context"):
        with_ctx = mode.kind == "llm_only_with_context"
        tokens = decode_single(
            session.llm,
            (
                session.slm_instruction if with_ctx else session.llm_instruction,
                session.context if with_ctx else None,
            ),
            sampling,
            audit_log=audit_log,
            context_upload_waiver=with_ctx,
            trace=trace,
            trace_w=0.0,
        )
        return DecodeResult(token_ids=tuple(tokens), trace=trace)

    # logit_fusion / first_k
    rng = Splitmix64(sampling.seed)
    vocab = session.slm.vocab
    tokens: list[int] = []
    fused_limit = sampling.max_new_tokens if mode.kind == "logit_fusion" else mode.first_k
    llm_down = False

    for step in range(1, sampling.max_new_tokens + 1):
        prefix = tuple(tokens)
        p_s = session.slm.next_distribution(
            ConditioningInput(session.slm_instruction, prefix, session.context, session.slm.role)
        )
        fused_step = step <= fused_limit and not llm_down
        if fused_step:
            request = ConditioningInput(session.llm_instruction, prefix, None, session.llm.role)
            if audit_log is not None:
                audit_log.record_input(request)
            try:
                p_l = session.llm.next_distribution(request)
            except TransportError as exc:
                if on_transport_error == "abort":
                    raise SessionError(
                        f"large backend failed at step {step}: {exc}",
                        partial_trace=trace,
                        cause=exc,
                    ) from exc
                trace.events.append(f"step {step}: large backend down, degraded to slm_only")
                llm_down = True
                fused_step = False
        if fused_step:
            ps_k = top_k_project(p_s, mode.top_k)
            pl_k = p_l if p_l.is_sparse else top_k_project(p_l, mode.top_k)
            pair = align_supports(ps_k, pl_k)
            w_override = None
            if mode.strategy.kind == "learnable":
                w_override = comb_forward(
                    mode.strategy.model,
                    padded_top_probs(pl_k),
                    padded_top_probs(ps_k),
                )
            fused, w = fuse(pair, mode.strategy, w_override=w_override)
            dist = _dense(fused)
            ps1, pl1 = ps_k.top1()[1], pl_k.top1()[1]
        else:
            dist, w, ps1, pl1 = _dense(p_s), 1.0, p_s.top1()[1], 0.0
        token_id = _pick_token(dist, sampling, rng)
        if token_id == vocab.eos_id:
            break
        tokens.append(token_id)
        trace.steps.append(
            TraceStep(step, token_id, vocab.token(token_id), w, ps1, pl1)
        )
    return DecodeResult(token_ids=tuple(tokens), trace=trace)


def decode_first_k(session: GenerationSession, **kwargs) -> DecodeResult:
    if session.mode.kind != "first_k":
        raise InvalidConfigError("decode_first_k requires a first_k session")
    return decode(session, **kwargs)


def fused_teacher_forced_ppl(
    slm,
    llm,
    record,
    tokenizer,
    strategy: FusionStrategy | None,
    top_k: int = DEFAULT_FUSION_TOP_K,
    first_k: int | None = None,
    include_eos: bool = True,
) -> float:
    """Perplexity of the record's reference under the fused next-token
    distribution, teacher-forced.

    ``strategy`` None scores the small model alone; ``first_k`` limits
    fusion to the opening steps with the remainder scored on the small
    model, mirroring the generation-time first-k split. A target outside
    the fused support yields infinite perplexity.
    """
    ids = tokenizer.tokenize(record.reference)
    if include_eos:
        ids = ids + [tokenizer.vocab.eos_id]
    context = record.context_bundle()
    llm_instruction = record.general_task or record.task
    nll = 0.0
    for i, target in enumerate(ids):
        prefix = tuple(ids[:i])
        p_s = slm.next_distribution(
            ConditioningInput(record.task, prefix, context, slm.role)
        )
        fused_step = strategy is not None and (first_k is None or i + 1 <= first_k)
        if fused_step:
            p_l = llm.next_distribution(
                ConditioningInput(llm_instruction, prefix, None, llm.role)
            )
            ps_k = top_k_project(p_s, top_k)
            pl_k = p_l if p_l.is_sparse else top_k_project(p_l, top_k)
            pair = align_supports(ps_k, pl_k)
            w_override = None
            if strategy.kind == "learnable":
                w_override = comb_forward(
                    strategy.model, padded_top_probs(pl_k), padded_top_probs(ps_k)
                )
            fused, _ = fuse(pair, strategy, w_override=w_override)
            p = fused.prob_of(target)
        else:
            p = p_s.prob_of(target)
        if p <= 0.0:
            return math.inf
        nll -= math.log(p)
    return math.exp(nll / len(ids))


def write_trace(trace: WeightTrace, path) -> None:
    """Line-delimited trace: a metadata line, then one record per step
    with the step index, token id, token string, blend weight, and both
    sources' top-1 probabilities."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"mode": trace.mode, "seed": trace.seed, "events": trace.events}) + "\n")
        for s in trace.steps:
            fh.write(
                json.dumps(
                    {
                        "step": s.step,
                        "token_id": s.token_id,
                        "token": s.token,
                        "w": s.w,
                        "p_s_top1": s.p_s_top1,
                        "p_l_top1": s.p_l_top1,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_trace(path) -> WeightTrace:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise InvalidConfigError("trace file is empty")
    meta = json.loads(lines[0])
    trace = WeightTrace(mode=meta["mode"], seed=meta["seed"], events=list(meta.get("events", [])))
    for line in lines[1:]:
        row = json.loads(line)
        trace.steps.append(
            TraceStep(
                step=row["step"],
                token_id=row["token_id"],
                token=row["token"],
                w=row["w"],
                p_s_top1=row["p_s_top1"],
                p_l_top1=row["p_l_top1"],
            )
        )
    return trace
