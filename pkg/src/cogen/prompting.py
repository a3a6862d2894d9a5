"""Prompt assembly and parsing.

Templates ship as data files (one per variant) and render byte-stably:
rendering the same record twice yields identical bytes, and no-context
renders provably contain no context fields. The skeleton parser accepts
both real newlines and the literal two-character "\\n" separator that
the sketch exemplars themselves use.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .decoder import decode_single
from .errors import (
    InvalidConfigError,
    InvalidInputError,
    RatingParseError,
    SketchParseError,
    TemplateError,
)

DATASET_KINDS = ("context_aware", "email", "paper")

_PLACEHOLDER = re.compile(
    r"\{(profile|history|task|examples|question|answer|profile_info|writing_history)\}"
)


class TemplateLibrary:
    """Loads template files by id, from the packaged set or an override dir."""

    def __init__(self, template_dir: str | Path | None = None) -> None:
        self._dir = Path(template_dir) if template_dir else None
        self._cache: dict[str, str] = {}

    def text(self, template_id: str) -> str:
        if template_id not in self._cache:
            name = f"{template_id}.txt"
            if self._dir is not None:
                path = self._dir / name
                if not path.is_file():
                    raise TemplateError(f"template {template_id!r} not found in {self._dir}")
                raw = path.read_text(encoding="utf-8")
            else:
                ref = resources.files("cogen.templates").joinpath(name)
                if not ref.is_file():
                    raise TemplateError(f"unknown template id {template_id!r}")
                raw = ref.read_text(encoding="utf-8")
            self._cache[template_id] = raw[:-1] if raw.endswith("\n") else raw
        return self._cache[template_id]

    def render(self, template_id: str, values: dict) -> str:
        text = self.text(template_id)

        def sub(match: re.Match) -> str:
            key = match.group(1)
            if key not in values:
                raise TemplateError(
                    f"template {template_id!r} needs placeholder {{{key}}} but no value was given"
                )
            return values[key]

        return _PLACEHOLDER.sub(sub, text)


_DEFAULT_LIBRARY = TemplateLibrary()


@dataclass(frozen=True)
class RenderedPrompt:
    system: str
    user: str

    def combined(self) -> str:
        return self.system + "\n\n" + self.user


def _require_kind(dataset_kind: str) -> None:
    if dataset_kind not in DATASET_KINDS:
        raise InvalidConfigError(f"unknown dataset kind {dataset_kind!r}")


def join_history(history) -> str:
    return "\n\n".join(history)


def build_request_prompt(
    record,
    with_context: bool,
    dataset_kind: str,
    library: TemplateLibrary = _DEFAULT_LIBRARY,
) -> RenderedPrompt:
    """The standard request prompt for a record.

    Context-free renders use the record's general task variant and carry
    no profile or history bytes at all.
    """
    _require_kind(dataset_kind)
    if with_context:
        system_id = (
            "request_system_with_context_context_aware"
            if dataset_kind == "context_aware"
            else "request_system_with_context_lamp"
        )
        user_id = f"request_user_with_context_{dataset_kind}"
        values = {
            "profile": record.profile,
            "history": join_history(record.history),
            "examples": join_history(record.history),
            "task": record.task,
        }
    else:
        system_id = "request_system_no_context"
        user_id = f"request_user_no_context_{dataset_kind}"
        values = {"task": record.general_task or record.task}
    return RenderedPrompt(
        system=library.text(system_id),
        user=library.render(user_id, values),
    )


def build_sketch_prompt(
    task: str,
    dataset_kind: str,
    library: TemplateLibrary = _DEFAULT_LIBRARY,
) -> str:
    """Skeleton-extraction prompt, exemplars included."""
    _require_kind(dataset_kind)
    if not task:
        raise InvalidInputError("sketch prompt needs a non-empty task")
    return library.render(f"sketch_{dataset_kind}", {"question": task})


@dataclass(frozen=True)
class SketchArtifact:
    source_backend: str
    points: tuple[str, ...]
    raw_text: str

    def __post_init__(self) -> None:
        if not self.points:
            raise InvalidInputError("a sketch needs at least one point")


_MARKER = re.compile(r"(?:(?<=\n)|^)\s*(\d{1,3})\.\s*")


def parse_sketch(raw_text: str, source_backend: str = "unknown") -> SketchArtifact:
    """Split numbered skeleton output into ordered points.

    Handles both real newlines and the literal "\\n" separators the
    exemplars use; point numbers must sit at the start of a line.
    """
    normalized = raw_text.replace("\\n", "\n")
    matches = list(_MARKER.finditer(normalized))
    if not matches:
        raise SketchParseError("no numbered skeleton points found", raw_text=raw_text)
    points = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(normalized)
        point = normalized[m.end() : end].strip()
        if point:
            points.append(point)
    if not points:
        raise SketchParseError("numbered markers carried no content", raw_text=raw_text)
    return SketchArtifact(source_backend=source_backend, points=tuple(points), raw_text=raw_text)


def format_sketch(artifact: SketchArtifact) -> str:
    """Canonical one-point-per-line rendering; parse_sketch inverts it."""
    return "\n".join(f"{i}. {point}" for i, point in enumerate(artifact.points, start=1))


def build_fill_prompt(
    record,
    conditioning,
    dataset_kind: str = "context_aware",
) -> str:
    """With-context request layout extended by a reference section.

    Section order is fixed: profile, history, reference sketch (or
    reference content), task. ``conditioning`` is either a parsed sketch
    or the large model's full draft text.
    """
    _require_kind(dataset_kind)
    if isinstance(conditioning, SketchArtifact):
        header, body = "## Reference Sketch", format_sketch(conditioning)
    else:
        header, body = "## Reference Content", str(conditioning)
    if not body:
        raise InvalidInputError("fill prompt conditioning is empty")
    context = record.context_bundle()
    if context is None or context.is_empty():
        raise InvalidInputError("fill prompts require a record with context")

    if dataset_kind == "context_aware":
        lead = (
            f"## User Profile\n{record.profile}\n\n"
            f"## User Writing History\n{join_history(record.history)}\n\n"
        )
        task_text = record.task
    elif dataset_kind == "email":
        lead = f"## History Emails\n{join_history(record.history)}\n\n"
        task_text = (
            f"Compose an email for the subject '{record.task}' "
            "that matches the author's unique style and tone."
        )
    else:
        lead = f"## History Paper Abstracts\n{join_history(record.history)}\n\n"
        task_text = (
            f"Compose an abstract for the title '{record.task}' "
            "that matches the author's unique content, style and tone."
        )
    return f"{lead}{header}\n{body}\n\n## Task\n{task_text}"


def run_sketch_then_fill(
    llm_backend,
    slm_backend,
    record,
    sampling,
    conditioning: str = "sketch",
    dataset_kind: str = "context_aware",
    library: TemplateLibrary = _DEFAULT_LIBRARY,
    tokenizer=None,
    retry_on_parse_failure: bool = True,
    audit_log=None,
    trace=None,
):
    """Two-step collaboration: the context-blind large model drafts a
    skeleton (or full draft) from the general instruction only, then the
    context-holding small model writes the response conditioned on
    instruction, context, and that reference.

    Returns (response token ids, SketchArtifact or draft text).
    """
    if record is None:
        raise InvalidInputError("sketch-then-fill needs a corpus record")
    from .tokenizer import Tokenizer

    if tokenizer is None:
        tokenizer = Tokenizer(slm_backend.vocab, "whitespace")
    general_task = record.general_task or record.task

    if conditioning == "sketch":
        sketch_prompt = build_sketch_prompt(general_task, dataset_kind, library)
        sketch_ids = decode_single(
            llm_backend, (sketch_prompt, None), sampling, audit_log=audit_log
        )
        raw = tokenizer.detokenize(sketch_ids)
        try:
            artifact = parse_sketch(raw, source_backend=_backend_name(llm_backend))
        except SketchParseError:
            if not retry_on_parse_failure:
                raise
            retry_sampling = _reseeded(sampling)
            sketch_ids = decode_single(
                llm_backend, (sketch_prompt, None), retry_sampling, audit_log=audit_log
            )
            raw = tokenizer.detokenize(sketch_ids)
            artifact = parse_sketch(raw, source_backend=_backend_name(llm_backend))
        reference = artifact
    else:
        draft_prompt = build_request_prompt(record, with_context=False, dataset_kind=dataset_kind,
                                            library=library)
        draft_ids = decode_single(
            llm_backend, (draft_prompt.user, None), sampling, audit_log=audit_log
        )
        reference = tokenizer.detokenize(draft_ids)
        if not reference:
            raise InvalidInputError("large model produced an empty draft")

    fill_prompt = build_fill_prompt(record, reference, dataset_kind)
    tokens = decode_single(
        slm_backend,
        (fill_prompt, record.context_bundle()),
        sampling,
        trace=trace,
        trace_w=1.0,
    )
    return tokens, reference


def _backend_name(backend) -> str:
    kind = getattr(backend, "kind", None)
    return getattr(kind, "value", str(kind))


def _reseeded(sampling):
    from dataclasses import replace

    return replace(sampling, seed=(sampling.seed + 1) % 2**64)


_RATING = re.compile(r"Rating:\s*\[\[(\d+)\]\]")


def build_judge_prompt(
    kind: str,
    record,
    answer: str,
    library: TemplateLibrary = _DEFAULT_LIBRARY,
) -> str:
    """Evaluator prompt in one of three flavors: overall quality with the
    profile attached, overall quality without it, or personalization."""
    if not answer:
        raise InvalidInputError("judge prompts need a non-empty answer")
    ids = {
        "overall_with_profile": "judge_overall_with_profile",
        "overall_no_profile": "judge_overall_no_profile",
        "personalization": "judge_personalization",
    }
    if kind not in ids:
        raise InvalidConfigError(f"unknown judge prompt kind {kind!r}")
    values = {"question": record.task, "answer": answer}
    if kind != "overall_no_profile":
        values["profile_info"] = record.profile
        values["writing_history"] = join_history(record.history)
    return library.render(ids[kind], values)


def parse_rating(text: str) -> int:
    """Extract the 1-10 integer from a judge reply's "Rating: [[N]]"."""
    match = _RATING.search(text)
    if not match:
        raise RatingParseError("no 'Rating: [[N]]' marker found")
    rating = int(match.group(1))
    if not 1 <= rating <= 10:
        raise RatingParseError(f"rating {rating} outside 1-10")
    return rating
