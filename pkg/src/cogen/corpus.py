"""Dataset schema, validation, filtering, splitting, and statistics.

Corpora are UTF-8 line-delimited JSON, one record per line, validated
strictly on load (see docs/corpus-schema.md for the field reference and
a golden example line). Length filtering uses the dataset-family bounds:
references shorter than 64 characters (emails) / 128 characters (paper
abstracts) or longer than 1024 characters are rejected, bounds
inclusive, characters counted as Unicode scalar values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .backends import ContextBundle
from .errors import CorpusError, InvalidInputError
from .rng import Splitmix64
from .tokenizer import split_text

DATASET_KINDS = ("context_aware", "email", "paper")

MIN_CHARS = {"email": 64, "paper": 128}
MAX_CHARS = 1024

SPLIT_TRAIN_FRACTION = 0.9

_FIELDS = {"user_id", "dataset_kind", "profile", "history", "task", "reference", "general_task"}
_REQUIRED = {"user_id", "dataset_kind", "task", "reference"}


@dataclass(frozen=True)
class CorpusRecord:
    user_id: str
    dataset_kind: str
    task: str
    reference: str
    profile: str = ""
    history: tuple[str, ...] = ()
    general_task: str = ""

    def __post_init__(self) -> None:
        if self.dataset_kind not in DATASET_KINDS:
            raise CorpusError(f"unknown dataset_kind {self.dataset_kind!r}")
        if not self.task:
            raise CorpusError("task must be non-empty")
        if self.dataset_kind == "context_aware" and (not self.profile or not self.history):
            raise CorpusError("context_aware records need a profile and history")
        object.__setattr__(self, "history", tuple(self.history))

    def context_bundle(self) -> ContextBundle:
        return ContextBundle(profile=self.profile, history=self.history)

    def to_json_obj(self) -> dict:
        return {
            "user_id": self.user_id,
            "dataset_kind": self.dataset_kind,
            "profile": self.profile,
            "history": list(self.history),
            "task": self.task,
            "reference": self.reference,
            "general_task": self.general_task,
        }


def _record_from_obj(obj: dict, line_no: int) -> CorpusRecord:
    if not isinstance(obj, dict):
        raise CorpusError("record must be a JSON object", line=line_no)
    unknown = set(obj) - _FIELDS
    if unknown:
        raise CorpusError(f"unknown fields {sorted(unknown)}", line=line_no)
    missing = _REQUIRED - set(obj)
    if missing:
        raise CorpusError(f"missing fields {sorted(missing)}", line=line_no)
    history = obj.get("history", [])
    if not isinstance(history, list) or not all(isinstance(h, str) for h in history):
        raise CorpusError("history must be a list of strings", line=line_no)
    try:
        return CorpusRecord(
            user_id=str(obj["user_id"]),
            dataset_kind=str(obj["dataset_kind"]),
            profile=str(obj.get("profile", "")),
            history=tuple(history),
            task=str(obj["task"]),
            reference=str(obj["reference"]),
            general_task=str(obj.get("general_task", "")),
        )
    except CorpusError as exc:
        raise CorpusError(str(exc), line=line_no) from exc


def load_corpus(path) -> list[CorpusRecord]:
    """Load and validate a corpus file; ordering follows the file."""
    records: list[CorpusRecord] = []
    seen: set[tuple[str, str]] = set()
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"invalid JSON: {exc.msg}", line=line_no) from exc
        record = _record_from_obj(obj, line_no)
        key = (record.user_id, record.task)
        if key in seen:
            raise CorpusError(f"duplicate (user_id, task) pair {key!r}", line=line_no)
        seen.add(key)
        records.append(record)
    return records


def save_corpus(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json_obj(), sort_keys=True, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class RejectedRecord:
    record: CorpusRecord
    reason: str


def filter_lamp(records, kind: str) -> tuple[list[CorpusRecord], list[RejectedRecord]]:
    """Keep records whose reference length sits inside the family bounds."""
    if kind not in MIN_CHARS:
        raise InvalidInputError(f"length filtering applies to email/paper, not {kind!r}")
    lo = MIN_CHARS[kind]
    kept: list[CorpusRecord] = []
    rejected: list[RejectedRecord] = []
    for record in records:
        if record.dataset_kind != kind:
            rejected.append(RejectedRecord(record, f"dataset_kind {record.dataset_kind!r} != {kind!r}"))
            continue
        n = len(record.reference)
        if n < lo:
            rejected.append(RejectedRecord(record, f"reference length {n} below minimum {lo}"))
        elif n > MAX_CHARS:
            rejected.append(RejectedRecord(record, f"reference length {n} above maximum {MAX_CHARS}"))
        else:
            kept.append(record)
    return kept, rejected


def split_train_val(records, seed: int) -> tuple[list[CorpusRecord], list[CorpusRecord]]:
    """Seeded 9:1 shuffle-split; train takes the first floor(0.9 N)."""
    records = list(records)
    if len(records) < 10:
        raise InvalidInputError("need at least 10 records for a 9:1 split")
    order = list(range(len(records)))
    Splitmix64(seed).shuffle(order)
    cut = int(SPLIT_TRAIN_FRACTION * len(records))
    train = [records[i] for i in order[:cut]]
    val = [records[i] for i in order[cut:]]
    return train, val


@dataclass(frozen=True)
class CorpusStats:
    total_users: int
    avg_profile_length: float
    avg_output_length: float
    train_samples: int | None = None
    dev_samples: int | None = None
    test_samples: int | None = None


def corpus_stats(records, tokenizer_policy: str = "whitespace", splits=None) -> CorpusStats:
    records = list(records)
    if not records:
        return CorpusStats(total_users=0, avg_profile_length=0.0, avg_output_length=0.0)
    users = {r.user_id for r in records}
    profile_tokens = [len(split_text(r.profile, tokenizer_policy)) for r in records]
    output_tokens = [len(split_text(r.reference, tokenizer_policy)) for r in records]
    train, dev, test = splits if splits else (None, None, None)
    return CorpusStats(
        total_users=len(users),
        avg_profile_length=sum(profile_tokens) / len(records),
        avg_output_length=sum(output_tokens) / len(records),
        train_samples=train,
        dev_samples=dev,
        test_samples=test,
    )


def render_stats(stats: CorpusStats) -> str:
    """Aligned two-column table of the corpus statistics."""
    def fmt(value) -> str:
        if value is None:
            return "N/A"
        if isinstance(value, float):
            return str(round(value))
        return str(value)

    rows = [
        ("Total Users", fmt(stats.total_users)),
        ("Avg Profile Length", fmt(stats.avg_profile_length)),
        ("Output Length", fmt(stats.avg_output_length)),
        ("Train Samples", fmt(stats.train_samples)),
        ("Dev Samples", fmt(stats.dev_samples)),
        ("Test Samples", fmt(stats.test_samples)),
    ]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


_DETERMINERS = {
    "a", "an", "the", "your", "my", "his", "her", "their", "our", "its", "this",
    "that", "these", "those", "some", "any", "each", "every", "new",
}
_PHRASE_STOPS = {
    "about", "for", "on", "of", "to", "with", "in", "at", "from", "that", "which",
    "regarding", "and", "or", "as", "into", "by",
}
_VERB_LEMMAS = {
    "writes": "write", "writing": "write", "wrote": "write", "written": "write",
    "drafts": "draft", "drafting": "draft", "drafted": "draft",
    "composes": "compose", "composing": "compose", "composed": "compose",
    "creates": "create", "creating": "create", "created": "create",
    "develops": "develop", "developing": "develop", "developed": "develop",
    "prepares": "prepare", "preparing": "prepare", "prepared": "prepare",
    "crafts": "craft", "crafting": "craft", "crafted": "craft",
    "curates": "curate", "curating": "curate", "curated": "curate",
    "designs": "design", "designing": "design", "designed": "design",
    "scripts": "script", "scripting": "script", "scripted": "script",
}


def _clean_word(word: str) -> str:
    return word.strip(".,:;!?'\"()[]").lower()


@dataclass(frozen=True)
class TaskVerbStats:
    verbs: tuple[tuple[str, float], ...]
    objects: tuple[tuple[str, float], ...]


def task_verb_stats(records, top_n: int = 10) -> TaskVerbStats:
    """Rank task root verbs and direct objects by share of all tasks.

    Heuristic: the first word is the root verb (lemmatized through a
    small table); the direct object is the head of the first noun phrase
    after it — leading determiners skipped, phrase cut at the first
    preposition, head taken as the phrase's last word.
    """
    records = list(records)
    if not records or any(not r.task for r in records):
        raise InvalidInputError("task_verb_stats needs records with non-empty tasks")
    verb_counts: dict[str, int] = {}
    object_counts: dict[str, int] = {}
    for record in records:
        words = [_clean_word(w) for w in record.task.split()]
        words = [w for w in words if w]
        if not words:
            continue
        verb = _VERB_LEMMAS.get(words[0], words[0])
        verb_counts[verb] = verb_counts.get(verb, 0) + 1
        phrase: list[str] = []
        for word in words[1:]:
            if word in _PHRASE_STOPS:
                break
            if word in _DETERMINERS and not phrase:
                continue
            phrase.append(word)
        if phrase:
            head = phrase[-1]
            object_counts[head] = object_counts.get(head, 0) + 1
    total = len(records)

    def ranked(counts: dict[str, int]) -> tuple[tuple[str, float], ...]:
        items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]
        return tuple((name, 100.0 * count / total) for name, count in items)

    return TaskVerbStats(verbs=ranked(verb_counts), objects=ranked(object_counts))


def render_verb_stats(stats: TaskVerbStats) -> str:
    """Two-column layout: ranked verbs beside ranked objects."""
    lines = [f"{'Verb':<12} {'Percent (%)':>11}   {'Object':<12} {'Percent (%)':>11}"]
    for i in range(max(len(stats.verbs), len(stats.objects))):
        verb, vp = stats.verbs[i] if i < len(stats.verbs) else ("", None)
        obj, op = stats.objects[i] if i < len(stats.objects) else ("", None)
        vps = f"{vp:.1f}" if vp is not None else ""
        ops = f"{op:.1f}" if op is not None else ""
        lines.append(f"{verb:<12} {vps:>11}   {obj:<12} {ops:>11}")
    return "\n".join(lines)
