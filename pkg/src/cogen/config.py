"""Application configuration: JSON file with a strict schema.

Unknown keys are rejected, referenced files must exist at load time, and
the only environment overrides are COGEN_API_KEY (external service
credentials) and COGEN_LISTEN (service listen address).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .backends import BackendKind, NGramBackend, Role, TableBackend, train_ngram
from .core import SamplingConfig, Vocab
from .errors import InvalidConfigError

LISTEN_ENV = "COGEN_LISTEN"

_TOP_KEYS = {"backends", "templates_dir", "sampling", "service_address", "audit", "external"}
_BACKEND_KEYS = {"kind", "role", "params"}
_SAMPLING_KEYS = {"temperature", "top_p", "max_new_tokens", "seed", "greedy"}
_EXTERNAL_KEYS = {"endpoint", "top_k"}


@dataclass(frozen=True)
class BackendSpec:
    name: str
    kind: BackendKind
    role: Role
    params_path: Path


@dataclass(frozen=True)
class AppConfig:
    backends: dict[str, BackendSpec]
    sampling: SamplingConfig
    templates_dir: Path | None = None
    service_address: str = "127.0.0.1:7341"
    audit: bool = True
    external_endpoint: str | None = None
    external_top_k: int = 10
    base_dir: Path = field(default_factory=Path)


def _reject_unknown(obj: dict, allowed: set, what: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise InvalidConfigError(f"unknown keys in {what}: {sorted(unknown)}")


def load_config(path) -> AppConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise InvalidConfigError(f"config file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidConfigError("config root must be a JSON object")
    _reject_unknown(obj, _TOP_KEYS, "config")
    base = path.parent

    backends: dict[str, BackendSpec] = {}
    for name, spec in obj.get("backends", {}).items():
        _reject_unknown(spec, _BACKEND_KEYS, f"backends.{name}")
        try:
            kind = BackendKind(spec["kind"])
            role = Role(spec["role"])
        except (KeyError, ValueError) as exc:
            raise InvalidConfigError(f"backends.{name}: bad kind/role: {exc}") from exc
        params_path = base / spec.get("params", "") if spec.get("params") else None
        if kind in (BackendKind.TABLE, BackendKind.NGRAM):
            if params_path is None or not params_path.is_file():
                raise InvalidConfigError(
                    f"backends.{name}: params file {params_path} does not exist"
                )
        backends[name] = BackendSpec(
            name=name, kind=kind, role=role, params_path=params_path
        )

    sampling_obj = obj.get("sampling", {})
    _reject_unknown(sampling_obj, _SAMPLING_KEYS, "sampling")
    sampling = SamplingConfig(**sampling_obj)

    templates_dir = None
    if obj.get("templates_dir"):
        templates_dir = base / obj["templates_dir"]
        if not templates_dir.is_dir():
            raise InvalidConfigError(f"templates_dir {templates_dir} does not exist")

    external = obj.get("external", {})
    _reject_unknown(external, _EXTERNAL_KEYS, "external")

    return AppConfig(
        backends=backends,
        sampling=sampling,
        templates_dir=templates_dir,
        service_address=os.environ.get(LISTEN_ENV) or obj.get("service_address", "127.0.0.1:7341"),
        audit=bool(obj.get("audit", True)),
        external_endpoint=external.get("endpoint"),
        external_top_k=int(external.get("top_k", 10)),
        base_dir=base,
    )


def _vocab_from_obj(obj: dict) -> Vocab:
    tokens = tuple(obj["tokens"])
    eos = obj.get("eos", "</s>")
    unk = obj.get("unk", "<unk>")
    return Vocab(tokens=tokens, eos_id=tokens.index(eos), unk_id=tokens.index(unk))


def build_backend(spec: BackendSpec, top_k: int = 10, service_address: str | None = None):
    """Instantiate a live backend from its config entry.

    Table params: {"vocab": {...}, "rules": [{"prefix": [...], "next": {...}}],
    "paths": [[...]], "keyed": [{"needle": ..., "path"|"rules": ...}],
    "default": {...}}. N-gram params: {"n", "alpha", "policy", "corpus"}
    (trained deterministically at load).
    """
    if spec.kind == BackendKind.TABLE:
        obj = json.loads(spec.params_path.read_text(encoding="utf-8"))
        vocab = _vocab_from_obj(obj["vocab"])
        rules = {}
        for rule in obj.get("rules", []):
            rules[tuple(rule["prefix"])] = rule["next"]
        for path_tokens in obj.get("paths", []):
            rules.update(TableBackend.path_rules(vocab, path_tokens))
        keyed = []
        for entry in obj.get("keyed", []):
            if "path" in entry:
                ruleset = TableBackend.path_rules(vocab, entry["path"])
            else:
                ruleset = {tuple(r["prefix"]): r["next"] for r in entry["rules"]}
            keyed.append((entry["needle"], ruleset))
        return TableBackend(vocab, spec.role, rules=rules, keyed=keyed, default=obj.get("default"))
    if spec.kind == BackendKind.NGRAM:
        obj = json.loads(spec.params_path.read_text(encoding="utf-8"))
        vocab = _vocab_from_obj(obj["vocab"]) if "vocab" in obj else None
        model = train_ngram(
            obj["corpus"],
            n=int(obj.get("n", 2)),
            alpha=float(obj.get("alpha", 1.0)),
            vocab_policy=obj.get("policy", "whitespace"),
            vocab=vocab,
        )
        return NGramBackend(model, spec.role)
    if spec.kind == BackendKind.REMOTE:
        raise InvalidConfigError(
            "remote backends are built per-session from the service address"
        )
    raise InvalidConfigError(f"cannot build backend kind {spec.kind}")
