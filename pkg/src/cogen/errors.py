"""Exception hierarchy shared across the engine.

The CLI maps these onto exit codes: usage problems exit 1, data/contract
problems exit 2, transport problems exit 3.
"""

from __future__ import annotations


class CogenError(Exception):
    """Base class for all engine errors."""


class InvalidInputError(CogenError):
    """An operation received arguments outside its stated domain."""


class InvalidConfigError(CogenError):
    """A configuration value violates its constraints."""


class InvalidDistributionError(CogenError):
    """A probability distribution failed validation."""


class IncompatibleVocabError(CogenError):
    """Two components that must share a vocabulary do not."""


class PrivacyContractError(CogenError):
    """Private context was routed toward a context-blind backend."""


class TemplateError(CogenError):
    """A prompt template could not be rendered."""


class SketchParseError(CogenError):
    """No numbered skeleton points could be parsed from model output."""

    def __init__(self, message: str, raw_text: str = "") -> None:
        super().__init__(message)
        self.raw_text = raw_text


class RatingParseError(CogenError):
    """A judge reply carried no in-range ``Rating: [[N]]`` marker."""


class CorpusError(CogenError):
    """A corpus file failed schema validation."""

    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ModelIOError(CogenError):
    """A parameter container could not be read or written."""


class TransportError(CogenError):
    """A network operation failed."""

    def __init__(self, message: str, retryable: bool = True) -> None:
        super().__init__(message)
        self.retryable = retryable


class ProtocolError(CogenError):
    """A wire frame violated the protocol."""


class ServiceStartupError(CogenError):
    """The logit service could not start (e.g. bind failure)."""


class SessionError(CogenError):
    """A generation session aborted mid-stream.

    Carries the partial trace so callers can inspect what was emitted
    before the failure.
    """

    def __init__(self, message: str, partial_trace=None, cause: Exception | None = None) -> None:
        super().__init__(message)
        self.partial_trace = partial_trace
        self.cause = cause
