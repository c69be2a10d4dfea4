"""Exception hierarchy shared across the package."""

from __future__ import annotations

from typing import Optional, Tuple


class MemkeeperError(Exception):
    """Base class for every error raised by memkeeper."""


class InputError(MemkeeperError):
    """Bad user-supplied input: files, schemas, arguments. CLI exit code 1."""


class ExternalServiceError(MemkeeperError):
    """A remote model endpoint failed. CLI exit code 2."""


# memory-core


class MissingPair(InputError):
    def __init__(self, m_id: str, s_id: str):
        super().__init__(f"op table has no entry for pair ({m_id!r}, {s_id!r})")
        self.m_id = m_id
        self.s_id = s_id


class DuplicateTextConflict(UserWarning):
    """A summary sentence duplicated a kept memory sentence and was dropped."""


# op-classify


class ClassifierFailure(ExternalServiceError):
    """The operation classifier could not produce a label.

    ``pair`` holds the offending (m_text, s_text) once known; ``index`` is the
    position of the first failing pair inside a batch.
    """

    def __init__(
        self,
        message: str,
        pair: Optional[Tuple[str, str]] = None,
        index: Optional[int] = None,
    ):
        super().__init__(message)
        self.pair = pair
        self.index = index

    def __str__(self) -> str:
        msg = super().__str__()
        if self.pair is not None:
            msg += f" [pair: {self.pair[0]!r} / {self.pair[1]!r}]"
        if self.index is not None:
            msg += f" [index {self.index}]"
        return msg


class ClassifierTimeout(ClassifierFailure):
    pass


class MalformedResponse(ClassifierFailure):
    pass


class TransportError(ClassifierFailure):
    pass


class DuplicateKey(InputError):
    pass


class EmptyText(InputError):
    pass


# retrieval / metrics


class DimensionMismatch(InputError):
    pass


class EmptyInput(InputError):
    pass


class LengthMismatch(InputError):
    pass


# orchestration


class ConfigError(InputError):
    pass


class GeneratorFailure(ExternalServiceError):
    pass


class SummarizerFailure(ExternalServiceError):
    pass


class EpisodeBusy(MemkeeperError):
    """Another writer is already operating on this episode."""


class EpisodeClosed(MemkeeperError):
    pass


class MissingGold(InputError):
    pass


# dataset-io


class ParseError(InputError):
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaViolation(InputError):
    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"field {field!r}: "
        super().__init__(prefix + message)
        self.field = field
        self.line = line


class ChainBreak(InputError):
    def __init__(self, episode_id: str, session_index: int, message: str = ""):
        detail = message or "memory chain broken"
        super().__init__(f"episode {episode_id!r}, session {session_index}: {detail}")
        self.episode_id = episode_id
        self.session_index = session_index


class UnknownLabel(InputError):
    pass


class ScriptOverflow(InputError):
    pass
