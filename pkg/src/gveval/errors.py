"""Exception hierarchy.

Every failure the pipeline can report has a named class so that run manifests
can record ``type(exc).__name__`` and the CLI can map families to exit codes.
"""

from __future__ import annotations


class GVEvalError(Exception):
    """Base class for all library errors."""


# -- record validation --------------------------------------------------------


class ValidationError(GVEvalError):
    def __init__(self, record_id: str, detail: str = "") -> None:
        self.record_id = record_id
        self.detail = detail
        msg = f"record {record_id!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class MissingReferences(ValidationError):
    pass


class MissingVisual(ValidationError):
    pass


class EmptyCaption(ValidationError):
    pass


class ConfigError(GVEvalError):
    pass


# -- prompts ------------------------------------------------------------------


class PromptError(GVEvalError):
    pass


class UnsupportedCombination(PromptError, ConfigError):
    pass


class TemplateMissing(PromptError):
    pass


class EmptyReferenceSet(PromptError):
    pass


# -- vision -------------------------------------------------------------------


class VisionError(GVEvalError):
    pass


class EmptyVideo(VisionError):
    pass


class ZeroDimensionImage(VisionError):
    pass


class WrongFrameCount(VisionError):
    pass


class SourceNotFound(VisionError):
    pass


class DecoderFailed(VisionError):
    def __init__(self, returncode: int | None, stderr: str, message: str = "") -> None:
        self.returncode = returncode
        self.stderr = stderr
        super().__init__(message or f"decoder exited with status {returncode}: {stderr.strip()[:500]}")


# -- backends -----------------------------------------------------------------


class BackendError(GVEvalError):
    pass


class AuthError(BackendError):
    pass


class RateLimitedExhausted(BackendError):
    pass


class TransportError(BackendError):
    pass


class MalformedBackendReply(BackendError):
    pass


class CacheCorrupt(BackendError):
    pass


class FixtureParseError(BackendError):
    pass


class UnknownRequest(BackendError):
    pass


# -- score extraction ---------------------------------------------------------


class ScoreError(GVEvalError):
    pass


class NoScoreFound(ScoreError):
    pass


class ScoreOutOfRange(ScoreError):
    def __init__(self, value: int, low: int, high: int) -> None:
        self.value = value
        self.low = low
        self.high = high
        super().__init__(f"score {value} outside [{low}, {high}]")


class MissingDimension(ScoreError):
    def __init__(self, dimension: str) -> None:
        self.dimension = dimension
        super().__init__(f"no wrapped score for {dimension}")


class NoTokenEvidence(ScoreError):
    pass


class DegenerateDistribution(ScoreError):
    pass


class TooFewSamples(ScoreError):
    pass


# -- statistics ---------------------------------------------------------------


class StatsError(GVEvalError):
    pass


class LengthMismatch(StatsError):
    pass


class DegenerateInput(StatsError):
    pass


class DegenerateCategories(DegenerateInput):
    pass


class EmptyPairs(StatsError):
    pass


class MissingColumn(StatsError):
    def __init__(self, record_id: str, column: str) -> None:
        self.record_id = record_id
        self.column = column
        super().__init__(f"record {record_id!r} has no value for {column!r}")


# -- corpus / runs ------------------------------------------------------------


class CorpusError(GVEvalError):
    pass


class ParseError(CorpusError):
    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class SchemaViolation(CorpusError):
    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class DuplicateId(CorpusError):
    def __init__(self, record_id: str, line: int) -> None:
        self.record_id = record_id
        self.line = line
        super().__init__(f"line {line}: duplicate id {record_id!r}")


class IoError(CorpusError):
    pass


class EmptyReport(CorpusError):
    pass
