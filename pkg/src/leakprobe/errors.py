"""Exception taxonomy shared across the toolkit.

Two broad families matter to callers: `ValidationError` covers bad inputs
and configuration (the CLI exits 1), `RunError` covers failures while
talking to a backend or executing a run (the CLI exits 2). Every concrete
class carries a stable `kind` string so errors can be matched without
string-parsing messages.
"""

from __future__ import annotations


class LeakprobeError(Exception):
    """Base class for every error raised by this package."""

    kind = "Error"


class ValidationError(LeakprobeError):
    """Bad input data or configuration; detected before or during setup."""

    kind = "ValidationError"


class RunError(LeakprobeError):
    """Failure while executing a generation run or talking to a backend."""

    kind = "RunError"


# -- corpus ------------------------------------------------------------


class ParseError(ValidationError):
    """Malformed row or line in a corpus file."""

    kind = "MalformedRow"

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingFieldError(ParseError):
    kind = "MissingField"

    def __init__(self, field: str, line: int):
        super().__init__(f"missing field {field!r}", line)
        self.field = field


class MissingLabelError(ValidationError):
    kind = "MissingLabel"

    def __init__(self, record_id: str):
        super().__init__(f"record {record_id!r} has no folder label")
        self.record_id = record_id


class MissingSubjectError(ValidationError):
    kind = "MissingSubject"

    def __init__(self, record_id: str):
        super().__init__(f"record {record_id!r} has no subject")
        self.record_id = record_id


class InsufficientRecordsError(ValidationError):
    kind = "InsufficientRecords"


class NoExamplesError(ValidationError):
    kind = "NoExamples"


# -- pii ---------------------------------------------------------------


class UnknownCategoryError(ValidationError):
    kind = "UnknownCategory"

    def __init__(self, name: str):
        super().__init__(f"unknown PII category {name!r}")
        self.name = name


class SpanMismatchError(ValidationError):
    kind = "SpanMismatch"


class EmptyAfterTrimError(ValidationError):
    kind = "EmptyAfterTrim"


class ProvenanceMismatchError(ValidationError):
    kind = "ProvenanceMismatch"


# -- backend -----------------------------------------------------------


class BackendError(RunError):
    kind = "BackendError"


class ConfigError(ValidationError):
    """Auth or backend-configuration problem (e.g. bad API key, HTTP 401)."""

    kind = "ConfigError"


class RateLimitedError(BackendError):
    """HTTP 429 persisted past the retry budget."""

    kind = "RateLimited"


class UpstreamError(BackendError):
    """HTTP 5xx or connection failure persisted past the retry budget."""

    kind = "UpstreamError"


class CompletionTimeoutError(BackendError):
    kind = "Timeout"


class EmptyCorpusError(ValidationError):
    kind = "EmptyCorpus"


# -- attack ------------------------------------------------------------


class ReferenceTooShortError(ValidationError):
    kind = "ReferenceTooShort"


class PlanMismatchError(ValidationError):
    kind = "PlanMismatch"


class RunExistsError(ValidationError):
    """A run directory already holds a manifest; use resume instead."""

    kind = "RunExists"


class RunFailedError(RunError):
    """Too many per-request failures for the run to be analyzable."""

    kind = "RunFailed"
