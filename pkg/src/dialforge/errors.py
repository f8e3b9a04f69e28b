"""Shared exception hierarchy.

Everything raised on purpose by this package derives from DialforgeError so
callers (and the CLI exit-code mapping) can tell our failures from bugs.
"""


class DialforgeError(Exception):
    """Base class for all errors raised by dialforge."""


class ValidationError(DialforgeError):
    """Bad input data or configuration."""


class IngestError(ValidationError):
    """A corpus record failed schema validation in strict mode."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class IllegalTransitionError(DialforgeError):
    """A lifecycle decision was not legal for the record's current state."""

    def __init__(self, record_id: str, current_state: str, attempted: str):
        super().__init__(
            f"record {record_id}: decision '{attempted}' is illegal from state "
            f"'{current_state}'"
        )
        self.record_id = record_id
        self.current_state = current_state
        self.attempted = attempted


class ProviderError(DialforgeError):
    """A chat/embedding provider call failed for good."""


class TransientProviderError(ProviderError):
    """A provider failure worth retrying (timeouts, 5xx)."""


class ProviderExhaustedError(ProviderError):
    """All retry attempts failed."""

    def __init__(self, attempts: int, last: Exception):
        super().__init__(f"provider call failed after {attempts} attempts: {last}")
        self.attempts = attempts


class CassetteMissError(ProviderError):
    """Replay mode found no recorded response for a request fingerprint."""

    def __init__(self, fingerprint: str):
        super().__init__(f"no cassette entry for request fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class InfeasiblePlanError(ValidationError):
    """A sampling plan asks for data no (scene, task) cell can supply."""


class CoverageError(ValidationError):
    """The template registry cannot cover a required section for a scene."""


class RestructureError(DialforgeError):
    """Prompt restructuring dropped a required format constraint."""


class JudgeParseError(DialforgeError):
    """The judge's reply could not be parsed after retrying."""
