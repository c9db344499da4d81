"""Exception types shared across the package."""

from __future__ import annotations


class ElastibenchError(Exception):
    """Base class for every error raised by this package."""


class InvalidId(ElastibenchError):
    """A benchmark identifier could not be built or parsed."""


class DataIntegrityError(ElastibenchError):
    """Raw measurements violate structural assumptions (duplicates, bad pairing)."""


class ConfigError(ElastibenchError):
    """An experiment, backend, or CLI configuration is invalid."""


class PlanError(ElastibenchError):
    """An execution plan could not be built."""


class StatsError(ElastibenchError):
    """A statistical routine received unusable input."""


class ComparisonError(ElastibenchError):
    """Two experiments share no comparable benchmarks."""


class AdapterError(ElastibenchError):
    """An adapter misbehaved outside of a single benchmark run (e.g. discovery failed)."""

    def __init__(self, message: str, output: str = ""):
        super().__init__(message)
        self.output = output


class InvocationError(ElastibenchError):
    """A backend invocation failed as a whole (transport, protocol, or deadline).

    ``retryable`` marks failures that are worth re-submitting with a freshly
    derived request seed (e.g. 5xx responses, dropped connections).
    """

    def __init__(self, message: str, kind: str, retryable: bool = False):
        super().__init__(message)
        self.kind = kind
        self.retryable = retryable


class ExperimentAborted(ElastibenchError):
    """The backend became unavailable; partial results are kept on ``partial``."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial
