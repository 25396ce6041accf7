"""Exception hierarchy shared across the harness."""


class HarnessError(Exception):
    """Base class for all harness failures."""


class ConfigError(HarnessError):
    """Bad configuration file, flag, or argument (CLI exit code 1)."""


class CorpusError(HarnessError):
    """Dataset or schema violates its contract."""


class PerturbError(HarnessError):
    """A perturbation strategy cannot be applied to this utterance."""


class CurationError(HarnessError):
    """Candidate ranking, annotation, or eval-set building failed."""


class GatewayError(HarnessError):
    """Remote model access failed."""


class GatewayTimeoutError(GatewayError):
    """Request timed out after all retries."""


class GatewayHTTPError(GatewayError):
    """Endpoint answered with an HTTP error status."""

    def __init__(self, message: str, status_code: int | None = None):
        super().__init__(message)
        self.status_code = status_code


class GatewayProtocolError(GatewayError):
    """Endpoint answered 200 but the payload is not what the protocol promises."""


class PromptBudgetError(HarnessError):
    """Assembled prompt exceeds the configured token budget."""

    def __init__(self, estimate: int, limit: int):
        super().__init__(f"prompt estimate {estimate} tokens exceeds budget {limit}")
        self.estimate = estimate
        self.limit = limit


class SamplingError(HarnessError):
    """Few-shot selection failed (bad N, unreachable scorer, ...)."""


class ExecutionError(HarnessError):
    """SQL execution failed; `kind` is one of syntax|runtime|timeout|write."""

    def __init__(self, message: str, kind: str):
        super().__init__(message)
        self.kind = kind


class UndefinedMetricError(HarnessError):
    """Metric has an empty denominator (e.g. robust accuracy with empty R_eval)."""
