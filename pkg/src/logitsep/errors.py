"""Exception types shared across the package."""


class LogitsepError(Exception):
    """Base class for all package errors."""


class DataError(LogitsepError):
    """Malformed or inconsistent input data (datasets, pools, templates, artifacts)."""


class ConfigError(LogitsepError):
    """Invalid pipeline configuration."""


class BackendError(LogitsepError):
    """Logit backend failure (transport, protocol, or oracle lookup)."""

    def __init__(self, message: str, attempts: int | None = None):
        super().__init__(message)
        self.attempts = attempts


class PromptTooLongError(BackendError):
    """Prompt exceeds the backend's declared character budget."""

    def __init__(self, length: int, budget: int):
        super().__init__(f"prompt of {length} chars exceeds backend budget of {budget}")
        self.length = length
        self.budget = budget


class BatchError(BackendError):
    """A query inside a batch failed; carries the position of the failing query."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"query {index} failed: {cause}")
        self.index = index
        self.cause = cause


class StageError(LogitsepError):
    """Pipeline stage failure; names the stage so partial runs are diagnosable."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
