from typing import Optional

# Exit codes used by the CLI
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class HilatError(Exception):
    """Base error. Carries an exit code and a human-readable detail."""

    exit_code = EXIT_FAILURE

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


# ============================================================================
# Numeric / tensor errors
# ============================================================================

class ShapeError(HilatError):
    exit_code = EXIT_NUMERIC


class IndexOutOfRangeError(HilatError, IndexError):
    exit_code = EXIT_NUMERIC

    def __str__(self) -> str:
        return self.detail


class DegenerateMaskError(HilatError):
    exit_code = EXIT_NUMERIC


class DomainError(HilatError):
    exit_code = EXIT_NUMERIC


class NonFiniteError(HilatError):
    exit_code = EXIT_NUMERIC


class TrainingDivergedError(HilatError):
    """Raised when the loss or a gradient becomes non-finite during training."""

    exit_code = EXIT_NUMERIC

    def __init__(self, detail: str, step: int = 0, last_good: Optional[dict] = None):
        super().__init__(detail)
        self.step = step
        self.last_good = last_good


# ============================================================================
# Usage / configuration errors
# ============================================================================

class UsageError(HilatError):
    exit_code = EXIT_USAGE


class ConfigError(HilatError):
    exit_code = EXIT_USAGE


class CorpusSpecError(ConfigError):
    pass


# ============================================================================
# Data / format errors
# ============================================================================

class DatasetFormatError(HilatError):
    exit_code = EXIT_DATA

    def __init__(self, detail: str, line: Optional[int] = None):
        if line is not None:
            detail = f"line {line}: {detail}"
        super().__init__(detail)
        self.line = line


class LabelValidationError(HilatError):
    exit_code = EXIT_DATA


class CheckpointFormatError(HilatError):
    exit_code = EXIT_DATA

    def __init__(self, detail: str, field: Optional[str] = None):
        if field is not None:
            detail = f"{field}: {detail}"
        super().__init__(detail)
        self.field = field


class TruncatedPayloadError(CheckpointFormatError):
    pass


class LookupFailedError(HilatError, KeyError):
    exit_code = EXIT_DATA

    def __str__(self) -> str:
        return self.detail


class DegenerateDocumentError(HilatError):
    exit_code = EXIT_DATA


class EvaluationError(HilatError):
    exit_code = EXIT_DATA
