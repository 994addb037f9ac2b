"""Exception hierarchy shared by every minehaul component.

Each error carries a stable ``error_code`` string and the process exit code the
CLI maps it to, so a failure surfaces the same way whether it is raised from a
library call or a subcommand.
"""

from typing import Any, Dict, Optional


class MinehaulError(Exception):
    """Base class for all domain errors."""

    error_code: str = "MINEHAUL_ERROR"
    exit_code: int = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Render the error the way the CLI logs it."""
        return {
            "success": False,
            "message": self.message,
            "error_code": self.error_code,
            "details": self.details,
        }


class ConfigError(MinehaulError):
    """Configuration file or override could not be parsed or validated."""

    error_code = "CONFIG_ERROR"
    exit_code = 2


class ConfigMismatchError(ConfigError):
    """An artifact was produced under a different configuration."""

    error_code = "CONFIG_MISMATCH"


class InputMissingError(MinehaulError):
    """A required input artifact does not exist."""

    error_code = "INPUT_MISSING"
    exit_code = 3


class DatasetParseError(InputMissingError):
    """A JSON Lines file holds a malformed record."""

    error_code = "DATASET_PARSE_ERROR"

    def __init__(self, path: str, line: int, reason: str):
        super().__init__(
            f"{path}:{line}: {reason}", details={"path": path, "line": line}
        )
        self.line = line


class InsufficientDataError(InputMissingError):
    """Not enough frames for a statistic to be meaningful."""

    error_code = "INSUFFICIENT_DATA"


class InvalidInputError(MinehaulError):
    """Non-finite or out-of-domain state handed to the simulator."""

    error_code = "INVALID_INPUT"


class DimensionError(MinehaulError):
    """Array width does not match what a layer expects."""

    error_code = "DIMENSION_ERROR"

    def __init__(self, layer: str, expected: int, got: int):
        super().__init__(
            f"layer '{layer}' expects width {expected}, got {got}",
            details={"layer": layer, "expected": expected, "got": got},
        )
        self.layer = layer


class DomainError(MinehaulError):
    """Argument outside the domain of a special function."""

    error_code = "DOMAIN_ERROR"


class ParameterDomainError(DomainError):
    """Evidential parameters violate nu > 0, alpha > 1 or beta > 0."""

    error_code = "PARAMETER_DOMAIN_ERROR"


class ExpertLostError(MinehaulError):
    """The scripted expert is too far from its route to drive it."""

    error_code = "EXPERT_LOST"


class LossOverflowError(MinehaulError):
    """A loss term became non-finite."""

    error_code = "LOSS_OVERFLOW"
    exit_code = 4

    def __init__(self, term: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(f"non-finite value in loss term '{term}'", details)
        self.term = term


class TrainingDivergenceError(MinehaulError):
    """Training produced non-finite gradients or losses."""

    error_code = "TRAINING_DIVERGENCE"
    exit_code = 4

    def __init__(
        self,
        message: str,
        last_checkpoint: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        details = dict(details or {})
        details["last_checkpoint"] = last_checkpoint
        super().__init__(message, details)
        self.last_checkpoint = last_checkpoint


class GradientCheckError(MinehaulError):
    """Analytic and numerical gradients disagree."""

    error_code = "GRADIENT_CHECK_FAILED"
    exit_code = 4


class BenchmarkThresholdError(MinehaulError):
    """A benchmark run finished below its configured acceptance threshold."""

    error_code = "BENCHMARK_THRESHOLD"
    exit_code = 5
