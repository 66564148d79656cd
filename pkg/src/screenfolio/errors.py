"""
Error Types Module

Every failure raised by the engine derives from ScreenfolioError. Each class
carries a stable machine-readable code and the exit status the CLI maps it to.
"""

from typing import Any, Dict


class ScreenfolioError(Exception):
    """Base class for all engine errors."""

    code = "error"
    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_record(self) -> Dict[str, Any]:
        """
        Build the structured error record written by the CLI.

        Returns:
            Dictionary with the stable error code, the message and any details.
        """
        record: Dict[str, Any] = {"error": self.code, "message": self.message}
        for key, value in self.details.items():
            record[key] = _jsonable(value)
        return record


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return _jsonable(value.tolist())
    return str(value)


class ConfigError(ScreenfolioError):
    """Configuration or experiment spec violates its schema."""

    code = "config"
    exit_code = 2


class DataError(ScreenfolioError):
    """Input data is missing, malformed or violates a panel invariant."""

    code = "data"
    exit_code = 3


class ParseError(DataError):
    """A delimited input file could not be parsed."""

    code = "parse"

    def __init__(self, message: str, path: str = "", line: int = 0, **details: Any):
        super().__init__(message, path=path, line=line, **details)
        self.path = path
        self.line = line


class DuplicateKeyError(DataError):
    """Two observations share the same key."""

    code = "duplicate_key"


class MissingFileError(DataError):
    """A required input file does not exist."""

    code = "missing_file"

    def __init__(self, path: str, purpose: str = ""):
        label = f" ({purpose})" if purpose else ""
        super().__init__(f"Required input file not found{label}: {path}",
                         path=path, purpose=purpose)
        self.path = path


class RuleError(ScreenfolioError):
    """Screening rule could not be parsed, scheduled or evaluated."""

    code = "rule"
    exit_code = 3


class RuleSyntaxError(RuleError):
    """Rule text does not conform to the rule grammar."""

    code = "rule_syntax"

    def __init__(self, message: str, text: str = "", position: int = 0, **details: Any):
        super().__init__(message, text=text, position=position, **details)
        self.text = text
        self.position = position


class UnknownTokenError(RuleSyntaxError):
    """Rule text contains a character sequence outside the grammar's alphabet."""

    code = "rule_unknown_token"

    def __init__(self, text: str, position: int, token: str):
        super().__init__(f"Unknown token {token!r} at position {position}",
                         text=text, position=position, token=token)
        self.token = token


class MissingFeatureError(RuleError):
    """A rule references a feature the row does not supply."""

    code = "missing_feature"

    def __init__(self, feature: str, asset: str = ""):
        where = f" for asset {asset}" if asset else ""
        super().__init__(f"Missing feature '{feature}'{where}", feature=feature, asset=asset)
        self.feature = feature
        self.asset = asset


class RuleScheduleError(RuleError):
    """No rule pair, or more than one, is effective at a date."""

    code = "rule_schedule"


class AgentError(ScreenfolioError):
    """A screening agent's preconditions are not met."""

    code = "agent"
    exit_code = 3


class SeparationError(AgentError):
    """Logistic labels are perfectly separated; the MLE does not exist."""

    code = "separation"


class EstimationError(ScreenfolioError):
    """A precision estimator or weight formula failed."""

    code = "estimation"
    exit_code = 4


class ConvergenceError(EstimationError):
    """An iterative solver did not converge."""

    code = "convergence"


class NotPositiveDefiniteError(EstimationError):
    """A matrix required to be positive definite is not."""

    code = "not_positive_definite"

    def __init__(self, message: str, min_eigenvalue: float, **details: Any):
        super().__init__(message, min_eigenvalue=float(min_eigenvalue), **details)
        self.min_eigenvalue = float(min_eigenvalue)


class SingularMatrixError(EstimationError):
    """A matrix to be inverted is numerically singular."""

    code = "singular_matrix"

    def __init__(self, message: str, condition_number: float, **details: Any):
        super().__init__(message, condition_number=float(condition_number), **details)
        self.condition_number = float(condition_number)


class PortfolioError(EstimationError):
    """A closed-form weight formula is degenerate."""

    code = "portfolio"


class ExperimentError(ScreenfolioError):
    """A theory experiment exceeded its estimator failure threshold."""

    code = "experiment"
    exit_code = 5
