"""Exception hierarchy shared by all subpackages."""


class CausalGRError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CausalGRError, ValueError):
    """Operand extents do not agree."""


class ParameterError(CausalGRError, ValueError):
    """A scalar or structural parameter is out of its valid range."""


class NumericError(CausalGRError, ArithmeticError):
    """A forward result contained NaN or Inf."""


class ContractError(CausalGRError, RuntimeError):
    """An operation was called outside its precondition."""


class DatasetParseError(CausalGRError, ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class TrainingError(CausalGRError, RuntimeError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"training diverged at step {step}: {reason}")
        self.step = step


class ConfigError(CausalGRError, ValueError):
    """Invalid experiment configuration; the message names the field."""
