"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(ValueError):
    """Input is valid in shape but numerically degenerate (e.g. a zero row)."""


class NumericalError(FloatingPointError):
    """A NaN or Inf appeared in a value or gradient."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class ParameterError(ValueError):
    """A scalar hyperparameter is outside its valid range."""


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class FormatError(ValueError):
    """A file could not be parsed. Carries the path and byte offset when known."""

    def __init__(self, path, message: str, offset: int | None = None):
        where = f"{path}" if offset is None else f"{path} @ offset {offset}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.offset = offset


class LengthError(ValueError):
    """Sequence exceeds the decoder's maximum length."""


class DivergenceError(RuntimeError):
    """Training loss blew up or became non-finite."""
