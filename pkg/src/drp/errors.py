"""Exception hierarchy shared across the package."""


class DRPError(Exception):
    """Base class for all package errors."""


class DimensionError(DRPError, ValueError):
    pass


class ConfigurationError(DRPError, ValueError):
    pass


class VocabularyError(DRPError, IndexError):
    def __init__(self, field: str, value: int, size: int):
        self.field = field
        super().__init__(f"{field}={value} outside vocabulary of size {size}")


class DomainError(DRPError, ValueError):
    pass


class DegeneracyError(DRPError, ValueError):
    pass


class DeterminismError(DRPError, RuntimeError):
    pass


class ContradictionError(DRPError, ValueError):
    pass


class GenerationError(DRPError, RuntimeError):
    pass


class TrainingError(DRPError, RuntimeError):
    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"step {step}: {message}")


class UndefinedMetricError(DRPError, ValueError):
    pass


class ParseError(DRPError, ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SchemaError(ParseError):
    pass
