class ConfigError(ValueError):
    """Invalid configuration or hyperparameter."""


class DataValidationError(ValueError):
    """Input data violates a panel invariant."""


class ParseError(DataValidationError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyStoreError(RuntimeError):
    """A result store holds no model records to report."""
