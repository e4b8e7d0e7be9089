"""Exception types shared across the package.

The CLI maps these onto exit codes: validation errors exit 1, divergence
exits 2, I/O problems (plain OSError) exit 3.
"""


class ValidationError(ValueError):
    """Invalid argument, configuration value, or precondition violation."""


class ParseError(ValidationError):
    """Malformed dataset row; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LabelError(ValidationError):
    """Unknown class label in a dataset row."""

    def __init__(self, line: int, label: str):
        super().__init__(f"line {line}: unknown label {label!r}")
        self.line = line
        self.label = label


class CapacityError(ValidationError):
    """Requested partition exceeds the available sample count."""


class NonFiniteError(ValidationError):
    """A vector that must be finite contains inf or nan."""


class DivergenceError(RuntimeError):
    """Training produced non-finite parameters; carries the round index."""

    def __init__(self, round_index: int):
        super().__init__(
            f"non-finite global parameters after round {round_index}"
        )
        self.round_index = round_index
