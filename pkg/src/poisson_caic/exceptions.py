"""Exception types raised by the package."""

from __future__ import annotations


class DimensionError(ValueError):
    """Array shapes disagree with the dataset; ``cluster`` names the culprit."""

    def __init__(self, message: str, cluster: int | None = None):
        super().__init__(message)
        self.cluster = cluster


class DomainError(ValueError):
    """A value lies outside the domain of the Poisson model (e.g. mu <= 0)."""


class LinkOverflowError(FloatingPointError):
    """exp(eta) overflowed; ``eta`` holds the offending linear predictor."""

    def __init__(self, eta: float):
        super().__init__(f"exp overflow at linear predictor value {eta!r}")
        self.eta = eta


class RankDeficiencyError(ValueError):
    """The fixed-effects design is not of full column rank."""

    def __init__(self, columns: list[str]):
        super().__init__(
            "fixed-effects design is rank deficient; collinear column(s): "
            + ", ".join(columns)
        )
        self.columns = columns


class SingularHessianError(ValueError):
    """A Newton system could not be solved; ``condition`` is its estimate."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition number ~ {condition:.3g})")
        self.condition = condition


class UnsupportedStructureError(NotImplementedError):
    """Requested random-effect structure is not implemented."""


class DataFormatError(ValueError):
    """Malformed input file; ``line`` is the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
