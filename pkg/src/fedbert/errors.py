"""Exception types raised across the package."""


class FedBertError(Exception):
    """Base class for all package errors."""


class ContractError(FedBertError, ValueError):
    """A precondition of an operation was violated."""


class ShapeError(ContractError):
    """Tensor dimensions do not agree."""


class FormatError(FedBertError, ValueError):
    """A file or label string is malformed."""


class ConfigError(FedBertError, ValueError):
    pass


class SplitError(FedBertError, ValueError):
    pass


class AggregationError(FedBertError, ValueError):
    pass


class DivergenceError(FedBertError, FloatingPointError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, detail, *, silo=None, step=None, cycle=None):
        self.detail = detail
        self.silo = silo
        self.step = step
        self.cycle = cycle
        where = []
        if cycle is not None:
            where.append(f"cycle {cycle}")
        if silo is not None:
            where.append(f"silo {silo}")
        if step is not None:
            where.append(f"step {step}")
        message = f"{detail} ({', '.join(where)})" if where else detail
        super().__init__(message)


class StageError(FedBertError, RuntimeError):
    """Wraps a failure inside an experiment stage with its context."""
