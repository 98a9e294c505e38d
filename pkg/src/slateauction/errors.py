"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad configuration file or config values (CLI exit code 1)."""


class InfeasibleSlateError(RuntimeError):
    """No feasible item exists for a slot, or a slate violates its constraints.

    Carries the slot index (1-based) and the constraint names active there,
    when raised during decoding.
    """

    def __init__(self, message, position=None, active_constraints=None):
        super().__init__(message)
        self.position = position
        self.active_constraints = list(active_constraints or [])


class NumericError(ArithmeticError):
    """Non-finite values or out-of-domain probabilities in a numeric path."""


class TrainingDivergedError(RuntimeError):
    """Loss became NaN/Inf during training; message carries diagnostics."""


class ContractViolationError(RuntimeError):
    """A caller broke a documented precondition (e.g. unfrozen scorer params)."""
