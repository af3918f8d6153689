"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An operation was called with arguments violating its contract."""


class ConfigurationError(ValueError):
    """A named resource or configuration value cannot be resolved."""


class DegenerateSignalError(ValueError):
    """A zero-norm signal cannot satisfy the power constraint."""


class DivergenceError(RuntimeError):
    """An optimization run diverged."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class NumericalError(ArithmeticError):
    """A numerical routine hit a non-finite value."""

    def __init__(self, message: str, coordinate: int | None = None):
        if coordinate is not None:
            message = f"{message} (coordinate {coordinate})"
        super().__init__(message)
        self.coordinate = coordinate
