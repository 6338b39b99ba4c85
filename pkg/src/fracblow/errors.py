"""Exception hierarchy shared by every module."""


class FracBlowError(Exception):
    """Base class for all package errors."""


class DomainError(FracBlowError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class NumericalAccuracyError(FracBlowError, ArithmeticError):
    """A numerical routine could not certify its own error budget."""


class HypothesisNotMet(FracBlowError):
    """A precondition inherited from a mathematical statement fails.

    Distinct from :class:`DomainError`: the inputs are well formed, but the
    inequality being checked is not claimed to hold for them.
    """


class UnsupportedVariant(FracBlowError, ValueError):
    """The requested kernel or form is not supported by this operation."""


class ContractError(FracBlowError, RuntimeError):
    """An object was used in a state its contract forbids."""


class ConfigError(FracBlowError, ValueError):
    """A configuration failed validation; ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
