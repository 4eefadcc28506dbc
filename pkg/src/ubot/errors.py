class ContractViolation(ValueError):
    """An operation was called outside its documented preconditions."""


class UnsupportedOperation(ContractViolation):
    """The combination of arguments is valid in principle but not implemented."""


class NumericalFailure(RuntimeError):
    """A computation produced non-finite values (NaN or infinity)."""
