"""Exception types shared across the pipeline."""


class ContractViolation(ValueError):
    """Input data breaks a documented invariant.

    The CLI maps this to exit code 3; the message should name the invariant.
    """


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""
