class InvalidInput(ValueError):
    """Raised when arguments violate a documented precondition."""


class InternalError(RuntimeError):
    """Raised when an internal consistency check fails (e.g. an unclipped propensity)."""


class DegenerateDesignWarning(UserWarning):
    """A least-squares design was singular and a tiny ridge penalty was used instead."""
