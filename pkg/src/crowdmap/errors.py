"""Exception types shared across the toolkit."""


class ValidationError(ValueError):
    """Input violates a documented invariant (bad file, bad shape, bad flag)."""


class DegenerateDirectionError(ValidationError):
    """A background point was requested for a pixel sitting exactly on its head."""


class FitDivergedError(RuntimeError):
    """The optimizer produced a non-finite loss."""
