"""Exception types shared across the package.

The CLI maps these onto exit codes: validation -> 1, resource -> 2.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ResourceError(RuntimeError):
    """A size or precision guard refused the computation."""


class DegenerateModelError(ValidationError):
    """The model (or an estimate) is degenerate for the requested operation."""
