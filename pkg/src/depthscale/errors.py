"""Exception hierarchy shared across the package.

Validation problems (bad values, malformed file contents, broken
invariants) and plain I/O problems (missing or unreadable files) map to
different CLI exit codes, so they are kept distinct: raise
``ValidationError`` (or a subclass) for the former and let ``OSError``
propagate for the latter.
"""


class DepthScaleError(Exception):
    """Base class for all errors raised by depthscale."""


class ValidationError(DepthScaleError, ValueError):
    """Invalid input values or violated invariants. CLI exit code 3."""


class FileFormatError(ValidationError):
    """A file exists and is readable but its contents are malformed."""


class ManifestError(ValidationError):
    """A dataset manifest violates the manifest schema or its invariants."""
