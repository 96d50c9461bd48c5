"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1,
data/validation errors exit 2, internal invariant violations exit 3.
"""


class LnrcError(Exception):
    """Base class for all package errors."""


class UsageError(LnrcError):
    """Bad command line or API usage (wrong argument combination)."""


class ValidationError(LnrcError):
    """Invalid data: malformed files, bad geometry, out-of-range config."""


class FormatError(ValidationError):
    """Malformed binary payload (bad magic, truncation, bad header)."""


class DegenerateMetricError(ValidationError):
    """A metric provides no usable signal at this input (zero gradient or
    near-zero calibration score)."""


class NonOverlappingCurvesError(ValidationError):
    """Rate-quality curves share no quality range; the rate difference
    integral is undefined."""


class InternalError(LnrcError):
    """An invariant the package promises was violated; indicates a bug."""
