"""Exception taxonomy shared across the pipeline.

DataError covers unreadable/malformed inputs and shape misalignments found in
data; NumericalError covers NaN losses, domain violations and linear-algebra
failures. The CLI maps them onto distinct exit codes.
"""


class RetimbreError(Exception):
    """Base class for package errors."""


class DataError(RetimbreError):
    """Bad or inconsistent input data (files, manifests, shapes)."""


class NumericalError(RetimbreError):
    """Numerical failure: NaN loss, domain violation, non-PSD covariance."""
