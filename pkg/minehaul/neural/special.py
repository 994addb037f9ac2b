"""Special functions used by the evidential loss."""

from typing import Union

import numpy as np
from scipy import special

from minehaul.errors import DomainError

ArrayLike = Union[float, np.ndarray]


def log_gamma(x: ArrayLike) -> ArrayLike:
    """ln Gamma(x) for x > 0.

    Raises:
        DomainError: If any argument is non-positive or non-finite
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("log_gamma is defined for finite x > 0", details={"min": float(np.min(arr))})
    out = special.gammaln(arr)
    return float(out) if out.ndim == 0 else out


def digamma(x: ArrayLike) -> ArrayLike:
    """Derivative of ``log_gamma``."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("digamma is evaluated for finite x > 0 only")
    out = special.digamma(arr)
    return float(out) if out.ndim == 0 else out
