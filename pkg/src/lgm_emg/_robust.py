import numpy as np

from .errors import DegenerateDataError

MAD_TO_STD = 1.4826


def as_samples(samples, min_count=2, what="samples"):
    """Return a finite 1-D float array with at least two distinct values."""
    z = np.asarray(samples, dtype=float).ravel()
    if z.size < min_count:
        raise DegenerateDataError(f"need at least {min_count} {what}, got {z.size}")
    if not np.all(np.isfinite(z)):
        raise DegenerateDataError(f"{what} contain non-finite values")
    if z.min() == z.max():
        raise DegenerateDataError(f"all {what} are identical (zero spread)")
    return z


def robust_center_scale(z):
    """Median and 1.4826*MAD, falling back to the standard deviation when MAD is 0."""
    center = float(np.median(z))
    scale = MAD_TO_STD * float(np.median(np.abs(z - center)))
    if scale <= 0.0:
        scale = float(np.std(z))
    return center, scale
