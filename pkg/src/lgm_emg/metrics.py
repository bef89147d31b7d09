"""Goodness-of-fit measures between binned pdfs and between nested fits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from .errors import ConfigError, DataError, DomainError, FitError, ShapeError
from .models import Family, FitResult, log_likelihood

KLD_FLOOR = 1e-12
MASS_TOL = 1e-9


class UsageError(ConfigError):
    pass


def _mass_pair(p, q):
    p = np.asarray(getattr(p, "mass", p), dtype=float)
    q = np.asarray(getattr(q, "mass", q), dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError(f"mass vectors differ in shape: {p.shape} vs {q.shape}")
    for v in (p, q):
        if np.any(v < 0) or abs(v.sum() - 1.0) > MASS_TOL:
            raise DataError("mass vectors must be non-negative and sum to 1")
    return p, q


def kl_divergence(p1, p2):
    """KL divergence sum(p1 * ln(p1 / p2)) in nats.

    Both vectors are floored at 1e-12 and renormalized first so empty bins
    keep the estimate finite without changing the support.
    """
    p, q = _mass_pair(p1, p2)
    p = np.maximum(p, KLD_FLOOR)
    q = np.maximum(q, KLD_FLOOR)
    p /= p.sum()
    q /= q.sum()
    return max(0.0, float(np.sum(p * np.log(p / q))))


def area_difference(e, p):
    """Sum of absolute per-bin mass differences, in [0, 2]."""
    a, b = _mass_pair(e, p)
    return float(np.sum(np.abs(a - b)))


def chi_square_sf(x, df):
    """Upper-tail probability of the chi-square distribution."""
    if df <= 0 or int(df) != df:
        raise DomainError(f"df must be a positive integer, got {df}")
    if not x >= 0:
        raise DomainError(f"x must be non-negative, got {x}")
    if x == 0:
        return 1.0
    # Q(df/2, x/2), the regularized upper incomplete gamma
    return float(special.gammaincc(0.5 * df, 0.5 * x))


@dataclass(frozen=True)
class LrtResult:
    statistic: float
    df: int
    p_value: float
    reject_null_at_05: bool
    null_family: str = "SG"
    alt_family: str = "LGM"
    zero_mean: bool = False

    def to_dict(self):
        return asdict(self)


def likelihood_ratio_test(null_fit: FitResult, alt_fit: FitResult, samples=None, slack=1e-6):
    """Test a standalone null model against the LGM alternative.

    The statistic is ``2 * (loglik_LGM - loglik_null)`` with degrees of freedom
    equal to the difference in free parameters (3, or 2 with zero-mean fits).
    When ``samples`` are supplied both log-likelihoods are recomputed on them.
    """
    if alt_fit.family is not Family.LGM:
        raise UsageError(f"alternative must be an LGM fit, got {alt_fit.family.value}")
    if null_fit.family not in (Family.SG, Family.SL):
        raise UsageError(f"null must be SG or SL, got {null_fit.family.value}")
    if null_fit.n != alt_fit.n:
        raise UsageError(f"fits use different sample counts ({null_fit.n} vs {alt_fit.n})")
    zm_null = bool(null_fit.config.get("zero_mean", False))
    zm_alt = bool(alt_fit.config.get("zero_mean", False))
    if zm_null != zm_alt:
        raise UsageError("null and alternative disagree on zero_mean")
    if samples is not None:
        z = np.asarray(samples, dtype=float).ravel()
        if z.size != alt_fit.n:
            raise UsageError(f"{z.size} samples supplied for fits on {alt_fit.n}")
        ll_null, ll_alt = log_likelihood(z, null_fit), log_likelihood(z, alt_fit)
    else:
        ll_null, ll_alt = null_fit.loglik, alt_fit.loglik

    statistic = 2.0 * (ll_alt - ll_null)
    if statistic < -slack:
        raise FitError(
            f"LGM log-likelihood below the nested {null_fit.family.value} model by {-statistic / 2:.3g} nats; "
            "refit with more restarts"
        )
    df = alt_fit.params.n_free(zm_alt) - null_fit.params.n_free(zm_null)
    p = chi_square_sf(max(statistic, 0.0), df)
    p = min(1.0, max(0.0, p))
    return LrtResult(statistic, df, p, bool(p < 0.05), null_fit.family.value, alt_fit.family.value, zm_alt)


def median(values):
    vals = sorted(v for v in values if v is not None and math.isfinite(v))
    if not vals:
        return None
    return float(np.median(vals))
