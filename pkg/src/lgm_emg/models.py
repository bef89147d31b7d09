"""Amplitude-distribution model families and their maximum-likelihood fitters.

Four families are supported:

``LGM``
    Laplacian-Gaussian mixture, ``lambda1 * Laplace(mu1, sigma1) + lambda2 * Normal(mu2, sigma2)``,
    fitted by expectation-maximization.
``SG``
    Standalone Gaussian, closed-form MLE.
``SL``
    Standalone Laplacian, closed-form MLE (median and mean absolute deviation).
``SM``
    Gaussian scale mixture with inverse-gamma variance, i.e. a Student-t marginal,
    fitted by EM over the latent precision.

All Laplacian parameters are expressed through the standard deviation ``sigma``;
the scale ``b = sigma / sqrt(2)`` is only used internally.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, special

from ._robust import as_samples, robust_center_scale
from .errors import ConfigError, FitError, NumericError

SQRT2 = math.sqrt(2.0)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

NU_BOUNDS = (0.05, 1.0e6)


class Family(str, enum.Enum):
    LGM = "LGM"
    SG = "SG"
    SL = "SL"
    SM = "SM"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().upper())
        except ValueError:
            raise ConfigError(f"unknown model family {name!r}") from None


# -- elementary densities ----------------------------------------------------


def _normal_logpdf(z, mu, sigma):
    u = (z - mu) / sigma
    return -0.5 * u * u - math.log(sigma) - LOG_SQRT_2PI


def _laplace_logpdf(z, mu, sigma):
    b = sigma / SQRT2
    return -np.abs(z - mu) / b - math.log(2.0 * b)


def _laplace_cdf(z, mu, sigma):
    b = sigma / SQRT2
    u = (np.asarray(z, dtype=float) - mu) / b
    # exp(-|u|) never overflows; split by sign
    half_tail = 0.5 * np.exp(-np.abs(u))
    return np.where(u < 0.0, half_tail, 1.0 - half_tail)


def _t_logpdf(z, mu, scale, nu):
    u = (z - mu) / scale
    # betaln stays accurate for very large nu where gammaln differences cancel
    log_norm = -0.5 * math.log(nu) - special.betaln(0.5 * nu, 0.5) - math.log(scale)
    return log_norm - 0.5 * (nu + 1.0) * np.log1p(u * u / nu)


# -- parameter sets ----------------------------------------------------------


@dataclass(frozen=True)
class GaussianParams:
    mu: float
    sigma: float

    family = Family.SG

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def logpdf(self, z):
        return _normal_logpdf(np.asarray(z, dtype=float), self.mu, self.sigma)

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def cdf(self, z):
        return special.ndtr((np.asarray(z, dtype=float) - self.mu) / self.sigma)

    def n_free(self, zero_mean=False):
        return 1 if zero_mean else 2

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LaplacianParams:
    mu: float
    sigma: float

    family = Family.SL

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def b(self):
        return self.sigma / SQRT2

    def logpdf(self, z):
        return _laplace_logpdf(np.asarray(z, dtype=float), self.mu, self.sigma)

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def cdf(self, z):
        return _laplace_cdf(z, self.mu, self.sigma)

    def n_free(self, zero_mean=False):
        return 1 if zero_mean else 2

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LgmParams:
    """Laplacian-Gaussian mixture parameters.

    ``lambda2`` is derived as ``1 - lambda1`` so the weights always sum to one.
    Component 1 is the Laplacian ``(mu1, sigma1)``, component 2 the Gaussian
    ``(mu2, sigma2)``; both sigmas are standard deviations.
    """

    lambda1: float
    mu1: float
    sigma1: float
    mu2: float
    sigma2: float

    family = Family.LGM

    def __post_init__(self):
        if not 0.0 <= self.lambda1 <= 1.0:
            raise ValueError(f"lambda1 must lie in [0, 1], got {self.lambda1}")
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("sigma1 and sigma2 must be positive")

    @property
    def lambda2(self):
        return 1.0 - self.lambda1

    @property
    def laplacian(self):
        return LaplacianParams(self.mu1, self.sigma1)

    @property
    def gaussian(self):
        return GaussianParams(self.mu2, self.sigma2)

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        return self.lambda1 * self.laplacian.pdf(z) + self.lambda2 * self.gaussian.pdf(z)

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore"):
            log_l1 = math.log(self.lambda1) if self.lambda1 > 0 else -np.inf
            log_l2 = math.log(self.lambda2) if self.lambda2 > 0 else -np.inf
        return np.logaddexp(
            log_l1 + _laplace_logpdf(z, self.mu1, self.sigma1),
            log_l2 + _normal_logpdf(z, self.mu2, self.sigma2),
        )

    def cdf(self, z):
        return self.lambda1 * self.laplacian.cdf(z) + self.lambda2 * self.gaussian.cdf(z)

    def variance(self):
        mean = self.lambda1 * self.mu1 + self.lambda2 * self.mu2
        return (
            self.lambda1 * (self.sigma1**2 + self.mu1**2)
            + self.lambda2 * (self.sigma2**2 + self.mu2**2)
            - mean**2
        )

    def n_free(self, zero_mean=False):
        return 3 if zero_mean else 5

    def to_dict(self):
        d = asdict(self)
        d["lambda2"] = self.lambda2
        return d


@dataclass(frozen=True)
class ScaleMixtureParams:
    """Student-t marginal of a Gaussian whose variance is inverse-gamma distributed."""

    mu: float
    scale: float
    nu: float

    family = Family.SM

    def __post_init__(self):
        if not (self.scale > 0 and self.nu > 0):
            raise ValueError("scale and nu must be positive")

    def logpdf(self, z):
        return _t_logpdf(np.asarray(z, dtype=float), self.mu, self.scale, self.nu)

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def cdf(self, z):
        return special.stdtr(self.nu, (np.asarray(z, dtype=float) - self.mu) / self.scale)

    def n_free(self, zero_mean=False):
        return 2 if zero_mean else 3

    def to_dict(self):
        return asdict(self)


PARAM_TYPES = {
    Family.LGM: LgmParams,
    Family.SG: GaussianParams,
    Family.SL: LaplacianParams,
    Family.SM: ScaleMixtureParams,
}


def params_from_dict(family, values):
    cls = PARAM_TYPES[Family.parse(family)]
    names = cls.__dataclass_fields__.keys()
    return cls(**{k: float(values[k]) for k in names})


def lgm_pdf(z, p: LgmParams):
    return p.pdf(z)


def sm_pdf(z, p: ScaleMixtureParams):
    return p.pdf(z)


# -- fit configuration and results -------------------------------------------


@dataclass(frozen=True)
class EmConfig:
    """Settings shared by the EM fitters.

    ``tol`` is a relative log-likelihood change. ``sigma_floor`` is a multiple of
    the robust standard deviation of the data below which a component is
    considered collapsed.
    """

    tol: float = 1e-8
    max_iter: int = 500
    n_restarts: int = 3
    jitter: float = 0.3
    seed: int = 0
    zero_mean: bool = False
    sigma_floor: float = 1e-6
    nu_init: float = 5.0

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1 or self.n_restarts < 1:
            raise ConfigError("tol must be > 0, max_iter and n_restarts >= 1")
        if not 0 <= self.jitter < 1:
            raise ConfigError("jitter must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class FitResult:
    family: Family
    params: object
    loglik: float
    loglik_trace: tuple = ()
    iterations: int = 0
    converged: bool = True
    n: int = 0
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "family": self.family.value,
            "params": self.params.to_dict(),
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "n": self.n,
            "seed": self.seed,
            "config": dict(self.config),
        }

    @classmethod
    def from_dict(cls, d):
        family = Family.parse(d["family"])
        return cls(
            family=family,
            params=params_from_dict(family, d["params"]),
            loglik=float(d["loglik"]),
            iterations=int(d.get("iterations", 0)),
            converged=bool(d.get("converged", True)),
            n=int(d.get("n", 0)),
            seed=d.get("seed"),
            config=dict(d.get("config", {})),
        )


def _converged(prev, cur, tol):
    return abs(cur - prev) < tol * max(1.0, abs(prev))


def _sum_finite(values, what):
    total = float(np.sum(values))
    if not math.isfinite(total):
        raise NumericError(f"non-finite log-likelihood in {what}")
    return total


def log_likelihood(samples, fit):
    """Total log-likelihood (nats) of ``samples`` under a fitted model."""
    params = fit.params if isinstance(fit, FitResult) else fit
    z = np.asarray(samples, dtype=float).ravel()
    return _sum_finite(params.logpdf(z), params.family.value)


# -- closed-form fitters -----------------------------------------------------


def fit_gaussian_mle(samples, zero_mean=False):
    z = as_samples(samples)
    mu = 0.0 if zero_mean else float(np.mean(z))
    sigma = math.sqrt(float(np.mean((z - mu) ** 2)))
    params = GaussianParams(mu, sigma)
    ll = log_likelihood(z, params)
    return FitResult(Family.SG, params, ll, (ll,), 0, True, z.size, None, {"zero_mean": zero_mean})


def fit_laplacian_mle(samples, zero_mean=False):
    z = as_samples(samples)
    mu = 0.0 if zero_mean else float(np.median(z))
    b = float(np.mean(np.abs(z - mu)))
    params = LaplacianParams(mu, b * SQRT2)
    ll = log_likelihood(z, params)
    return FitResult(Family.SL, params, ll, (ll,), 0, True, z.size, None, {"zero_mean": zero_mean})


# -- LGM expectation-maximization ---------------------------------------------


def _weighted_median(z_sorted, w_sorted, cum):
    np.cumsum(w_sorted, out=cum)
    k = int(np.searchsorted(cum, 0.5 * cum[-1]))
    return float(z_sorted[min(k, z_sorted.size - 1)])


class _Collapse(Exception):
    pass


class _LgmWorkspace:
    """Preallocated buffers for one LGM EM run.

    Per-iteration temporaries of 10^5 samples or more cost more in page faults
    than in arithmetic, so every array the loop touches is allocated once.
    """

    def __init__(self, z, order, zero_mean):
        self.z = z
        self.order = order
        self.zero_mean = zero_mean
        self.z_sorted = z[order] if order is not None else None
        self.abs_z = np.abs(z) if zero_mean else None
        self.sq_z = z * z if zero_mean else None
        self.dev1 = np.empty_like(z)
        self.sq2 = np.empty_like(z)
        self.a = np.empty_like(z)
        self.g = np.empty_like(z)
        self.tmp = np.empty_like(z)
        self.r2 = np.empty_like(z)

    def deviations(self, mu1, mu2):
        """|z - mu1| and (z - mu2)**2, shared views when locations are pinned at 0."""
        if self.zero_mean:
            return self.abs_z, self.sq_z
        np.subtract(self.z, mu1, out=self.dev1)
        np.abs(self.dev1, out=self.dev1)
        np.subtract(self.z, mu2, out=self.sq2)
        np.square(self.sq2, out=self.sq2)
        return self.dev1, self.sq2

    def estep(self, lam, mu1, s1, mu2, s2):
        """Log-likelihood and Laplacian responsibilities (a view of ``self.a``)."""
        dev1, sq2 = self.deviations(mu1, mu2)
        b = s1 / SQRT2
        a, g, tmp = self.a, self.g, self.tmp
        np.multiply(dev1, -1.0 / b, out=a)
        np.exp(a, out=a)
        a *= lam / (2.0 * b)
        np.multiply(sq2, -0.5 / (s2 * s2), out=g)
        np.exp(g, out=g)
        g *= (1.0 - lam) / (s2 * math.sqrt(2.0 * math.pi))
        np.add(a, g, out=g)
        if g.min() > 0.0:
            np.log(g, out=tmp)
            ll = float(tmp.sum())
            if math.isfinite(ll):
                a /= g
                return ll, a
        # underflow somewhere: redo in log space
        log_a = (math.log(lam) if lam > 0 else -np.inf) - dev1 / b - math.log(2.0 * b)
        log_g = (math.log1p(-lam) if lam < 1 else -np.inf) + _normal_logpdf(self.z, mu2, s2)
        log_tot = np.logaddexp(log_a, log_g)
        np.exp(log_a - log_tot, out=a)
        return _sum_finite(log_tot, "LGM E-step"), a


def _lgm_run(ws, init, cfg, floor, center, scale):
    lam, mu1, s1, mu2, s2 = init
    z = ws.z
    n = z.size
    zero_mean = cfg.zero_mean
    ll, r1 = ws.estep(lam, mu1, s1, mu2, s2)
    trace = [ll]
    reinitialized = False
    iterations = 0
    converged = False
    for _ in range(cfg.max_iter):
        iterations += 1
        r2 = np.subtract(1.0, r1, out=ws.r2)
        n1 = float(r1.sum())
        n2 = n - n1
        lam = n1 / n
        if not zero_mean:
            if n1 > 0:
                np.take(r1, ws.order, out=ws.tmp)
                mu1 = _weighted_median(ws.z_sorted, ws.tmp, ws.g)
            if n2 > 0:
                mu2 = float(np.dot(r2, z)) / n2
        dev1, sq2 = ws.deviations(mu1, mu2)
        if n1 > 0:
            s1 = SQRT2 * float(np.dot(r1, dev1)) / n1
        if n2 > 0:
            s2 = math.sqrt(float(np.dot(r2, sq2)) / n2)
        if s1 < floor or s2 < floor:
            if reinitialized:
                raise _Collapse(f"component standard deviation fell below floor {floor:.3g} twice")
            reinitialized = True
            if s1 < floor:
                mu1, s1 = center, scale
            if s2 < floor:
                mu2, s2 = center, scale
            lam = 0.5
            ll, r1 = ws.estep(lam, mu1, s1, mu2, s2)
            # a reinitialized component starts a fresh ascent
            trace = [ll]
            continue
        ll_new, r1 = ws.estep(lam, mu1, s1, mu2, s2)
        trace.append(ll_new)
        if _converged(ll, ll_new, cfg.tol):
            converged = True
            ll = ll_new
            break
        ll = ll_new
    params = LgmParams(min(max(lam, 0.0), 1.0), mu1, s1, mu2, s2)
    return params, ll, trace, iterations, converged


def fit_lgm_em(samples, cfg: EmConfig = EmConfig()):
    """Fit the Laplacian-Gaussian mixture by EM with random restarts.

    The E-step computes the Laplacian responsibility of each sample. The M-step
    sets ``lambda1`` to the mean responsibility, the Gaussian mean/std to their
    responsibility-weighted values, the Laplacian location to the weighted median
    and its scale to the weighted mean absolute deviation. Every update maximizes
    the expected complete-data log-likelihood exactly, so the trace never decreases.

    Restart 0 starts from ``lambda1=0.5``, both locations at the median and both
    standard deviations at the robust std. Restarts 1 and 2 scale the two sigmas
    by ``1 -/+ cfg.jitter`` in both orders so the narrow-Laplacian and the
    wide-Laplacian basins are always explored; further restarts draw random
    jitter from the seeded generator. The two boundary solutions (pure Gaussian, pure
    Laplacian) are also candidates, so the returned fit never loses to either
    standalone model. The highest final log-likelihood wins.
    """
    z = as_samples(samples, min_count=10)
    center, scale = robust_center_scale(z)
    if cfg.zero_mean:
        center = 0.0
    floor = cfg.sigma_floor * scale
    order = None if cfg.zero_mean else np.argsort(z, kind="stable")
    ws = _LgmWorkspace(z, order, cfg.zero_mean)
    rng = np.random.default_rng(cfg.seed)

    best = None
    failures = []
    for restart in range(cfg.n_restarts):
        if restart == 0:
            s1 = s2 = scale
        elif restart <= 2:
            sign = 1.0 if restart == 1 else -1.0
            s1, s2 = scale * (1.0 - sign * cfg.jitter), scale * (1.0 + sign * cfg.jitter)
        else:
            j1, j2 = rng.uniform(-cfg.jitter, cfg.jitter, size=2)
            s1, s2 = scale * (1.0 + j1), scale * (1.0 + j2)
        try:
            run = _lgm_run(ws, (0.5, center, s1, center, s2), cfg, floor, center, scale)
        except _Collapse as exc:
            failures.append(str(exc))
            continue
        if best is None or run[1] > best[1]:
            best = run
    if best is None:
        raise FitError("LGM fit failed on every restart: " + "; ".join(failures))

    sg = fit_gaussian_mle(z, zero_mean=cfg.zero_mean).params
    sl = fit_laplacian_mle(z, zero_mean=cfg.zero_mean).params
    for boundary in (
        LgmParams(0.0, sg.mu, sg.sigma, sg.mu, sg.sigma),
        LgmParams(1.0, sl.mu, sl.sigma, sl.mu, sl.sigma),
    ):
        ll = log_likelihood(z, boundary)
        if ll > best[1]:
            best = (boundary, ll, [ll], 0, True)

    params, ll, trace, iterations, converged = best
    return FitResult(
        Family.LGM, params, ll, tuple(trace), iterations, converged, z.size, cfg.seed, cfg.to_dict()
    )


# -- Student-t (scale mixture) EM --------------------------------------------


def _nu_score(u2, nu):
    """Mean derivative (times two) of the t log-density with respect to ``nu``.

    Equivalent to the usual digamma equation with precision weights
    ``(nu + 1) / (nu + u**2)`` evaluated at the candidate ``nu`` itself.
    """
    return (
        special.digamma(0.5 * (nu + 1.0))
        - special.digamma(0.5 * nu)
        - float(np.mean(np.log1p(u2 / nu)))
        + float(np.mean((u2 - 1.0) / (nu + u2)))
    )


def _nu_update(u2):
    lo, hi = NU_BOUNDS
    f_lo, f_hi = _nu_score(u2, lo), _nu_score(u2, hi)
    if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
        raise FitError("nu solver bracket failure (non-finite score)")
    # a sign that persists to the bound puts the constrained maximizer on it
    if f_hi >= 0:
        return hi
    if f_lo <= 0:
        return lo
    return optimize.brentq(lambda v: _nu_score(u2, v), lo, hi, xtol=1e-10, rtol=1e-12)


def _sm_estep(z, mu, scale, nu):
    u = (z - mu) / scale
    w = (nu + 1.0) / (nu + u * u)
    ll = _sum_finite(_t_logpdf(z, mu, scale, nu), "SM E-step")
    return ll, w


def _sm_run(z, init, cfg, floor):
    mu, scale, nu = init
    n = z.size
    ll, w = _sm_estep(z, mu, scale, nu)
    trace = [ll]
    converged = False
    iterations = 0
    for _ in range(cfg.max_iter):
        iterations += 1
        sw = float(w.sum())
        if not cfg.zero_mean:
            mu = float(np.dot(w, z)) / sw
        d = z - mu
        d *= d
        scale = math.sqrt(float(np.dot(w, d)) / n)
        if scale < floor:
            raise FitError(f"SM scale fell below floor {floor:.3g}")
        d /= scale * scale
        nu_new = _nu_update(d)
        # guard against a non-unimodal score picking a worse root
        if float(np.sum(_t_logpdf(z, mu, scale, nu_new))) >= float(np.sum(_t_logpdf(z, mu, scale, nu))):
            nu = nu_new
        ll_new, w = _sm_estep(z, mu, scale, nu)
        trace.append(ll_new)
        if _converged(ll, ll_new, cfg.tol):
            ll = ll_new
            converged = True
            break
        ll = ll_new
    return ScaleMixtureParams(mu, scale, nu), ll, trace, iterations, converged


def fit_sm_em(samples, cfg: EmConfig = EmConfig()):
    """Fit the Student-t scale mixture by EM.

    E-step: expected latent precisions ``w = (nu + 1) / (nu + u**2)``.
    M-step: weighted mean and scale in closed form, then ``nu`` as the root of
    the digamma equation with the weights re-evaluated at the candidate ``nu``
    (the ECME variant, which maximizes the observed likelihood in ``nu`` and
    converges far faster than the plain EM update when ``nu`` is large).
    Brent's method brackets the root inside ``NU_BOUNDS``.
    """
    z = as_samples(samples, min_count=10)
    center, scale = robust_center_scale(z)
    if cfg.zero_mean:
        center = 0.0
    floor = cfg.sigma_floor * scale
    rng = np.random.default_rng(cfg.seed)
    best = None
    for restart in range(cfg.n_restarts):
        s0 = scale if restart == 0 else scale * (1.0 + rng.uniform(-cfg.jitter, cfg.jitter))
        run = _sm_run(z, (center, s0, cfg.nu_init), cfg, floor)
        if best is None or run[1] > best[1]:
            best = run
    params, ll, trace, iterations, converged = best
    return FitResult(
        Family.SM, params, ll, tuple(trace), iterations, converged, z.size, cfg.seed, cfg.to_dict()
    )


def fit_family(samples, family, cfg: EmConfig = EmConfig()):
    family = Family.parse(family)
    if family is Family.LGM:
        return fit_lgm_em(samples, cfg)
    if family is Family.SM:
        return fit_sm_em(samples, cfg)
    if family is Family.SG:
        return fit_gaussian_mle(samples, zero_mean=cfg.zero_mean)
    return fit_laplacian_mle(samples, zero_mean=cfg.zero_mean)
