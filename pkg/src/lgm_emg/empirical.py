"""Empirical amplitude pdfs and model pdfs discretized onto the same bins.

Both sides are expressed as per-bin probability masses over identical edges,
with everything outside the span folded into the two edge bins, so that the
area difference and KL divergence compare like with like.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from ._robust import MAD_TO_STD, as_samples
from .errors import ConfigError, DegenerateDataError, NumericError, ShapeError

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


@dataclass(frozen=True)
class HistogramConfig:
    bins: int = 100
    span_sigmas: float = 4.0
    span: tuple | None = None

    def __post_init__(self):
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        if self.span is not None and not self.span[0] < self.span[1]:
            raise ConfigError("explicit span must satisfy lo < hi")


@dataclass(frozen=True, eq=False)
class EmpiricalPdf:
    edges: np.ndarray
    mass: np.ndarray
    n: int = 0

    def __post_init__(self):
        edges = np.array(self.edges, dtype=float)
        mass = np.array(self.mass, dtype=float)
        if edges.ndim != 1 or mass.ndim != 1 or edges.size != mass.size + 1:
            raise ShapeError("need len(edges) == len(mass) + 1")
        if np.any(np.diff(edges) <= 0):
            raise ShapeError("edges must be strictly increasing")
        edges.setflags(write=False)
        mass.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "mass", mass)

    @property
    def bins(self):
        return self.mass.size

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["edge_lo", "edge_hi", "mass"])
        for lo, hi, m in zip(self.edges[:-1], self.edges[1:], self.mass):
            writer.writerow([repr(float(lo)), repr(float(hi)), repr(float(m))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, n=0):
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ShapeError("empty pdf table")
        lo = [float(r["edge_lo"]) for r in rows]
        hi = [float(r["edge_hi"]) for r in rows]
        if not np.array_equal(lo[1:], hi[:-1]):
            raise ShapeError("bins are not contiguous")
        return cls(lo + [hi[-1]], [float(r["mass"]) for r in rows], n)


def robust_span(samples, span_sigmas=4.0):
    z = np.asarray(samples, dtype=float)
    center = float(np.median(z))
    s = MAD_TO_STD * float(np.median(np.abs(z - center)))
    if s <= 0:
        s = float(np.std(z))
    return center - span_sigmas * s, center + span_sigmas * s


def build_histogram(samples, cfg: HistogramConfig = HistogramConfig()):
    """Histogram of ``samples`` as probability masses.

    The default span is the median plus/minus ``span_sigmas`` robust standard
    deviations (1.4826 * MAD); samples beyond it are counted in the edge bins.
    """
    z = as_samples(samples)
    lo, hi = cfg.span if cfg.span is not None else robust_span(z, cfg.span_sigmas)
    if not hi > lo:
        raise DegenerateDataError("histogram span has zero width")
    edges = np.linspace(lo, hi, cfg.bins + 1)
    # searchsorted on interior edges clips out-of-span samples into the edge bins
    idx = np.searchsorted(edges[1:-1], z, side="right")
    counts = np.bincount(idx, minlength=cfg.bins)
    return EmpiricalPdf(edges, counts / z.size, z.size)


def _gl5(pdf, lo, hi):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * GL_NODES[None, :]
    vals = np.asarray(pdf(x.ravel()), dtype=float).reshape(x.shape)
    return half * (vals @ GL_WEIGHTS)


def integrate_bins(pdf, edges, breakpoints=(), rtol=1e-12, atol=1e-15, max_depth=40):
    """Integrate ``pdf`` over each bin with adaptive 5-point Gauss-Legendre.

    Each bin is integrated whole and as two halves; where the two estimates
    disagree beyond tolerance the halves are refined recursively. Bins holding
    one of ``breakpoints`` (known kinks such as a Laplacian peak) are split
    there first, since a kink can make the two estimates agree by accident.
    """
    edges = np.asarray(edges, dtype=float)
    n_bins = edges.size - 1
    lo, hi = edges[:-1].copy(), edges[1:].copy()
    owner = np.arange(n_bins)
    for bp in np.unique(np.asarray(breakpoints, dtype=float).ravel()):
        inside = (lo < bp) & (bp < hi)
        if inside.any():
            lo = np.concatenate([lo, np.full(inside.sum(), bp)])
            hi = np.concatenate([np.where(inside, bp, hi), hi[inside]])
            owner = np.concatenate([owner, owner[inside]])
    out = np.zeros(n_bins)
    coarse = _gl5(pdf, lo, hi)
    for _ in range(max_depth):
        mid = 0.5 * (lo + hi)
        left, right = _gl5(pdf, lo, mid), _gl5(pdf, mid, hi)
        fine = left + right
        if not np.all(np.isfinite(fine)):
            raise NumericError("non-finite quadrature value")
        done = np.abs(fine - coarse) <= np.maximum(atol, rtol * np.abs(fine))
        np.add.at(out, owner[done], fine[done])
        keep = ~done
        if not keep.any():
            return out
        lo = np.concatenate([lo[keep], mid[keep]])
        hi = np.concatenate([mid[keep], hi[keep]])
        coarse = np.concatenate([left[keep], right[keep]])
        owner = np.concatenate([owner[keep], owner[keep]])
    # depth exhausted: accept the finest estimate
    np.add.at(out, owner, coarse)
    return out


def _tail_masses(pdf, cdf, lo, hi):
    if cdf is not None:
        left, right = float(cdf(lo)), 1.0 - float(cdf(hi))
    else:
        left = integrate.quad(pdf, -np.inf, lo, epsabs=1e-14, limit=200)[0]
        right = integrate.quad(pdf, hi, np.inf, epsabs=1e-14, limit=200)[0]
    if not (math.isfinite(left) and math.isfinite(right)):
        raise NumericError("non-finite tail mass")
    return max(left, 0.0), max(right, 0.0)


def kinks(params):
    """Locations where a model density is not smooth (Laplacian peaks)."""
    fam = getattr(getattr(params, "family", None), "value", None)
    if fam == "SL":
        return (params.mu,)
    if fam == "LGM":
        return (params.mu1,)
    return ()


def bin_model(pdf_eval, edges, cdf=None, breakpoints=()):
    """Per-bin probability masses of a model density over ``edges``.

    ``pdf_eval`` may be a vectorized density function or a parameter object
    exposing ``pdf``/``cdf``. Interior bins come from :func:`integrate_bins`;
    the mass below the first and above the last edge is folded into the edge
    bins (from the CDF when available, otherwise by improper quadrature).
    """
    if hasattr(pdf_eval, "pdf"):
        breakpoints = tuple(breakpoints) + kinks(pdf_eval)
        cdf = cdf if cdf is not None else getattr(pdf_eval, "cdf", None)
        pdf_eval = pdf_eval.pdf
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ShapeError("edges must be a strictly increasing vector of length >= 2")
    mass = integrate_bins(pdf_eval, edges, breakpoints)
    left, right = _tail_masses(pdf_eval, cdf, edges[0], edges[-1])
    mass[0] += left
    mass[-1] += right
    if not np.all(np.isfinite(mass)):
        raise NumericError("non-finite bin mass")
    return mass


def model_pdf(model, empirical: EmpiricalPdf):
    """Discretize a fitted model onto the grid of an empirical pdf."""
    params = getattr(model, "params", model)
    return EmpiricalPdf(empirical.edges, bin_model(params, empirical.edges), empirical.n)
