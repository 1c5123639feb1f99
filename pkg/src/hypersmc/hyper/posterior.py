"""Marginal posterior of the noise level from an evidence ledger."""

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from ..errors import SupportError
from .ledger import EvidenceLedger
from .prior import HyperPrior
from .quadrature import adaptive_simpson, golden_section_max


@dataclass
class HyperPosterior:
    """``p(theta | y)`` proportional to interpolated evidence times the hyper-prior.

    The log-evidence is interpolated by a shape-preserving piecewise cubic
    in ``log theta`` (see :func:`shape_preserving_slopes`) so the knots are
    reproduced exactly and monotone stretches are not overshot.
    """

    ledger: EvidenceLedger
    prior: HyperPrior
    interpolant: CubicHermiteSpline
    log_shift: float
    tol: float = 1e-8
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def log_norm(self):
        """Log normalizing constant (after the shift), computed on first use."""
        if "log_norm" not in self._cache:
            edges = self._edges()
            shift = self.log_shift
            z = adaptive_simpson(lambda th: np.exp(self.log_unnormalized(th) - shift), edges,
                                 tol=self.tol * _scale(self, edges, shift))
            if not z > 0:
                raise ValueError("posterior normalization is zero")
            self._cache["log_norm"] = math.log(z)
        return self._cache["log_norm"]

    @property
    def support(self):
        return self.prior.support

    def log_evidence(self, theta):
        x = np.log(np.asarray(theta, dtype=float))
        knots = self.interpolant.x
        return self.interpolant(np.clip(x, knots[0], knots[-1]))

    def log_unnormalized(self, theta):
        theta = np.asarray(theta, dtype=float)
        lo, hi = self.support
        inside = (theta >= lo) & (theta <= hi)
        safe = np.where(inside, theta, lo)
        return np.where(inside, self.log_evidence(safe) + self.prior.logpdf(safe), -np.inf)

    def _log_unnormalized_at(self, z):
        """Scalar fast path of :meth:`log_unnormalized` at ``theta = exp(z)`` inside the support."""
        if "coef" not in self._cache:
            self._cache["coef"] = (self.interpolant.x.tolist(), self.interpolant.c.T.tolist())
        x, coef = self._cache["coef"]
        zc = min(max(z, x[0]), x[-1])
        i = min(max(bisect.bisect_right(x, zc) - 1, 0), len(x) - 2)
        c0, c1, c2, c3 = coef[i]
        dz = zc - x[i]
        return ((c0 * dz + c1) * dz + c2) * dz + c3 + self.prior.logpdf_inside(math.exp(z))

    def logpdf(self, theta):
        return self.log_unnormalized(theta) - self.log_shift - self.log_norm

    def pdf(self, theta):
        return np.exp(self.logpdf(theta))

    def _edges(self):
        lo, hi = self.support
        knots = np.sort(self.ledger.thetas)
        inner = knots[(knots > lo) & (knots < hi)]
        return np.concatenate([[lo], inner, [hi]])

    def expect(self, fn, tol=1e-8):
        """``E[fn(theta) | y]`` by adaptive Simpson over the knot panels."""
        return adaptive_simpson(lambda x: fn(x) * self.pdf(x), self._edges(), tol=tol)

    def mean(self):
        if "mean" not in self._cache:
            self._cache["mean"] = self.expect(lambda x: x)
        return self._cache["mean"]

    def cdf(self, theta):
        lo, _ = self.support
        if theta <= lo:
            return 0.0
        edges = self._edges()
        edges = np.concatenate([edges[edges < theta], [theta]])
        return adaptive_simpson(self.pdf, edges)

    def map(self):
        """Maximizer of the posterior density by golden-section search.

        The best of the knots and support endpoints is bracketed by its
        neighbouring evaluation points; the search runs in ``log theta``.
        """
        if "map" in self._cache:
            return self._cache["map"]
        edges = self._edges()
        vals = self.log_unnormalized(edges)
        i = int(np.argmax(vals))
        lo = edges[max(i - 1, 0)]
        hi = edges[min(i + 1, len(edges) - 1)]
        x, _ = golden_section_max(self._log_unnormalized_at, math.log(lo), math.log(hi),
                                  xtol=1e-9)
        x = math.exp(x)
        if not math.isfinite(float(self.log_unnormalized(x))):
            raise ValueError("non-finite posterior objective at the maximizer")
        self._cache["map"] = x
        return x

    def curve(self, n=512):
        """Density on ``n`` log-evenly spaced points across the support."""
        lo, hi = self.support
        grid = np.exp(np.linspace(math.log(lo), math.log(hi), n))
        return grid, self.pdf(grid)


def shape_preserving_slopes(x, y):
    """Knot slopes for a cubic Hermite interpolant of ``y(x)``.

    Starts from the three-point parabolic slope, which makes the
    interpolant exact for quadratics. A knot is a peak when its two secants
    have strictly opposite signs; an interval touching a peak contains the
    turn of the curve and is left free. Every other interval must stay
    monotone, so the slopes at its ends are capped at three times its secant
    (Fritsch-Carlson). Next to a flat secant the slope is zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = np.diff(x)
    s = np.diff(y) / h
    if s.size == 1:
        return np.array([s[0], s[0]])
    d = np.empty_like(x)
    h0, h1, s0, s1 = h[:-1], h[1:], s[:-1], s[1:]
    d[1:-1] = (h1 * s0 + h0 * s1) / (h0 + h1)
    d[0] = _end_slope(h[0], h[1], s[0], s[1])
    d[-1] = _end_slope(h[-1], h[-2], s[-1], s[-2])
    peak = np.zeros(x.size, dtype=bool)
    peak[1:-1] = s0 * s1 < 0
    locked = ~(peak[:-1] | peak[1:])
    cap = np.full(x.size, np.inf)
    cap[:-1] = np.where(locked, 3 * np.abs(s), np.inf)
    cap[1:] = np.minimum(cap[1:], np.where(locked, 3 * np.abs(s), np.inf))
    d = np.sign(d) * np.minimum(np.abs(d), cap)
    d[1:-1] = np.where(s0 * s1 == 0, 0.0, d[1:-1])
    return d


def _end_slope(h0, h1, s0, s1):
    # one-sided parabolic slope, kept on the side of the end secant
    d = ((2 * h0 + h1) * s0 - h0 * s1) / (h0 + h1)
    if d * s0 <= 0:
        return 0.0
    if abs(d) > 3 * abs(s0):
        return 3 * s0
    return d


def hyper_posterior(ledger, prior, tol=1e-8):
    """Build the noise-level posterior; the normalizing constant is computed lazily.

    Raises
    ------
    SupportError
        If the prior support is not contained in the range of ledger knots,
        which would require extrapolating the evidence.
    """
    lo, hi = prior.support
    kmin, kmax = ledger.theta_range
    rtol = 1e-12
    if lo < kmin * (1 - rtol) or hi > kmax * (1 + rtol):
        raise SupportError(f"prior support [{lo}, {hi}] is not inside the ledger range "
                           f"[{kmin}, {kmax}]; refusing to extrapolate")
    if len(ledger) < 2:
        raise SupportError("need at least two ledger knots to interpolate")
    x = np.log(ledger.thetas[::-1])
    y = ledger.log_evidence[::-1]
    interp = CubicHermiteSpline(x, y, shape_preserving_slopes(x, y), extrapolate=False)
    post = HyperPosterior(ledger, prior, interp, 0.0, tol)
    shift = float(np.max(post.log_unnormalized(post._edges())))
    if not math.isfinite(shift):
        raise ValueError("posterior vanishes on the prior support")
    post.log_shift = shift
    return post


def _scale(post, edges, shift):
    # crude trapezoid estimate of the integral, to make the tolerance relative
    grid = np.unique(np.concatenate([edges, np.linspace(edges[0], edges[-1], 257)]))
    est = np.trapezoid(np.exp(post.log_unnormalized(grid) - shift), grid)
    return max(est, 1e-300)


def theta_estimators(obj):
    """``(MAP, posterior mean)`` of the noise level.

    Accepts a :class:`HyperPosterior` (mean by quadrature) or a recycled
    posterior (MAP from its hyper-posterior, mean from the recycled weights).
    """
    if isinstance(obj, HyperPosterior):
        return obj.map(), obj.mean()
    return obj.posterior.map(), obj.theta_mean()
