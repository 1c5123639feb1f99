"""Hyper-priors on the noise level with an explicit compact support."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln

from ..errors import SupportError

# closed-form log-densities: the frozen scipy objects are slow for scalar calls
_LOGPDF = {
    "gamma": lambda x, p: ((p["shape"] - 1) * np.log(x) - x / p["scale"]
                           - gammaln(p["shape"]) - p["shape"] * math.log(p["scale"])),
    "uniform": lambda x, p: np.full(np.shape(x), -math.log(p["high"] - p["low"])),
    "loguniform": lambda x, p: -np.log(x) - math.log(math.log(p["high"] / p["low"])),
    "lognormal": lambda x, p: (-np.log(x) - math.log(p["sigma"]) - 0.5 * math.log(2 * math.pi)
                               - 0.5 * ((np.log(x) - p["mu"]) / p["sigma"]) ** 2),
    "halfnormal": lambda x, p: (0.5 * math.log(2 / math.pi) - math.log(p["scale"])
                                - 0.5 * (x / p["scale"]) ** 2),
}

_FAMILIES = {
    "gamma": lambda p: stats.gamma(a=p["shape"], scale=p["scale"]),
    "uniform": lambda p: stats.uniform(loc=p["low"], scale=p["high"] - p["low"]),
    "loguniform": lambda p: stats.loguniform(p["low"], p["high"]),
    "lognormal": lambda p: stats.lognorm(s=p["sigma"], scale=math.exp(p["mu"])),
    "halfnormal": lambda p: stats.halfnorm(scale=p["scale"]),
}


@dataclass(frozen=True)
class HyperPrior:
    """Density on ``theta`` treated as zero outside ``support``.

    The truncated density is not renormalized by :meth:`logpdf`; posterior
    normalization absorbs the constant. :meth:`sample` and
    :meth:`logpdf_normalized` use the truncated, normalized law.

    JSON form: ``{"family": ..., "params": {...}, "support": [lo, hi]}``.
    """

    family: str
    params: dict
    support: tuple
    _dist: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown hyper-prior family {self.family!r}; "
                             f"expected one of {sorted(_FAMILIES)}")
        lo, hi = (float(s) for s in self.support)
        if not 0 < lo < hi < math.inf:
            raise SupportError(f"support must satisfy 0 < lo < hi < inf, got {self.support}")
        object.__setattr__(self, "support", (lo, hi))
        object.__setattr__(self, "params", {k: float(v) for k, v in self.params.items()})
        try:
            dist = _FAMILIES[self.family](self.params)
        except KeyError as exc:
            raise ValueError(f"{self.family} prior needs parameter {exc}") from None
        object.__setattr__(self, "_dist", dist)

    @classmethod
    def gamma(cls, shape, scale, support):
        return cls("gamma", {"shape": shape, "scale": scale}, tuple(support))

    @classmethod
    def from_json(cls, d):
        return cls(d["family"], dict(d["params"]), tuple(d["support"]))

    def to_json(self):
        return {"family": self.family, "params": dict(self.params), "support": list(self.support)}

    def logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        lo, hi = self.support
        inside = (theta >= lo) & (theta <= hi)
        safe = np.where(inside, theta, lo)
        return np.where(inside, _LOGPDF[self.family](safe, self.params), -np.inf)

    def logpdf_inside(self, theta):
        """Scalar log-density for ``theta`` known to lie in the support."""
        return float(_LOGPDF[self.family](theta, self.params))

    @property
    def log_mass(self):
        lo, hi = self.support
        return float(np.log(self._dist.cdf(hi) - self._dist.cdf(lo)))

    def logpdf_normalized(self, theta):
        return self.logpdf(theta) - self.log_mass

    def ppf(self, u):
        """Quantile function of the truncated law."""
        lo, hi = self.support
        clo, chi = self._dist.cdf(lo), self._dist.cdf(hi)
        return np.clip(self._dist.ppf(clo + np.asarray(u) * (chi - clo)), lo, hi)

    def sample(self, u):
        return self.ppf(u)

    def mean(self):
        lo, hi = self.support
        return float(self._dist.expect(lambda x: x, lb=lo, ub=hi, conditional=True))
