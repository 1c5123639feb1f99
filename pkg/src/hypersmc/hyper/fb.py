"""Fully-Bayesian averaging by recycling the particles of every iteration."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from ..errors import MissingSnapshotError, SupportError
from ..smc.particles import Particles
from .ledger import EvidenceLedger, build_ledger, trapezoid_weights
from .posterior import HyperPosterior, hyper_posterior
from .quadrature import golden_section_max


@dataclass
class RecycledPosterior:
    """All stored particles from iterations whose noise level lies in the prior support.

    ``log_knot_weights[j]`` is the normalized log of
    ``p-hat^{theta_j}(y) p(theta_j) g_j`` and the combined weight of particle
    ``n`` at knot ``j`` is that times its normalized within-iteration weight.
    """

    ts: np.ndarray
    thetas: np.ndarray
    log_knot_weights: np.ndarray
    snapshots: list
    posterior: HyperPosterior
    prior: object
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_samples(self):
        return sum(len(s.weights) for s in self.snapshots)

    @property
    def knot_weights(self):
        return np.exp(self.log_knot_weights)

    @property
    def weights(self):
        """Combined weights of all samples, concatenated in knot order."""
        if "weights" not in self._cache:
            kw = self.knot_weights
            if len({len(s.weights) for s in self.snapshots}) == 1:
                w = (kw[:, None] * np.stack([s.weights for s in self.snapshots])).ravel()
            else:
                w = np.concatenate([k * s.weights for k, s in zip(kw, self.snapshots)])
            self._cache["weights"] = w
        return self._cache["weights"]

    def particles(self):
        if "particles" not in self._cache:
            self._cache["particles"] = Particles.concatenate([s.particles for s in self.snapshots])
        return self._cache["particles"]

    def sample_thetas(self):
        return np.repeat(self.thetas, [len(s.weights) for s in self.snapshots])

    def theta_marginal(self):
        return self.knot_weights

    def theta_mean(self):
        return float(np.dot(self.knot_weights, self.thetas))

    def mean(self, field):
        return float(np.dot(self.weights, getattr(self.particles(), field)))


def _in_support(ledger, prior):
    lo, hi = prior.support
    return (ledger.thetas >= lo) & (ledger.thetas <= hi)


def recycle(ledger, snapshots_by_t, prior, posterior=None):
    """Combine stored snapshots under ``prior``; see :func:`fb_average`."""
    mask = _in_support(ledger, prior)
    if not mask.any():
        raise SupportError("no iteration has its noise level inside the prior support")
    ts = ledger.t[mask]
    thetas = ledger.thetas[mask]
    missing = [int(t) for t in ts if snapshots_by_t.get(int(t)) is None]
    if missing:
        raise MissingSnapshotError(f"missing snapshots for iterations {missing[:5]}"
                         f"{'...' if len(missing) > 5 else ''}; rerun with snapshot='all'")
    if thetas.size >= 2:
        log_g = np.log(trapezoid_weights(thetas))
    else:
        log_g = np.zeros(1)
    lk = ledger.log_evidence[mask] + prior.logpdf(thetas) + log_g
    top = lk.max()
    lk = lk - (top + math.log(np.sum(np.exp(lk - top))))
    if posterior is None:
        posterior = hyper_posterior(ledger, prior)
    return RecycledPosterior(ts=ts, thetas=thetas, log_knot_weights=lk,
                             snapshots=[snapshots_by_t[int(t)] for t in ts],
                             posterior=posterior, prior=prior)


def fb_average(trace, prior, ledger=None, posterior=None):
    """Recycled posterior over all iterations inside the prior support.

    Raises
    ------
    SupportError
        If no iteration falls inside the support.
    ValueError
        If a contributing iteration has no stored snapshot.
    """
    ledger = build_ledger(trace) if ledger is None else ledger
    snaps = {r.t: r.snapshot for r in trace.records}
    return recycle(ledger, snaps, prior, posterior)


def sensitivity_reweight(obj, new_prior):
    """Redo the hyper-parameter analysis under ``new_prior`` from stored quantities.

    ``obj`` may be a :class:`RecycledPosterior`, a :class:`HyperPosterior` or
    an :class:`EvidenceLedger`; the result has the matching type (a ledger
    yields a hyper-posterior). No model code is called.
    """
    if isinstance(obj, RecycledPosterior):
        ledger = obj.posterior.ledger
        snaps = dict(zip((int(t) for t in obj.ts), obj.snapshots))
        mask = _in_support(ledger, new_prior)
        for t in ledger.t[mask]:
            if int(t) not in snaps:
                raise SupportError(f"iteration {int(t)} enters the new support but its "
                                   "snapshot was not retained; rebuild from the trace")
        return recycle(ledger, snaps, new_prior)
    if isinstance(obj, HyperPosterior):
        return hyper_posterior(obj.ledger, new_prior)
    if isinstance(obj, EvidenceLedger):
        return hyper_posterior(obj, new_prior)
    raise TypeError(f"cannot reanalyse {type(obj).__name__}")


def weighted_quantile(x, w, q):
    order = np.argsort(x)
    x, w = np.asarray(x, dtype=float)[order], np.asarray(w, dtype=float)[order]
    cw = np.cumsum(w) / np.sum(w)
    return np.interp(q, cw - 0.5 * w / np.sum(w), x)


def silverman_bandwidth(x, w):
    w = np.asarray(w, dtype=float) / np.sum(w)
    mean = np.dot(w, x)
    sd = math.sqrt(max(np.dot(w, (x - mean) ** 2), 0.0))
    q1, q3 = weighted_quantile(x, w, [0.25, 0.75])
    spread = min(sd, (q3 - q1) / 1.34) if q3 > q1 else sd
    n_eff = 1.0 / np.sum(w ** 2)
    return 0.9 * spread * n_eff ** (-0.2)


def _linear_bin(x, w, lo, step, n_grid):
    pos = (x - lo) / step
    left = np.clip(np.floor(pos).astype(np.int64), 0, n_grid - 2)
    frac = pos - left
    return (np.bincount(left, w * (1 - frac), minlength=n_grid)
            + np.bincount(left + 1, w * frac, minlength=n_grid))


def weighted_kde_mode(x, w, n_grid=4096):
    """Mode of a weighted Gaussian kernel density estimate (Silverman bandwidth).

    The sample is linearly binned on a regular grid; the interquartile range
    entering the bandwidth is read from the binned distribution, so no sort
    is needed. The density is evaluated on the grid by FFT convolution and
    the best cell is refined by golden-section search on the exact density
    (to a thousandth of a grid cell),
    using the samples within eight bandwidths. Samples lighter than ``1e-12``
    times the heaviest one are ignored. Degenerate samples (zero spread)
    return their weighted mean.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    keep = w > 1e-12 * w.max()
    x, w = x[keep], w[keep] / np.sum(w[keep])
    xmin, xmax = float(x.min()), float(x.max())
    if not xmax > xmin:
        return float(np.dot(w, x))
    step0 = (xmax - xmin) / (n_grid - 1)
    cdf = np.cumsum(_linear_bin(x, w, xmin, step0, n_grid))
    q1, q3 = np.interp([0.25, 0.75], cdf, xmin + step0 * np.arange(n_grid))
    mean = float(np.dot(w, x))
    sd = math.sqrt(max(float(np.dot(w, (x - mean) ** 2)), 0.0))
    spread = min(sd, (q3 - q1) / 1.34) if q3 > q1 else sd
    h = 0.9 * spread * float(np.sum(w ** 2)) ** 0.2
    if not h > 0:
        return mean
    lo, hi = xmin - 4 * h, xmax + 4 * h
    step = (hi - lo) / (n_grid - 1)
    binned = _linear_bin(x, w, lo, step, n_grid)
    half = int(min(np.ceil(8 * h / step), n_grid - 1))
    kernel = np.exp(-0.5 * (np.arange(-half, half + 1) * step / h) ** 2)
    dens = fftconvolve(binned, kernel, mode="same")
    i = int(np.argmax(dens))
    a, b = lo + max(i - 1, 0) * step, lo + min(i + 1, n_grid - 1) * step
    near = (x > a - 8 * h) & (x < b + 8 * h)
    xn, wn = x[near], w[near]

    def exact(z):
        return float(np.dot(wn, np.exp(-0.5 * ((z - xn) / h) ** 2)))

    z, _ = golden_section_max(exact, a, b, xtol=1e-3 * step)
    return float(z)
