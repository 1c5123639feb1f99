"""Importance weight utilities: normalization, ESS and systematic resampling.

Weights are carried in the log domain throughout; normalization uses a
max-shift so that products of many likelihood ratios never underflow.
"""

import numpy as np

from ..errors import DegeneratePopulationError


def log_mean_exp(log_w):
    """log((1/N) * sum(exp(log_w)))."""
    log_w = np.asarray(log_w, dtype=float)
    top = np.max(log_w)
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.mean(np.exp(log_w - top))))


def normalize_log_weights(log_w):
    """Return normalized weights W from unnormalized log-weights.

    Raises
    ------
    DegeneratePopulationError
        If every weight is zero (all log-weights are -inf).
    """
    log_w = np.asarray(log_w, dtype=float)
    if np.any(np.isnan(log_w)):
        raise DegeneratePopulationError("NaN log-weight")
    top = np.max(log_w)
    if not np.isfinite(top):
        raise DegeneratePopulationError("all importance weights are zero")
    w = np.exp(log_w - top)
    return w / w.sum()


def ess(weights):
    """Effective sample size 1 / sum(W_i^2) of normalized weights.

    Unnormalized input is accepted and normalized first, so that a zero
    vector is reported as degenerate rather than as ESS=inf.
    """
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise DegeneratePopulationError("all importance weights are zero")
    w = w / total
    return float(1.0 / np.dot(w, w))


def ess_from_log_weights(log_w):
    return ess(normalize_log_weights(log_w))


def systematic_resample(weights, u):
    """Systematic resampling with a single uniform draw.

    Parameters
    ----------
    weights : array_like, shape (N,)
        Normalized weights.
    u : float
        Uniform draw in [0, 1); the N strata are ``(u + i) / N``.

    Returns
    -------
    ndarray of int, shape (N,)
        Ancestor indices, sorted non-decreasing. Index ``i`` appears
        ``floor(N W_i)`` or ``ceil(N W_i)`` times.
    """
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u!r}")
    w = np.asarray(weights, dtype=float)
    n = w.size
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    positions = (u + np.arange(n)) / n
    return np.searchsorted(cdf, positions, side="right").astype(np.int64)
