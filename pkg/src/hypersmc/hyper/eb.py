"""Empirical-Bayes selection of the noise level and anchor reweighting."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..smc.weights import ess, log_mean_exp, normalize_log_weights
from .quadrature import golden_section_max

log = logging.getLogger(__name__)

MIN_ESS = 5.0


def anchor_iteration(thetas, theta_bar):
    """Largest index ``t`` with ``thetas[t] > theta_bar``.

    ``thetas`` must be strictly decreasing; the chosen iteration is the one
    whose noise level is the closest from above, so its posterior is wider
    than the target and serves as an importance-sampling proposal.
    """
    thetas = np.asarray(thetas, dtype=float)
    if np.any(np.diff(thetas) >= 0):
        raise ValueError("thetas must be strictly decreasing")
    above = np.flatnonzero(thetas > theta_bar)
    if above.size == 0:
        raise ValueError(f"theta_bar={theta_bar} is not below any stored value")
    return int(above[-1])


@dataclass
class Reweighted:
    particles: object
    weights: np.ndarray
    log_weights: np.ndarray
    ess: float
    degenerate: bool
    log_evidence_ratio: float


def reweight_to_theta(snapshot, theta_from, theta_to, model):
    """Importance-correct a stored weighted sample from ``theta_from`` to ``theta_to``.

    Each weight is multiplied by the likelihood ratio, evaluated from the
    statistics cached in the particles. ``log_evidence_ratio`` estimates
    ``log p^{theta_to}(y) - log p^{theta_from}(y)``.
    """
    p = snapshot.particles
    base = np.log(np.asarray(snapshot.weights, dtype=float))
    if theta_to == theta_from:
        incr = np.zeros(len(p))
    else:
        incr = model.log_likelihood(p, theta_to) - model.log_likelihood(p, theta_from)
    with np.errstate(invalid="ignore"):
        lw = base + incr
    w = normalize_log_weights(lw)
    e = ess(w)
    degenerate = e < MIN_ESS
    if degenerate:
        log.warning("ESS %.2f after reweighting to theta=%g is below %g", e, theta_to, MIN_ESS)
    return Reweighted(p, w, lw, e, degenerate, float(log_mean_exp(lw) + math.log(len(lw))))


@dataclass
class EBResult:
    theta: float
    log_objective: float
    anchor_t: int
    refined: bool


def eb_select(posterior, trace=None, model=None, refine=False):
    """Maximizer of the noise-level posterior.

    Golden-section search on the interpolated log posterior. With
    ``refine=True`` the search is repeated inside the bracket around the
    interpolated optimum, with the log-evidence at each probe estimated by
    importance sampling from the stored snapshot of the anchor iteration.
    """
    theta = posterior.map()
    obj = float(posterior.log_unnormalized(theta))
    if not math.isfinite(obj):
        raise ValueError("non-finite EB objective")
    anchor = None
    if trace is not None:
        anchor = anchor_iteration(trace.thetas, theta)
    if not refine:
        return EBResult(theta, obj, anchor, False)
    if trace is None or model is None:
        raise ValueError("refinement needs the trace and the model")
    rec = trace.records[anchor]
    if rec.snapshot is None:
        raise ValueError(f"no snapshot stored at anchor iteration {anchor}")
    lo = trace.records[min(anchor + 1, len(trace.records) - 1)].theta
    lo = max(lo, posterior.support[0])
    hi = min(rec.theta, posterior.support[1])

    def objective(z):
        th = math.exp(z)
        rw = reweight_to_theta(rec.snapshot, rec.theta, th, model)
        return float(rec.log_evidence + rw.log_evidence_ratio + posterior.prior.logpdf(th))

    z, val = golden_section_max(objective, math.log(lo), math.log(hi), xtol=1e-9)
    if not math.isfinite(val):
        raise ValueError("non-finite refined EB objective")
    return EBResult(math.exp(z), val, anchor_iteration(trace.thetas, math.exp(z)), True)
