"""Tempering exponent ladders.

Two modes are supported. ``geometric`` fixes the ladder up front with
``alpha_0 = 0`` and ``alpha_1 .. alpha_T`` growing geometrically up to 1.
``adaptive`` picks each next exponent online by bisection on the ESS.
"""

from dataclasses import dataclass, field

import numpy as np

from .weights import ess, normalize_log_weights


def geometric_exponents(n_iterations, alpha1):
    """``alpha_t = alpha1 * (1/alpha1)**((t-1)/(T-1))`` for t=1..T, with alpha_0=0."""
    if n_iterations < 1:
        raise ValueError("need at least one tempering step")
    if n_iterations == 1:
        return np.array([0.0, 1.0])
    if not 0.0 < alpha1 < 1.0:
        raise ValueError(f"alpha1 must lie in (0, 1), got {alpha1!r}")
    t = np.arange(1, n_iterations + 1)
    alphas = alpha1 * (1.0 / alpha1) ** ((t - 1) / (n_iterations - 1))
    alphas[-1] = 1.0
    return np.concatenate([[0.0], alphas])


@dataclass
class TemperingSchedule:
    """Exponent ladder ``0 = alpha_0 < ... < alpha_T = 1``.

    For ``mode="geometric"`` the exponents are fixed at construction; for
    ``mode="adaptive"`` they are filled in by the sampler and
    ``ess_target_fraction`` controls the step size.
    """

    mode: str = "geometric"
    n_iterations: int = 500
    alpha1: float | None = None
    ess_target_fraction: float | None = None
    max_iterations: int = 10_000
    exponents: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode == "geometric":
            if self.alpha1 is None:
                raise ValueError("geometric schedule needs alpha1")
            self.exponents = geometric_exponents(self.n_iterations, self.alpha1)
        elif self.mode == "adaptive":
            frac = self.ess_target_fraction
            if frac is None or not 0.0 < frac < 1.0:
                raise ValueError("adaptive schedule needs ess_target_fraction in (0, 1)")
        else:
            raise ValueError(f"unknown schedule mode {self.mode!r}")

    @classmethod
    def geometric(cls, n_iterations, alpha1):
        return cls(mode="geometric", n_iterations=n_iterations, alpha1=alpha1)

    @classmethod
    def adaptive(cls, ess_target_fraction, max_iterations=10_000):
        return cls(mode="adaptive", n_iterations=0,
                   ess_target_fraction=ess_target_fraction, max_iterations=max_iterations)

    def to_dict(self):
        d = {"mode": self.mode}
        if self.mode == "geometric":
            d.update(n_iterations=self.n_iterations, alpha1=self.alpha1)
        else:
            d.update(ess_target_fraction=self.ess_target_fraction,
                     max_iterations=self.max_iterations)
        return d

    @classmethod
    def from_dict(cls, d):
        if d["mode"] == "geometric":
            return cls.geometric(int(d["n_iterations"]), float(d["alpha1"]))
        return cls.adaptive(float(d["ess_target_fraction"]), int(d.get("max_iterations", 10_000)))


def next_exponent_adaptive(log_w, bridge, alpha, ess_target_fraction,
                           max_bisections=50, tol=1e-8):
    """Choose the next tempering exponent by bisection on the ESS.

    Parameters
    ----------
    log_w : ndarray
        Current unnormalized log-weights.
    bridge : callable
        ``bridge(alpha_new)`` returns the per-particle incremental log-weights
        for a move from ``alpha`` to ``alpha_new``.
    alpha : float
        Current exponent, < 1.
    ess_target_fraction : float
        The new exponent makes ``ESS_new = fraction * ESS_current``.

    Returns
    -------
    float
        Next exponent in ``(alpha, 1]``; exactly 1 when the full step already
        keeps the ESS above target.
    """
    if not alpha < 1.0:
        raise ValueError("alpha must be < 1")
    current = normalize_log_weights(log_w)
    target = ess_target_fraction * ess(current)

    def ess_at(a):
        lw = log_w + bridge(a)
        return ess(normalize_log_weights(lw))

    if ess_at(1.0) >= target:
        return 1.0
    lo, hi = alpha, 1.0
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        if ess_at(mid) >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return hi
