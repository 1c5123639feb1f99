"""Gaussian-waveform mean estimation under additive white noise.

Observations ``y_i = N(t_i; mu, sigma^2) + eps_i`` with ``eps_i ~ N(0, theta^2)``
and a flat prior on ``mu`` over ``[-5, 5]``. The noise level enters only
through the residual sum of squares, so each particle stores that statistic
and the likelihood at any ``theta`` is available without touching the data.
"""

import math
import threading
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri

from ..smc.particles import Particles
from ..smc.sampler import metropolis_accept
from .nef import theta_of_alpha


_SQRT_2PI = math.sqrt(2 * math.pi)


def _normals(u):
    return ndtri(np.clip(u, 1e-16, 1 - 1e-16))


def waveform(times, mu, sigma):
    """Gaussian pdf values ``N(t; mu, sigma^2)``; broadcasts ``mu`` over rows."""
    mu = np.asarray(mu, dtype=float).reshape(-1, 1)
    z = (np.asarray(times, dtype=float)[None, :] - mu) / sigma
    return np.exp(-0.5 * z * z) * (1.0 / (sigma * _SQRT_2PI))


def gaussian_loglik_from_rss(rss, n_obs, theta):
    """Sum of ``log N(r_i; 0, theta^2)`` given ``rss = sum r_i^2``."""
    theta = np.asarray(theta, dtype=float)
    return -0.5 * n_obs * np.log(2 * math.pi * theta ** 2) - 0.5 * rss / theta ** 2


@dataclass
class ToyModel:
    """Toy waveform model.

    The noise ladder is ``theta(alpha) = theta_star / sqrt(alpha)``.
    """

    times: np.ndarray
    data: np.ndarray
    waveform_sigma: float = 1.0
    theta_star: float = 0.05
    prior_bounds: tuple = (-5.0, 5.0)
    step_scale: float = 2.38
    name: str = "toy"
    n_init_uniforms: int = 1
    n_move_uniforms: int = 2
    particle_dtypes: dict = field(default_factory=lambda: {"mu": "float64", "rss": "float64"})
    n_evals: int = field(default=0, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.times.shape != self.data.shape:
            raise ValueError("times and data must have equal length")
        if not self.theta_star > 0:
            raise ValueError("theta_star must be positive")

    @property
    def n_obs(self):
        return self.data.size

    def with_theta_star(self, theta_star):
        return replace(self, theta_star=float(theta_star), n_evals=0, _lock=threading.Lock())

    def config(self):
        return {"waveform_sigma": self.waveform_sigma, "theta_star": self.theta_star,
                "prior_bounds": list(self.prior_bounds), "n_obs": self.n_obs,
                "step_scale": self.step_scale}

    # -- likelihood ---------------------------------------------------------

    def rss(self, mu):
        """Residual sum of squares per ``mu``; the only data-touching evaluation."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        with self._lock:
            self.n_evals += mu.size
        resid = self.data[None, :] - waveform(self.times, mu, self.waveform_sigma)
        return np.einsum("ij,ij->i", resid, resid)

    def log_likelihood(self, particles, theta):
        return gaussian_loglik_from_rss(particles.rss, self.n_obs, theta)

    def log_prior(self, mu):
        lo, hi = self.prior_bounds
        mu = np.asarray(mu, dtype=float)
        inside = (mu >= lo) & (mu <= hi)
        return np.where(inside, -math.log(hi - lo), -np.inf)

    def theta_of_alpha(self, alpha):
        return theta_of_alpha(self.theta_star, alpha)

    def log_bridge(self, particles, alpha):
        if alpha == 0:
            return np.zeros(len(particles))
        return self.log_likelihood(particles, self.theta_of_alpha(alpha))

    # -- sampling -------------------------------------------------------------

    def sample_prior(self, u):
        lo, hi = self.prior_bounds
        mu = lo + (hi - lo) * u[:, 0]
        return Particles(mu=mu, rss=self.rss(mu))

    def tune(self, particles, weights):
        mean = np.dot(weights, particles.mu)
        sd = math.sqrt(max(np.dot(weights, (particles.mu - mean) ** 2), 0.0))
        return {"step": self.step_scale * max(sd, 1e-4)}

    def move(self, particles, alpha, u, tuning):
        """Gaussian random-walk Metropolis on ``mu``; out-of-support proposals are rejected."""
        mu = particles.mu
        prop = mu + tuning["step"] * _normals(u[:, 0])
        lp_prop = self.log_prior(prop)
        inside = np.isfinite(lp_prop)
        rss_prop = np.full_like(mu, np.inf)
        if inside.any():
            rss_prop[inside] = self.rss(prop[inside])
        proposed = Particles(mu=prop, rss=rss_prop)
        cur = self.log_prior(mu) + self.log_bridge(particles, alpha)
        new = np.where(inside, lp_prop + self.log_bridge(proposed, alpha), -np.inf)
        acc = metropolis_accept(cur, new, u[:, 1])
        return (Particles(mu=np.where(acc, prop, mu), rss=np.where(acc, rss_prop, particles.rss)),
                int(acc.sum()))


def toy_log_likelihood(model, mu, theta):
    """``sum_i log N(y_i; N(t_i; mu, sigma^2), theta^2)`` for each ``mu``."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    return gaussian_loglik_from_rss(model.rss(mu), model.n_obs, theta)


def generate_toy_data(seed, n_obs=100, interval=(-5.0, 5.0), waveform_sigma=1.0,
                      theta_range=(0.1, 0.2), mu_true=0.0, theta_star=0.05, noise=True):
    """Simulate one toy dataset.

    ``n_obs`` evenly spaced abscissae on ``interval``; noise level drawn
    uniformly from ``theta_range``. With ``noise=False`` the data equal the
    waveform exactly (the noise-level draw still happens).

    Returns
    -------
    model : ToyModel
    truth : dict
        ``{"mu_true", "theta_true"}``.
    """
    rng = np.random.default_rng(seed)
    theta_true = float(rng.uniform(*theta_range))
    times = np.linspace(interval[0], interval[1], n_obs)
    clean = waveform(times, mu_true, waveform_sigma)[0]
    eps = rng.standard_normal(n_obs) * theta_true
    data = clean + eps if noise else clean.copy()
    model = ToyModel(times=times, data=data, waveform_sigma=waveform_sigma, theta_star=theta_star)
    return model, {"mu_true": float(mu_true), "theta_true": theta_true}
