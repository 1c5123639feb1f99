"""Reference methods that treat the noise level conventionally.

* Joint sampling: the noise level is one more coordinate of a standard
  tempered SMC run, ``prior * likelihood^alpha`` with a hyper-prior on it.
* Grid empirical Bayes (toy only): the noise level is chosen by maximizing a
  grid average of the joint posterior, then a fresh sampler is run at that value.
"""

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtri

from ..models.clg import ClgModel
from ..models.toy import ToyModel, gaussian_loglik_from_rss
from ..smc.particles import Particles
from ..smc.sampler import metropolis_accept, run_sampler
from ..smc.schedule import TemperingSchedule


def _normals(u):
    return ndtri(np.clip(u, 1e-16, 1 - 1e-16))


def _log_rw_step(values, weights, scale=2.38, floor=1e-3):
    mean = np.dot(weights, values)
    sd = math.sqrt(max(np.dot(weights, (values - mean) ** 2), 0.0))
    return scale * max(sd, floor)


def _log_theta_prior(prior, log_theta):
    # density of log(theta): prior density times the Jacobian theta
    return prior.logpdf(np.exp(log_theta)) + log_theta


# -- toy -------------------------------------------------------------------------


@dataclass
class JointToyModel:
    """Toy model with the noise level sampled alongside the waveform mean."""

    toy: ToyModel
    prior: object
    step_scale: float = 2.38
    name: str = "toy-joint"
    n_init_uniforms: int = 2
    n_move_uniforms: int = 4
    moves_per_sweep: int = 2
    particle_dtypes: dict = field(default_factory=lambda: {
        "mu": "float64", "log_theta": "float64", "rss": "float64"})

    @property
    def n_evals(self):
        return self.toy.n_evals

    def config(self):
        return {"toy": self.toy.config(), "hyper_prior": self.prior.to_json(),
                "step_scale": self.step_scale}

    def theta_of_alpha(self, alpha):
        return None

    def log_likelihood(self, particles, theta=None):
        theta = np.exp(particles.log_theta) if theta is None else theta
        return gaussian_loglik_from_rss(particles.rss, self.toy.n_obs, theta)

    def log_bridge(self, particles, alpha):
        if alpha == 0:
            return np.zeros(len(particles))
        return alpha * self.log_likelihood(particles)

    def sample_prior(self, u):
        lo, hi = self.toy.prior_bounds
        mu = lo + (hi - lo) * u[:, 0]
        log_theta = np.log(self.prior.sample(u[:, 1]))
        return Particles(mu=mu, log_theta=log_theta, rss=self.toy.rss(mu))

    def tune(self, particles, weights):
        return {"mu": _log_rw_step(particles.mu, weights, self.step_scale, 1e-4),
                "log_theta": _log_rw_step(particles.log_theta, weights, self.step_scale)}

    def _target(self, mu, log_theta, rss, alpha):
        p = Particles(mu=mu, log_theta=log_theta, rss=rss)
        lp = self.toy.log_prior(mu) + _log_theta_prior(self.prior, log_theta)
        with np.errstate(invalid="ignore"):
            out = lp + self.log_bridge(p, alpha)
        return np.where(np.isfinite(lp), out, -np.inf)

    def move(self, particles, alpha, u, tuning):
        """Componentwise random-walk Metropolis: ``mu`` first, then ``log theta``."""
        mu, lt, rss = particles.mu, particles.log_theta, particles.rss
        prop = mu + tuning["mu"] * _normals(u[:, 0])
        inside = np.isfinite(self.toy.log_prior(prop))
        rss_prop = np.full_like(rss, np.inf)
        if inside.any():
            rss_prop[inside] = self.toy.rss(prop[inside])
        acc1 = metropolis_accept(self._target(mu, lt, rss, alpha),
                                 np.where(inside, self._target(prop, lt, rss_prop, alpha),
                                          -np.inf), u[:, 1])
        mu = np.where(acc1, prop, mu)
        rss = np.where(acc1, rss_prop, rss)
        lt_prop = lt + tuning["log_theta"] * _normals(u[:, 2])
        acc2 = metropolis_accept(self._target(mu, lt, rss, alpha),
                                 self._target(mu, lt_prop, rss, alpha), u[:, 3])
        lt = np.where(acc2, lt_prop, lt)
        return (Particles(mu=mu, log_theta=lt, rss=rss),
                int(acc1.sum()) + int(acc2.sum()))


def baseline_fb_toy(toy, prior, n_particles=100, n_iterations=500, alpha1=2.5e-5, seed=0,
                    snapshot="final", threads=1):
    """Joint tempered SMC over ``(mu, theta)``; returns ``(trace, final snapshot)``."""
    model = JointToyModel(toy, prior)
    schedule = TemperingSchedule.geometric(n_iterations, alpha1)
    trace = run_sampler(model, schedule, n_particles, seed, snapshot=snapshot, threads=threads)
    return trace, trace.records[-1].snapshot


@dataclass
class GridEB:
    theta_map: float
    theta_grid: np.ndarray
    log_post: np.ndarray
    theta_pm: float
    trace: object


def grid_theta_posterior(toy, prior, theta_grid, n_mu=100):
    """Grid average of the unnormalized joint posterior over evenly spaced ``mu`` values.

    Returns the log of ``(1/M) sum_i p(y | mu_i, theta) p(mu_i) p(theta)`` on ``theta_grid``.
    """
    lo, hi = toy.prior_bounds
    mus = np.linspace(lo, hi, n_mu)
    rss = toy.rss(mus)
    ll = gaussian_loglik_from_rss(rss[:, None], toy.n_obs, theta_grid[None, :])
    lp_mu = toy.log_prior(mus)[:, None]
    lp_theta = prior._dist.logpdf(theta_grid)
    return logsumexp(ll + lp_mu, axis=0) - math.log(n_mu) + lp_theta


def baseline_eb_toy(toy, prior, theta_true, n_grid=500, n_mu=100, n_particles=100,
                    n_iterations=500, alpha1=2.5e-5, seed=0, threads=1):
    """Grid-maximized noise level followed by a sampler at that fixed value.

    The grid is ``n_grid`` evenly spaced values on ``[theta_star, 50 theta_true]``;
    ties go to the smaller value.
    """
    grid = np.linspace(toy.theta_star, 50.0 * theta_true, n_grid)
    lp = grid_theta_posterior(toy, prior, grid, n_mu)
    i = int(np.argmax(lp))
    theta_map = float(grid[i])
    w = np.exp(lp - lp.max())
    theta_pm = float(np.trapezoid(w * grid, grid) / np.trapezoid(w, grid))
    fixed = toy.with_theta_star(theta_map)
    schedule = TemperingSchedule.geometric(n_iterations, alpha1)
    trace = run_sampler(fixed, schedule, n_particles, seed, snapshot="final", threads=threads)
    toy.n_evals += fixed.n_evals
    return GridEB(theta_map, grid, lp, theta_pm, trace)


# -- clg -------------------------------------------------------------------------


class JointClgModel(ClgModel):
    """CLG source model with the noise level as an extra sampled coordinate."""

    def __init__(self, base, prior, step_scale=2.38):
        self.__dict__.update(base.__dict__)
        # own statistics cache so that timings are not shared with the base model
        self._cache = {}
        self._lock = threading.Lock()
        self.hyper_prior = prior
        self.step_scale = step_scale
        self.name = "clg-joint"

    def config(self):
        d = super().config()
        d["hyper_prior"] = self.hyper_prior.to_json()
        return d

    @property
    def n_init_uniforms(self):
        return 3 + self.max_dipoles

    n_move_uniforms = 12
    moves_per_sweep = 4

    @property
    def particle_dtypes(self):
        d = dict(super().particle_dtypes)
        d["log_theta"] = "float64"
        return d

    def theta_of_alpha(self, alpha):
        return None

    def log_likelihood(self, particles, theta=None):
        theta = np.exp(particles.log_theta) if theta is None else theta
        return self.loglik_from_stats(particles.eig, particles.proj, particles.log_lam, theta)

    def log_bridge(self, particles, alpha):
        if alpha == 0:
            return np.zeros(len(particles))
        return alpha * self.log_likelihood(particles)

    def log_prior(self, particles):
        return (super().log_prior(particles)
                + _log_theta_prior(self.hyper_prior, particles.log_theta))

    def sample_prior(self, u):
        p = super().sample_prior(u[:, :-1])
        return p.replace(log_theta=np.log(self.hyper_prior.sample(u[:, -1])))

    def tune(self, particles, weights):
        return {"log_theta": _log_rw_step(particles.log_theta, weights, self.step_scale)}

    def move(self, particles, alpha, u, tuning):
        p, acc = super().move(particles, alpha, u[:, :10], tuning)
        prop = p.replace(log_theta=p.log_theta + tuning["log_theta"] * _normals(u[:, 10]))
        p, acc_theta = self._accept(p, prop, alpha, u[:, 11], np.zeros(len(p)),
                                    np.ones(len(p), bool))
        return p, acc + int(acc_theta.sum())


def baseline_fb_clg(model, prior, n_particles=100, n_iterations=100, alpha1=1.5625e-4, seed=0,
                    threads=1):
    """Joint tempered SMC over sources, ``lambda`` and the noise level."""
    joint = JointClgModel(model, prior)
    schedule = TemperingSchedule.geometric(n_iterations, alpha1)
    trace = run_sampler(joint, schedule, n_particles, seed, snapshot="final", threads=threads)
    model.n_evals = joint.n_evals
    return trace, trace.records[-1].snapshot
