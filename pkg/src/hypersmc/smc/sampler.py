"""The tempered SMC sampler loop and its run trace.

Each iteration performs, in order: importance-weight update from the
previous exponent to the next one (which only needs the previous particles),
resampling when the ESS falls below ``threshold * N``, then MCMC sweeps
targeting the new tempered density.

A model plugged into :func:`run_sampler` provides

``name``
    identifier written to the trace header.
``n_init_uniforms`` / ``n_move_uniforms``
    per-particle uniform budget for prior sampling and for one sweep.
``sample_prior(u)``
    particles from the initial density, given an ``(N, n_init_uniforms)`` block.
``log_bridge(particles, alpha)``
    the exponent-dependent part of the log tempered density.
``theta_of_alpha(alpha)``
    hyper-parameter value the tempered density corresponds to (``None``
    when the ladder has no such reading).
``tune(particles, weights)``
    population-level proposal settings (a barrier operation).
``move(particles, alpha, u, tuning)``
    one MCMC sweep; returns ``(particles, n_accepted)`` where ``n_accepted``
    is an integer count of accepted proposals.
``moves_per_sweep`` (optional, default 1)
    proposals per particle in one sweep; the recorded acceptance rate is
    ``n_accepted / (N * n_sweeps * moves_per_sweep)``.
``config()``
    JSON-serializable description used in the trace header.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DegeneratePopulationError, ModelEvaluationError
from .particles import INIT, MOVE, RESAMPLE, Particles, ParticleStreams
from .schedule import TemperingSchedule, next_exponent_adaptive
from .weights import ess as _ess
from .weights import log_mean_exp, normalize_log_weights, systematic_resample

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"


@dataclass
class ParticleSystem:
    """Weighted population plus evidence bookkeeping.

    ``log_w`` holds the unnormalized log-weights accumulated since the last
    resampling time. ``epoch_log_means`` collects, for every completed
    resampling epoch, the log of the average accumulated weight; their sum
    is the log-evidence at the last resampling time.
    """

    particles: Particles
    log_w: np.ndarray
    t: int = 0
    alpha: float = 0.0
    log_z_base: float = 0.0
    epoch_log_means: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.log_w)

    @property
    def weights(self):
        return normalize_log_weights(self.log_w)

    @property
    def ess(self):
        return _ess(self.weights)

    @property
    def log_epoch_mean(self):
        return log_mean_exp(self.log_w)

    @property
    def log_evidence(self):
        return self.log_z_base + self.log_epoch_mean


def update_weights(system, log_ratio):
    """Multiply the weights by ``exp(log_ratio)`` (log domain).

    Raises
    ------
    DegeneratePopulationError
        When every incremental weight is zero.
    """
    log_ratio = np.asarray(log_ratio, dtype=float)
    if np.any(np.isnan(log_ratio)):
        raise ModelEvaluationError("NaN in incremental log-weights")
    log_w = system.log_w + log_ratio
    if not np.any(np.isfinite(log_w)):
        finite = log_ratio[np.isfinite(log_ratio)]
        spread = float(np.ptp(finite)) if finite.size else math.inf
        raise DegeneratePopulationError(
            f"all weights vanished at t={system.t}, alpha={system.alpha}",
            iteration=system.t, alpha=system.alpha, log_weight_spread=spread)
    return replace(system, log_w=log_w)


def resample(system, u):
    """Systematic resampling; closes the current evidence epoch."""
    m = system.log_epoch_mean
    idx = systematic_resample(system.weights, u)
    return replace(system, particles=system.particles[idx],
                   log_w=np.zeros(system.n),
                   log_z_base=system.log_z_base + m,
                   epoch_log_means=system.epoch_log_means + [m])


def metropolis_accept(logp_current, logp_proposed, u, log_q_ratio=0.0):
    """Vectorized Metropolis-Hastings acceptance.

    ``log_q_ratio`` is ``log q(x|x') - log q(x'|x)``. Proposals with
    ``-inf`` target are always rejected. A NaN target raises.
    """
    logp_proposed = np.asarray(logp_proposed, dtype=float)
    if np.any(np.isnan(logp_proposed)) or np.any(np.isnan(logp_current)):
        raise ModelEvaluationError("target density returned NaN")
    with np.errstate(invalid="ignore"):
        log_ratio = logp_proposed - logp_current + log_q_ratio
    log_ratio = np.where(np.isneginf(logp_proposed), -np.inf, log_ratio)
    log_ratio = np.where(np.isnan(log_ratio), -np.inf, log_ratio)
    with np.errstate(divide="ignore"):
        return np.log(u) < log_ratio


def mh_move(x, log_target, propose, u_propose, u_accept):
    """One Metropolis-Hastings step for a batch of independent chains.

    Parameters
    ----------
    x : ndarray
        Current states, one row (or entry) per chain.
    log_target : callable
        Vectorized log-density.
    propose : callable
        ``propose(x, u_propose) -> (x_new, log_q_ratio)``.
    u_propose, u_accept : ndarray
        Uniforms for the proposal and the accept test.

    Returns
    -------
    x_new : ndarray
    accepted : ndarray of bool
    """
    x = np.asarray(x)
    proposal, log_q_ratio = propose(x, u_propose)
    accepted = metropolis_accept(log_target(x), log_target(proposal), u_accept, log_q_ratio)
    mask = accepted.reshape(accepted.shape + (1,) * (x.ndim - 1))
    return np.where(mask, proposal, x), accepted


@dataclass
class Snapshot:
    particles: Particles
    weights: np.ndarray


@dataclass
class IterationRecord:
    t: int
    alpha: float
    theta: float
    ess: float
    resampled: bool
    log_evidence: float
    log_epoch_mean: float
    acceptance: float = math.nan
    snapshot: Snapshot | None = None

    def to_json(self):
        d = {"t": self.t, "alpha": self.alpha, "theta": self.theta, "ess": self.ess,
             "resampled": self.resampled, "log_evidence": self.log_evidence,
             "log_epoch_mean": self.log_epoch_mean, "acceptance": self.acceptance}
        if self.snapshot is not None:
            d["snapshot"] = {"particles": self.snapshot.particles.to_json(),
                             "weights": self.snapshot.weights.tolist()}
        return d

    @classmethod
    def from_json(cls, d, dtypes=None):
        snap = None
        if "snapshot" in d:
            snap = Snapshot(Particles.from_json(d["snapshot"]["particles"], dtypes),
                            np.asarray(d["snapshot"]["weights"], dtype=float))

        def num(v):
            return math.inf if v is None else float(v)

        return cls(t=int(d["t"]), alpha=float(d["alpha"]), theta=num(d["theta"]),
                   ess=float(d["ess"]), resampled=bool(d["resampled"]),
                   log_evidence=float(d["log_evidence"]),
                   log_epoch_mean=float(d["log_epoch_mean"]),
                   acceptance=num(d.get("acceptance")), snapshot=snap)


@dataclass
class RunTrace:
    settings: dict
    records: list

    @property
    def alphas(self):
        return np.array([r.alpha for r in self.records])

    @property
    def thetas(self):
        return np.array([r.theta for r in self.records])

    @property
    def log_evidences(self):
        return np.array([r.log_evidence for r in self.records])

    @property
    def ess(self):
        return np.array([r.ess for r in self.records])

    def to_json(self):
        return {"schema_version": SCHEMA_VERSION, "seed": self.settings.get("seed"),
                "settings": self.settings,
                "records": [r.to_json() for r in self.records]}

    @classmethod
    def from_json(cls, d, dtypes=None):
        if str(d.get("schema_version")) != SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema {d.get('schema_version')!r}")
        if dtypes is None:
            dtypes = d["settings"].get("particle_dtypes")
        return cls(settings=d["settings"],
                   records=[IterationRecord.from_json(r, dtypes) for r in d["records"]])


def evidence_estimate(trace, t):
    """log p-hat at iteration ``t`` rebuilt from the per-epoch averages.

    Sums, over resampling times before ``t``, the log-average of the
    weights accumulated in that epoch, plus the current epoch's term.
    """
    if not 0 <= t < len(trace.records):
        raise IndexError(f"iteration {t} outside 0..{len(trace.records) - 1}")
    base = 0.0
    for r in trace.records[:t]:
        if r.resampled:
            base = base + r.log_epoch_mean
    return base + trace.records[t].log_epoch_mean


def _snapshot_wanted(policy, t, is_last):
    if policy == "all":
        return True
    if policy == "none":
        return False
    if policy == "final":
        return is_last
    if isinstance(policy, str) and policy.startswith("every:"):
        k = int(policy.split(":", 1)[1])
        return is_last or t % k == 0
    raise ValueError(f"unknown snapshot policy {policy!r}")


def _chunks(n, k):
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def next_exponent(system, model, alpha, ess_target_fraction):
    """Adaptive exponent for ``system`` under ``model`` (see :func:`next_exponent_adaptive`)."""
    base = model.log_bridge(system.particles, alpha)
    return next_exponent_adaptive(
        system.log_w, lambda a: model.log_bridge(system.particles, a) - base,
        alpha, ess_target_fraction)


def run_sampler(model, schedule, n_particles, seed, snapshot="all",
                resample_threshold=0.5, n_sweeps=1, threads=1):
    """Run a tempered SMC sampler and return its :class:`RunTrace`.

    Parameters
    ----------
    model
        See the module docstring for the required interface.
    schedule : TemperingSchedule
    n_particles : int
    seed : int
    snapshot : str
        ``"all"``, ``"none"``, ``"final"`` or ``"every:k"``.
    resample_threshold : float
        Resample when ``ESS < resample_threshold * N``; 0 disables it.
    n_sweeps : int
        MCMC sweeps per iteration.
    threads : int
        Worker threads for the per-particle moves. Results do not depend
        on this value.

    Raises
    ------
    DegeneratePopulationError
        If every weight vanishes at some iteration.
    """
    if n_particles < 2:
        raise ValueError("need at least two particles")
    streams = ParticleStreams(seed)
    n = n_particles
    particles = model.sample_prior(streams.block(0, INIT, n, model.n_init_uniforms))
    system = ParticleSystem(particles=particles, log_w=np.zeros(n))

    settings = {
        "model": model.name, "model_config": model.config(),
        "n_particles": n, "seed": int(seed), "schedule": schedule.to_dict(),
        "resample_threshold": resample_threshold, "n_sweeps": n_sweeps,
        "snapshot": snapshot, "theta_star": getattr(model, "theta_star", None),
        "particle_dtypes": getattr(model, "particle_dtypes", None),
    }
    adaptive = schedule.mode == "adaptive"
    last_t = schedule.max_iterations if adaptive else schedule.n_iterations

    def snap(t, is_last):
        if _snapshot_wanted(snapshot, t, is_last):
            return Snapshot(system.particles, system.weights)
        return None

    records = [IterationRecord(t=0, alpha=0.0, theta=math.inf, ess=float(n), resampled=False,
                               log_evidence=0.0, log_epoch_mean=0.0,
                               snapshot=snap(0, False))]
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        alpha = 0.0
        t = 0
        while alpha < 1.0:
            t += 1
            if adaptive:
                if t > last_t:
                    raise RuntimeError("adaptive schedule did not reach alpha=1")
                alpha_new = next_exponent(system, model, alpha, schedule.ess_target_fraction)
            else:
                alpha_new = float(schedule.exponents[t])
            log_ratio = (model.log_bridge(system.particles, alpha_new)
                         - model.log_bridge(system.particles, alpha))
            try:
                system = update_weights(replace(system, t=t, alpha=alpha_new), log_ratio)
            except DegeneratePopulationError as exc:
                exc.iteration, exc.alpha = t, alpha_new
                raise
            log_evidence = system.log_evidence
            log_epoch_mean = system.log_epoch_mean
            ess_t = system.ess
            resampled = ess_t < resample_threshold * n
            if resampled:
                system = resample(system, streams.uniform(t, RESAMPLE))

            accepted = 0
            for sweep in range(n_sweeps):
                u = streams.block(t, MOVE, n, model.n_move_uniforms, sweep)
                tuning = model.tune(system.particles, system.weights)
                if pool is None:
                    moved, acc = model.move(system.particles, alpha_new, u, tuning)
                else:
                    parts = _chunks(n, threads)
                    results = list(pool.map(
                        lambda s: model.move(system.particles[s], alpha_new, u[s], tuning), parts))
                    moved = Particles.concatenate([r[0] for r in results])
                    acc = sum(r[1] for r in results)
                system = replace(system, particles=moved)
                accepted += acc

            alpha = alpha_new
            records.append(IterationRecord(
                t=t, alpha=alpha, theta=model.theta_of_alpha(alpha) or math.nan,
                ess=ess_t, resampled=bool(resampled), log_evidence=log_evidence,
                log_epoch_mean=log_epoch_mean,
                acceptance=accepted / (n * n_sweeps * getattr(model, "moves_per_sweep", 1)),
                snapshot=snap(t, alpha >= 1.0)))
            log.debug("t=%d alpha=%.6g ess=%.1f resampled=%s logZ=%.6f",
                      t, alpha, ess_t, resampled, log_evidence)
    finally:
        if pool is not None:
            pool.shutdown()
    return RunTrace(settings=settings, records=records)
