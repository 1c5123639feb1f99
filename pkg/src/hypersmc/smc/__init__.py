"""Generic tempered SMC engine."""

from .particles import Particles, ParticleStreams
from .sampler import (
    IterationRecord,
    ParticleSystem,
    RunTrace,
    Snapshot,
    evidence_estimate,
    metropolis_accept,
    mh_move,
    next_exponent,
    resample,
    run_sampler,
    update_weights,
)
from .schedule import TemperingSchedule, geometric_exponents, next_exponent_adaptive
from .weights import ess, log_mean_exp, normalize_log_weights, systematic_resample

__all__ = [
    "IterationRecord", "ParticleSystem", "Particles", "ParticleStreams", "RunTrace",
    "Snapshot", "TemperingSchedule", "ess", "evidence_estimate", "geometric_exponents",
    "log_mean_exp", "metropolis_accept", "mh_move", "next_exponent",
    "next_exponent_adaptive", "normalize_log_weights", "resample", "run_sampler",
    "systematic_resample", "update_weights",
]
