"""Replicate studies comparing the recycled estimators with the baselines."""

import csv
import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .. import jsonio
from ..hyper import (HyperPrior, build_ledger, eb_select, fb_average, hyper_posterior,
                     reweight_to_theta, weighted_kde_mode)
from ..models.clg import ClgModel, VoxelGrid, generate_clg_data
from ..models.toy import generate_toy_data
from ..smc.sampler import run_sampler
from ..smc.schedule import TemperingSchedule
from .baselines import baseline_eb_toy, baseline_fb_clg, baseline_fb_toy
from .metrics import dipole_estimators, ospa

log = logging.getLogger(__name__)

TOY_METHODS = ("PropEB", "PropFB", "BaselineEB", "BaselineFB")
CLG_METHODS = ("PropEB", "PropFB", "BaselineFB")


@dataclass
class StudySpec:
    """Settings of a replicate study; every field has a JSON key of the same name."""

    model: str = "toy"
    n_replicates: int = 100
    base_seed: int = 0
    methods: list | None = None
    output_dir: str = "study"
    n_particles: int = 100
    n_iterations: int | None = None
    theta_star: float | None = None
    theta_max: float | None = None
    prior_shape: float = 2.0
    prior_scale_factor: float = 4.0
    threads: int = 1
    jobs: int = 1
    save_traces: bool = False
    gzip: bool = True
    model_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in ("toy", "clg"):
            raise ValueError(f"model must be 'toy' or 'clg', got {self.model!r}")
        toy = self.model == "toy"
        if self.methods is None:
            self.methods = list(TOY_METHODS if toy else CLG_METHODS)
        allowed = TOY_METHODS if toy else CLG_METHODS
        bad = [m for m in self.methods if m not in allowed]
        if bad:
            raise ValueError(f"unknown methods for {self.model}: {bad}; allowed {list(allowed)}")
        if self.n_iterations is None:
            self.n_iterations = 500 if toy else 100
        if self.theta_star is None:
            self.theta_star = 0.05 if toy else 0.025
        if self.theta_max is None:
            self.theta_max = 10.0 if toy else 2.0
        if self.n_replicates < 1 or self.n_particles < 2:
            raise ValueError("need n_replicates >= 1 and n_particles >= 2")
        if not 0 < self.theta_star < self.theta_max:
            raise ValueError("need 0 < theta_star < theta_max")

    @classmethod
    def from_json(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown study keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self):
        return asdict(self)

    @property
    def alpha1(self):
        return (self.theta_star / self.theta_max) ** 2

    def hyper_prior(self):
        return HyperPrior.gamma(self.prior_shape, self.prior_scale_factor * self.theta_star,
                                (self.theta_star, self.theta_max))

    def schedule(self):
        return TemperingSchedule.geometric(self.n_iterations, self.alpha1)


def replicate_seeds(base_seed, i):
    """Distinct data and sampler seeds for replicate ``i``."""
    data, sampler = np.random.SeedSequence([base_seed, i]).generate_state(2)
    return int(data), int(sampler)


def data_digest(arr):
    return hashlib.sha256(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).hexdigest()[:16]


class _Clock:
    def __init__(self):
        self.t = time.process_time()

    def lap(self):
        now = time.process_time()
        out, self.t = now - self.t, now
        return out


def _save_trace(spec, i, method, trace):
    if not spec.save_traces:
        return
    out = Path(spec.output_dir) / "traces"
    out.mkdir(parents=True, exist_ok=True)
    name = f"rep{i:03d}_{method}.json" + (".gz" if spec.gzip else "")
    jsonio.dump(trace.to_json(), out / name)


# -- toy ----------------------------------------------------------------------------


def _weighted_estimates(values, weights):
    return weighted_kde_mode(values, weights), float(np.dot(weights, values))


def toy_replicate(spec, i):
    """Run every requested method on replicate ``i`` of the toy study."""
    data_seed, seed = replicate_seeds(spec.base_seed, i)
    toy, truth = generate_toy_data(data_seed, theta_star=spec.theta_star, **spec.model_config)
    prior = spec.hyper_prior()
    th, mu = truth["theta_true"], truth["mu_true"]
    row = {"replicate": i, "data_seed": data_seed, "theta_true": th,
           "data_digest": data_digest(toy.data)}
    times = {"replicate": i}
    est = {}
    if {"PropEB", "PropFB"} & set(spec.methods):
        clock = _Clock()
        trace = run_sampler(toy, spec.schedule(), spec.n_particles, seed, threads=spec.threads)
        t_run = clock.lap()
        ledger = build_ledger(trace)
        post = hyper_posterior(ledger, prior)
        t_post = clock.lap()
        evals = toy.n_evals
        if "PropEB" in spec.methods:
            eb = eb_select(post, trace)
            rec = trace.records[eb.anchor_t]
            rw = reweight_to_theta(rec.snapshot, rec.theta, eb.theta, toy)
            est["PropEB"] = (eb.theta, post.mean(), *_weighted_estimates(rw.particles.mu,
                                                                         rw.weights))
            times["PropEB"] = t_run + t_post + clock.lap()
        if "PropFB" in spec.methods:
            recy = fb_average(trace, prior, ledger, post)
            est["PropFB"] = (post.map(), recy.theta_mean(),
                             *_weighted_estimates(recy.particles().mu, recy.weights))
            times["PropFB"] = t_run + t_post + clock.lap()
        row["prop_extra_evals"] = toy.n_evals - evals
        _save_trace(spec, i, "Prop", trace)
    if "BaselineEB" in spec.methods:
        clock = _Clock()
        res = baseline_eb_toy(toy, prior, th, n_particles=spec.n_particles,
                              n_iterations=spec.n_iterations, alpha1=spec.alpha1, seed=seed,
                              threads=spec.threads)
        snap = res.trace.records[-1].snapshot
        est["BaselineEB"] = (res.theta_map, res.theta_pm,
                             *_weighted_estimates(snap.particles.mu, snap.weights))
        times["BaselineEB"] = clock.lap()
        _save_trace(spec, i, "BaselineEB", res.trace)
    if "BaselineFB" in spec.methods:
        clock = _Clock()
        trace, snap = baseline_fb_toy(toy, prior, spec.n_particles, spec.n_iterations,
                                      spec.alpha1, seed, threads=spec.threads)
        thetas = np.exp(snap.particles.log_theta)
        est["BaselineFB"] = (*_weighted_estimates(thetas, snap.weights),
                             *_weighted_estimates(snap.particles.mu, snap.weights))
        times["BaselineFB"] = clock.lap()
        _save_trace(spec, i, "BaselineFB", trace)
    for m in spec.methods:
        t_map, t_pm, m_map, m_pm = est[m]
        row.update({f"{m}_theta_map": t_map, f"{m}_theta_pm": t_pm,
                    f"{m}_mu_map": m_map, f"{m}_mu_pm": m_pm,
                    f"{m}_theta_map_err": abs(t_map - th), f"{m}_theta_pm_err": abs(t_pm - th),
                    f"{m}_mu_map_err": abs(m_map - mu), f"{m}_mu_pm_err": abs(m_pm - mu)})
    return row, times


# -- clg ----------------------------------------------------------------------------


_GRID_KEYS = ("n_side", "pitch", "n_sensors", "sensor_radius", "gain", "neighbour_radius")
_DATA_KEYS = ("theta_range", "n_dipoles", "min_separation", "n_times", "peak", "width",
              "strength")


@lru_cache(maxsize=4)
def _grid(items):
    return VoxelGrid.desk(**dict(items))


def clg_grid(model_config):
    return _grid(tuple(sorted((k, v) for k, v in model_config.items() if k in _GRID_KEYS)))


def clg_dataset(spec_or_config, seed):
    cfg = spec_or_config if isinstance(spec_or_config, dict) else spec_or_config.model_config
    grid = clg_grid(cfg)
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.items() if k in _DATA_KEYS}
    data, truth = generate_clg_data(seed, grid, **kw)
    return grid, data, truth


def _dipoles(particles, weights, grid):
    return dipole_estimators(particles.d, particles.locs, weights, grid.positions)


def clg_replicate(spec, i):
    """Run every requested method on replicate ``i`` of the source-localization study."""
    data_seed, seed = replicate_seeds(spec.base_seed, i)
    grid, data, truth = clg_dataset(spec, data_seed)
    window = tuple(spec.model_config.get("window", (40, 60)))
    prior = spec.hyper_prior()
    th = truth["theta_true"]
    true_pos = np.asarray(truth["positions"])
    row = {"replicate": i, "data_seed": data_seed, "theta_true": th,
           "data_digest": data_digest(data)}
    times = {"replicate": i}
    est = {}
    model = ClgModel(grid, data, spec.theta_star, window=window)
    if {"PropEB", "PropFB"} & set(spec.methods):
        clock = _Clock()
        trace = run_sampler(model, spec.schedule(), spec.n_particles, seed, threads=spec.threads)
        t_run = clock.lap()
        ledger = build_ledger(trace)
        post = hyper_posterior(ledger, prior)
        t_post = clock.lap()
        evals = model.n_evals
        if "PropEB" in spec.methods:
            eb = eb_select(post, trace)
            rec = trace.records[eb.anchor_t]
            rw = reweight_to_theta(rec.snapshot, rec.theta, eb.theta, model)
            est["PropEB"] = (eb.theta, post.mean(), _dipoles(rw.particles, rw.weights, grid))
            times["PropEB"] = t_run + t_post + clock.lap()
        if "PropFB" in spec.methods:
            recy = fb_average(trace, prior, ledger, post)
            est["PropFB"] = (post.map(), recy.theta_mean(),
                             _dipoles(recy.particles(), recy.weights, grid))
            times["PropFB"] = t_run + t_post + clock.lap()
        row["prop_extra_evals"] = model.n_evals - evals
        _save_trace(spec, i, "Prop", trace)
    if "BaselineFB" in spec.methods:
        base = ClgModel(grid, data, spec.theta_star, window=window)
        clock = _Clock()
        trace, snap = baseline_fb_clg(base, prior, spec.n_particles, spec.n_iterations,
                                      spec.alpha1, seed, threads=spec.threads)
        thetas = np.exp(snap.particles.log_theta)
        t_map, t_pm = _weighted_estimates(thetas, snap.weights)
        est["BaselineFB"] = (t_map, t_pm, _dipoles(snap.particles, snap.weights, grid))
        times["BaselineFB"] = clock.lap()
        _save_trace(spec, i, "BaselineFB", trace)
    for m in spec.methods:
        t_map, t_pm, dip = est[m]
        row.update({f"{m}_theta_map": t_map, f"{m}_theta_pm": t_pm, f"{m}_d_hat": dip.d_hat,
                    f"{m}_voxels": " ".join(str(v) for v in dip.voxels),
                    f"{m}_theta_map_err": abs(t_map - th), f"{m}_theta_pm_err": abs(t_pm - th),
                    f"{m}_theta_pm_relerr": abs(t_pm - th) / th,
                    f"{m}_ospa": ospa(dip.locations, true_pos)})
    return row, times


# -- driver -------------------------------------------------------------------------


def _run_one(args):
    spec, i = args
    fn = toy_replicate if spec.model == "toy" else clg_replicate
    try:
        row, times = fn(spec, i)
        row["status"] = "ok"
    except Exception as exc:  # a failed replicate is recorded, the study goes on
        log.exception("replicate %d failed", i)
        row = {"replicate": i, "status": f"error: {type(exc).__name__}: {exc}"}
        times = {"replicate": i}
    return row, times


def error_columns(spec):
    if spec.model == "toy":
        kinds = ("theta_map_err", "theta_pm_err", "mu_map_err", "mu_pm_err")
    else:
        kinds = ("theta_map_err", "theta_pm_err", "theta_pm_relerr", "ospa")
    return [f"{m}_{k}" for m in spec.methods for k in kinds]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if not math.isfinite(v) else format(float(v), ".17g")
    return str(v)


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def summarize(rows, columns):
    """Quartiles of each metric over successful replicates."""
    out = []
    for stat, q in (("q1", 25), ("median", 50), ("q3", 75)):
        rec = {"stat": stat}
        for c in columns:
            vals = np.array([r[c] for r in rows if r.get("status") == "ok" and c in r], float)
            rec[c] = float(np.percentile(vals, q)) if vals.size else math.nan
        out.append(rec)
    out.append({"stat": "n", **{c: sum(1 for r in rows if r.get("status") == "ok" and c in r)
                                for c in columns}})
    return out


@dataclass
class StudyResult:
    rows: list
    times: list
    summary: list
    columns: list


def run_study(spec, replicates=None):
    """Run a replicate study and write its CSV outputs.

    Files in ``spec.output_dir``: ``per_replicate.csv`` (estimates and
    errors), ``summary.csv`` (quartiles of every error column),
    ``timings.csv`` (CPU seconds per method, kept apart because it is the
    only non-reproducible output) and ``study.json`` (the effective spec).
    """
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    idx = list(range(spec.n_replicates)) if replicates is None else list(replicates)
    jobs = [(spec, i) for i in idx]
    if spec.jobs > 1:
        with ProcessPoolExecutor(spec.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    rows = [r for r, _ in results]
    times = [t for _, t in results]
    metric_cols = error_columns(spec)
    all_cols = ["replicate", "status", "data_seed", "data_digest", "theta_true"]
    for r in rows:
        for k in r:
            if k not in all_cols:
                all_cols.append(k)
    write_csv(out / "per_replicate.csv", rows, all_cols)
    summary = summarize(rows, metric_cols)
    write_csv(out / "summary.csv", summary, ["stat"] + metric_cols)
    write_csv(out / "timings.csv", times, ["replicate"] + list(spec.methods))
    jsonio.dump(spec.to_json(), out / "study.json")
    return StudyResult(rows, times, summary, metric_cols)
