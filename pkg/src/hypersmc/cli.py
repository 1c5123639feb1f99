"""Command-line interface: ``hypersmc {generate,run,analyze,study}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical abort
(degenerate particle population).
"""

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, jsonio
from .errors import DegeneratePopulationError, MissingSnapshotError, SupportError
from .experiments.metrics import dipole_estimators
from .experiments.study import StudySpec, clg_dataset, clg_grid, run_study
from .hyper import (HyperPrior, build_ledger, eb_select, fb_average, hyper_posterior,
                    reweight_to_theta, weighted_kde_mode)
from .models.clg import ClgModel
from .models.toy import ToyModel, generate_toy_data
from .smc.sampler import RunTrace, run_sampler
from .smc.schedule import TemperingSchedule

log = logging.getLogger("hypersmc")

DATASET_SCHEMA = "1"


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- configuration ------------------------------------------------------------------


@dataclass
class RunConfig:
    """Effective settings of one sampler run."""

    model: str = "toy"
    n_particles: int = 100
    n_iterations: int | None = None
    schedule_mode: str = "geometric"
    alpha1: float | None = None
    ess_target_fraction: float = 0.5
    resample_threshold: float = 0.5
    theta_star: float | None = None
    theta_max: float | None = None
    hyper_prior: dict | None = None
    seed: int = 0
    snapshot: str = "all"
    n_sweeps: int = 1
    threads: int = 1
    output: str = "trace.json"
    model_config: dict = field(default_factory=dict)

    def resolve(self):
        """Fill model-dependent defaults and validate; raises :class:`ConfigError`."""
        if self.model not in ("toy", "clg"):
            raise ConfigError(f"model: expected 'toy' or 'clg', got {self.model!r}")
        toy = self.model == "toy"
        if self.n_iterations is None:
            self.n_iterations = 500 if toy else 100
        if self.theta_star is None:
            self.theta_star = 0.05 if toy else 0.025
        if self.theta_max is None:
            self.theta_max = 10.0 if toy else 2.0
        if self.alpha1 is None:
            self.alpha1 = (self.theta_star / self.theta_max) ** 2
        try:
            self._check()
        except TypeError as exc:
            raise ConfigError(f"config value has the wrong type: {exc}") from None
        if self.hyper_prior is None:
            self.hyper_prior = HyperPrior.gamma(
                2.0, 4.0 * self.theta_star, (self.theta_star, self.theta_max)).to_json()
        try:
            HyperPrior.from_json(self.hyper_prior)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"hyper_prior: {exc}") from None
        return self

    def _check(self):
        checks = [
            ("n_particles", self.n_particles >= 2, "must be at least 2"),
            ("n_iterations", self.n_iterations >= 1, "must be at least 1"),
            ("schedule_mode", self.schedule_mode in ("geometric", "adaptive"),
             "must be 'geometric' or 'adaptive'"),
            ("alpha1", 0 < self.alpha1 < 1, "must lie in (0, 1)"),
            ("ess_target_fraction", 0 < self.ess_target_fraction < 1, "must lie in (0, 1)"),
            ("resample_threshold", 0 < self.resample_threshold <= 1, "must lie in (0, 1]"),
            ("theta_star", self.theta_star > 0, "must be positive"),
            ("theta_max", self.theta_max > self.theta_star, "must exceed theta_star"),
            ("n_sweeps", self.n_sweeps >= 1, "must be at least 1"),
            ("threads", self.threads >= 1, "must be at least 1"),
            ("snapshot", _valid_snapshot(self.snapshot),
             "must be 'all', 'none', 'final' or 'every:k' with k >= 1"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{name}: {msg} (got {getattr(self, name)!r})")

    def schedule(self):
        if self.schedule_mode == "geometric":
            return TemperingSchedule.geometric(self.n_iterations, self.alpha1)
        return TemperingSchedule.adaptive(self.ess_target_fraction)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)


def _valid_snapshot(policy):
    if policy in ("all", "none", "final"):
        return True
    if isinstance(policy, str) and policy.startswith("every:"):
        k = policy.split(":", 1)[1]
        return k.isdigit() and int(k) >= 1
    return False


def _load_json(path, what):
    try:
        return jsonio.load(path)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from None


def _merge(base, overrides):
    out = dict(base)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


# -- datasets -----------------------------------------------------------------------


def toy_dataset_json(model, truth, seed):
    return {"schema_version": DATASET_SCHEMA, "model": "toy", "seed": seed,
            "waveform_sigma": model.waveform_sigma, "prior_bounds": list(model.prior_bounds),
            "times": model.times, "observations": model.data}


def model_from_dataset(ds, theta_star):
    try:
        return _model_from_dataset(ds, theta_star)
    except KeyError as exc:
        raise ConfigError(f"dataset: missing field {exc}") from None


def _model_from_dataset(ds, theta_star):
    if str(ds.get("schema_version")) != DATASET_SCHEMA:
        raise ConfigError(f"dataset: unsupported schema {ds.get('schema_version')!r}")
    if ds["model"] == "toy":
        return ToyModel(times=np.asarray(ds["times"]), data=np.asarray(ds["observations"]),
                        waveform_sigma=ds["waveform_sigma"], theta_star=theta_star,
                        prior_bounds=tuple(ds["prior_bounds"]))
    if ds["model"] == "clg":
        grid = clg_grid(ds["grid"])
        return ClgModel(grid, np.asarray(ds["observations"]), theta_star,
                        window=tuple(ds["window"]))
    raise ConfigError(f"dataset: unknown model {ds['model']!r}")


def cmd_generate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.model == "toy":
        model, truth = generate_toy_data(args.seed)
        ds = toy_dataset_json(model, truth, args.seed)
    else:
        cfg = _load_json(args.model_config, "model config") if args.model_config else {}
        grid, data, truth = clg_dataset(cfg, args.seed)
        ds = {"schema_version": DATASET_SCHEMA, "model": "clg", "seed": args.seed,
              "grid": grid.params, "window": list(cfg.get("window", (40, 60))),
              "times": list(range(1, data.shape[1] + 1)), "observations": data,
              "sensor_positions": grid.sensors}
    jsonio.dump(ds, out / "dataset.json")
    jsonio.dump(truth, out / "truth.json")
    print(out / "dataset.json")
    return 0


# -- run ----------------------------------------------------------------------------


_RUN_FLAGS = ("model", "n_particles", "n_iterations", "schedule_mode", "alpha1",
              "ess_target_fraction", "resample_threshold", "theta_star", "theta_max", "seed",
              "snapshot", "n_sweeps", "threads", "output")


def build_run_config(args, dataset=None):
    base = _load_json(args.config, "config") if args.config else {}
    if dataset is not None and "model" not in base and args.model is None:
        base["model"] = dataset.get("model")
    cfg = RunConfig.from_dict(_merge(base, {k: getattr(args, k) for k in _RUN_FLAGS}))
    return cfg.resolve()


def cmd_run(args):
    dataset = _load_json(args.dataset, "dataset") if args.dataset else None
    cfg = build_run_config(args, dataset)
    if args.print_config:
        print(json.dumps(asdict(cfg), indent=2, sort_keys=True))
        return 0
    if dataset is None:
        raise ConfigError("dataset: --dataset is required")
    if dataset.get("model") != cfg.model:
        raise ConfigError(f"model: config says {cfg.model!r}, dataset is {dataset.get('model')!r}")
    model = model_from_dataset(dataset, cfg.theta_star)
    trace = run_sampler(model, cfg.schedule(), cfg.n_particles, cfg.seed,
                        snapshot=cfg.snapshot, resample_threshold=cfg.resample_threshold,
                        n_sweeps=cfg.n_sweeps, threads=cfg.threads)
    doc = trace.to_json()
    doc["run_config"] = asdict(cfg)
    Path(cfg.output).parent.mkdir(parents=True, exist_ok=True)
    jsonio.dump(doc, cfg.output)
    print(cfg.output)
    return 0


# -- analyze ------------------------------------------------------------------------


def _prior_for(args, doc):
    if args.prior:
        spec = _load_json(args.prior, "hyper-prior")
    elif "run_config" in doc:
        spec = doc["run_config"]["hyper_prior"]
    else:
        raise ConfigError("hyper_prior: pass --prior (trace has no run_config)")
    try:
        return HyperPrior.from_json(spec)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"hyper_prior: {exc}") from None


def _param_summary(model_name, particles, weights, dataset_model):
    if model_name.startswith("toy"):
        return {"mu_pm": float(np.dot(weights, particles.mu)),
                "mu_map": weighted_kde_mode(particles.mu, weights)}
    est = dipole_estimators(particles.d, particles.locs, weights, dataset_model.grid.positions)
    return {"d_hat": est.d_hat, "voxels": est.voxels, "positions": est.locations}


def analyze_trace(doc, prior, mode="both", model=None, refine=False):
    """Post-hoc EB and/or FB analysis of a serialized trace.

    Returns (ledger, posterior, summary).
    """
    trace = RunTrace.from_json(doc)
    ledger = build_ledger(trace)
    post = hyper_posterior(ledger, prior)
    summary = {"map": post.map(), "pm": post.mean(), "n_knots": len(ledger),
               "support": list(prior.support)}
    name = trace.settings.get("model", "")
    if mode in ("eb", "both"):
        eb = eb_select(post, trace, model, refine=refine and model is not None)
        summary.update(eb_theta=eb.theta, anchor_t=eb.anchor_t, ess_after_reweight=None)
        rec = trace.records[eb.anchor_t]
        if model is not None and rec.snapshot is not None:
            rw = reweight_to_theta(rec.snapshot, rec.theta, eb.theta, model)
            summary["ess_after_reweight"] = rw.ess
            summary["eb_degenerate"] = bool(rw.degenerate)
            summary["eb_params"] = _param_summary(name, rw.particles, rw.weights, model)
    if mode in ("fb", "both"):
        recy = fb_average(trace, prior, ledger, post)
        summary.update(fb_theta_pm=recy.theta_mean(), fb_n_samples=recy.n_samples,
                       fb_n_knots=len(recy.ts))
        if model is not None:
            summary["fb_params"] = _param_summary(name, recy.particles(), recy.weights, model)
    return ledger, post, summary


def cmd_analyze(args):
    doc = _load_json(args.trace, "trace")
    prior = _prior_for(args, doc)
    model = None
    if args.dataset:
        theta_star = doc["settings"].get("theta_star")
        model = model_from_dataset(_load_json(args.dataset, "dataset"), theta_star)
    evals = 0 if model is None else model.n_evals
    ledger, post, summary = analyze_trace(doc, prior, args.mode, model, args.refine)
    if model is not None:
        summary["model_evaluations"] = model.n_evals - evals
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ledger.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta", "log_evidence"])
        for th, le in ledger.rows():
            w.writerow([format(th, ".17g"), format(le, ".17g")])
    grid, dens = post.curve(512)
    with open(out / "posterior.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta", "density"])
        for th, de in zip(grid, dens):
            w.writerow([format(th, ".17g"), format(de, ".17g")])
    jsonio.dump(summary, out / "summary.json")
    print(out / "summary.json")
    return 0


# -- study --------------------------------------------------------------------------


def cmd_study(args):
    spec_d = _load_json(args.spec, "study spec") if args.spec else {}
    for key in ("model", "n_replicates", "base_seed", "output_dir", "jobs", "threads"):
        v = getattr(args, key)
        if v is not None:
            spec_d[key] = v
    try:
        spec = StudySpec.from_json(spec_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"study spec: {exc}") from None
    if args.print_config:
        print(json.dumps(spec.to_json(), indent=2, sort_keys=True))
        return 0
    res = run_study(spec)
    failed = [r for r in res.rows if r.get("status") != "ok"]
    print(f"{len(res.rows) - len(failed)}/{len(res.rows)} replicates ok; "
          f"outputs in {spec.output_dir}")
    return 0


# -- entry point --------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="hypersmc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a dataset and its ground truth")
    g.add_argument("--model", choices=("toy", "clg"), required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--model-config", help="JSON with geometry/data settings (clg)")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run the tempered sampler on a dataset")
    r.add_argument("--config", help="RunConfig JSON; flags override its keys")
    r.add_argument("--dataset")
    r.add_argument("--print-config", action="store_true")
    r.add_argument("--model", choices=("toy", "clg"))
    r.add_argument("--n-particles", type=int)
    r.add_argument("--n-iterations", type=int)
    r.add_argument("--schedule-mode", choices=("geometric", "adaptive"))
    r.add_argument("--alpha1", type=float)
    r.add_argument("--ess-target-fraction", type=float)
    r.add_argument("--resample-threshold", type=float)
    r.add_argument("--theta-star", type=float)
    r.add_argument("--theta-max", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--snapshot")
    r.add_argument("--n-sweeps", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--output")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="EB/FB analysis of a stored trace")
    a.add_argument("--trace", required=True)
    a.add_argument("--prior", help="hyper-prior JSON {family, params, support}")
    a.add_argument("--mode", choices=("eb", "fb", "both"), default="both")
    a.add_argument("--dataset", help="dataset JSON; enables reweighting and parameter summaries")
    a.add_argument("--refine", action="store_true", help="importance-sampling EB refinement")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("study", help="replicate study over all methods")
    s.add_argument("--spec", help="study spec JSON")
    s.add_argument("--print-config", action="store_true")
    s.add_argument("--model", choices=("toy", "clg"))
    s.add_argument("--n-replicates", type=int)
    s.add_argument("--base-seed", type=int)
    s.add_argument("--output-dir")
    s.add_argument("--jobs", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DegeneratePopulationError as exc:
        print(f"numerical abort: {exc} (iteration {exc.iteration}, alpha {exc.alpha}, "
              f"log-weight spread {exc.log_weight_spread})", file=sys.stderr)
        return 2
    except (ConfigError, SupportError, MissingSnapshotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
