"""Conditionally linear Gaussian multi-dipole source model.

Observations at each time point of an analysis window follow
``y(t) = G(r_1..r_d) q(t) + eps(t)`` with ``eps ~ N(0, theta^2 Sigma)`` and
dipole moments ``q(t) ~ N(eta, lambda I)``. The moments are integrated out
analytically, so a sampler only needs to explore the number of dipoles,
their voxel locations and ``lambda``.

For sampling, every particle carries the spectral statistics of its source
configuration: the eigenvalues ``e_k`` of ``G^T G`` (whitened) and the
projected data energies ``c_k = sum_t ((U^T G^T y(t))_k)^2``. Given those, the
marginal log-likelihood at any ``(lambda, theta)`` is a closed-form sum and
costs no further linear algebra.

The dense functions at module level (:func:`clg_marginal_loglik`,
:func:`clg_conditional_posterior`, ...) work directly with covariance
matrices and serve as an independent route to the same quantities.
"""

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, ndtri
from scipy.stats import poisson

from ..smc.particles import Particles
from ..smc.sampler import metropolis_accept
from .nef import gaussian_power_log_constant, theta_of_alpha

LOG_2PI = math.log(2 * math.pi)


def _normals(u):
    return ndtri(np.clip(u, 1e-16, 1 - 1e-16))


def _pick(u, n):
    """Uniform integer in ``[0, n)`` from a uniform ``u``; vectorized."""
    return np.minimum((u * n).astype(np.int64), np.maximum(n - 1, 0))


# -- geometry -------------------------------------------------------------------


def fibonacci_cap(n, radius, min_polar_cos=-0.2):
    """``n`` near-uniform points on the cap ``z/radius >= min_polar_cos`` of a sphere."""
    i = np.arange(n) + 0.5
    z = 1.0 - (1.0 - min_polar_cos) * i / n
    r = np.sqrt(1.0 - z ** 2)
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return radius * np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def dipole_field(sensors, position, gain=1.0):
    """Lead field of one voxel: ``gain * (s_j - p) / |s_j - p|^3`` (sensors x 3)."""
    diff = np.asarray(sensors, dtype=float) - np.asarray(position, dtype=float)
    dist = np.linalg.norm(diff, axis=1, keepdims=True)
    if np.any(dist < 1e-9):
        raise ValueError("a sensor coincides with the voxel")
    return gain * diff / dist ** 3


@dataclass
class VoxelGrid:
    """Cubic voxel grid with a spherical-cap sensor array and its lead fields.

    Attributes
    ----------
    positions : ndarray, shape (V, 3)
        Voxel centres in cm.
    sensors : ndarray, shape (m, 3)
        Sensor positions in cm.
    lead : ndarray, shape (V, m, 3)
        ``lead[r]`` maps a moment at voxel ``r`` to the sensors.
    neighbours, n_neighbours
        Padded neighbour table for the location random walk.
    """

    positions: np.ndarray
    sensors: np.ndarray
    gain: float = 1.0
    neighbour_radius: float = 2.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.sensors = np.asarray(self.sensors, dtype=float)
        sep = np.linalg.norm(self.sensors[None, :, :] - self.positions[:, None, :], axis=2)
        if sep.min() < 1.0:
            raise ValueError(f"sensor-voxel separation {sep.min():.3g} cm is below 1 cm")
        self.lead = np.stack([dipole_field(self.sensors, p, self.gain) for p in self.positions])
        self.lead.setflags(write=False)
        dist = np.linalg.norm(self.positions[:, None, :] - self.positions[None, :, :], axis=2)
        near = (dist <= self.neighbour_radius + 1e-9) & (dist > 0)
        self.n_neighbours = near.sum(axis=1)
        if np.any(self.n_neighbours == 0):
            raise ValueError("some voxel has no neighbour within the random-walk radius")
        table = np.full((len(self.positions), self.n_neighbours.max()), -1, dtype=np.int64)
        for v, row in enumerate(near):
            idx = np.flatnonzero(row)
            table[v, :idx.size] = idx
        self.neighbours = table

    @classmethod
    def desk(cls, n_side=10, pitch=1.0, n_sensors=59, sensor_radius=12.0, gain=1000.0,
             neighbour_radius=2.0):
        """Cube of ``n_side**3`` voxels centred at the origin and a helmet of sensors."""
        ax = (np.arange(n_side) - (n_side - 1) / 2) * pitch
        gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
        positions = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
        sensors = fibonacci_cap(n_sensors, sensor_radius)
        params = {"n_side": n_side, "pitch": pitch, "n_sensors": n_sensors,
                  "sensor_radius": sensor_radius, "gain": gain,
                  "neighbour_radius": neighbour_radius}
        return cls(positions, sensors, gain=gain, neighbour_radius=neighbour_radius,
                   params=params)

    @property
    def n_voxels(self):
        return len(self.positions)

    @property
    def n_sensors(self):
        return len(self.sensors)

    def lead_matrix(self, locations):
        """Stacked lead field ``[G(r_1) ... G(r_d)]``, shape ``(m, 3d)``."""
        locations = np.asarray(locations, dtype=np.int64)
        if locations.size == 0:
            return np.zeros((self.n_sensors, 0))
        return np.concatenate([self.lead[r] for r in locations], axis=1)


def synthetic_lead_field(grid, r):
    """Sensors x 3 lead field of voxel ``r``."""
    if not 0 <= int(r) < grid.n_voxels:
        raise IndexError(f"voxel {r} outside grid of {grid.n_voxels}")
    return grid.lead[int(r)]


# -- dense Gaussian identities ----------------------------------------------------


def _gaussian_logpdf_cols(y, mean, cov):
    """Sum over columns of ``y`` of ``log N(y_t; mean, cov)``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[0] != cov.shape[0]:
        y = y.T
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("covariance is not positive definite") from None
    resid = y - np.asarray(mean, dtype=float).reshape(-1, 1)
    z = np.linalg.solve(chol, resid)
    k, n = y.shape
    logdet = 2 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (n * (k * LOG_2PI + logdet) + np.sum(z ** 2)))


def clg_marginal_loglik(lead, y, theta, lam=None, gamma=None, eta=0.0, sigma=None):
    """Marginal log-likelihood of a conditionally linear Gaussian model.

    Each column ``y_t`` of ``y`` is modelled as ``N(lead @ eta, lead Gamma lead^T + theta^2 Sigma)``
    and columns are independent.

    Parameters
    ----------
    lead : ndarray, shape (k, n)
        Linear map from the Gaussian block to the observations.
    y : ndarray, shape (k,) or (k, T)
    theta : float
        Noise scale.
    lam, gamma
        Either a scalar prior variance ``lam`` (``Gamma = lam * I``) or a full
        prior covariance ``gamma``.
    eta : float or ndarray
        Prior mean of the Gaussian block.
    sigma : ndarray, optional
        Known noise covariance, identity by default.
    """
    lead = np.atleast_2d(np.asarray(lead, dtype=float))
    k, n = lead.shape
    if not theta > 0:
        raise np.linalg.LinAlgError("theta must be positive")
    gamma = _prior_cov(n, lam, gamma)
    sigma = np.eye(k) if sigma is None else np.asarray(sigma, dtype=float)
    mean = lead @ (np.broadcast_to(eta, (n,)) if n else np.zeros(0))
    cov = lead @ gamma @ lead.T + theta ** 2 * sigma
    return _gaussian_logpdf_cols(np.asarray(y, dtype=float).reshape(k, -1), mean, cov)


def _prior_cov(n, lam, gamma):
    if gamma is not None:
        return np.atleast_2d(np.asarray(gamma, dtype=float))
    if lam is None or not lam > 0:
        raise np.linalg.LinAlgError("prior variance must be positive")
    return lam * np.eye(n)


def clg_conditional_posterior(lead, y, theta, lam=None, gamma=None, eta=0.0, sigma=None):
    """Gaussian posterior of the linear block given one observation vector.

    Uses the Joseph form ``(I - K G) Gamma (I - K G)^T + K theta^2 Sigma K^T``
    for the covariance so that it stays symmetric positive semi-definite.

    Returns
    -------
    mean : ndarray, shape (n,)
    cov : ndarray, shape (n, n)
    """
    lead = np.atleast_2d(np.asarray(lead, dtype=float))
    k, n = lead.shape
    gamma = _prior_cov(n, lam, gamma)
    sigma = np.eye(k) if sigma is None else np.asarray(sigma, dtype=float)
    prior_mean = np.broadcast_to(np.asarray(eta, dtype=float), (n,)).copy()
    noise = theta ** 2 * sigma
    innov = lead @ gamma @ lead.T + noise
    try:
        chol = np.linalg.cholesky(innov)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("innovation covariance is singular") from None
    # gain = Gamma G^T S^-1 via two triangular solves
    gain = np.linalg.solve(chol.T, np.linalg.solve(chol, lead @ gamma)).T
    y = np.asarray(y, dtype=float).reshape(k)
    mean = prior_mean + gain @ (y - lead @ prior_mean)
    a = np.eye(n) - gain @ lead
    cov = a @ gamma @ a.T + gain @ noise @ gain.T
    return mean, 0.5 * (cov + cov.T)


def clg_joint_gaussian(lead, theta, lam=None, gamma=None, eta=0.0, sigma=None):
    """Joint Gaussian of ``(x1, y)``: mean and block covariance.

    ``[[Gamma, Gamma G^T], [G Gamma, theta^2 Sigma + G Gamma G^T]]``.
    """
    lead = np.atleast_2d(np.asarray(lead, dtype=float))
    k, n = lead.shape
    gamma = _prior_cov(n, lam, gamma)
    sigma = np.eye(k) if sigma is None else np.asarray(sigma, dtype=float)
    m1 = np.broadcast_to(np.asarray(eta, dtype=float), (n,)).copy()
    cov = np.block([[gamma, gamma @ lead.T],
                    [lead @ gamma, theta ** 2 * sigma + lead @ gamma @ lead.T]])
    return np.concatenate([m1, lead @ m1]), cov


# -- source configurations --------------------------------------------------------


@dataclass(frozen=True)
class SourceConfig:
    """Number of dipoles, their voxel indices and the moment prior variance."""

    locations: tuple
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "locations", tuple(int(r) for r in self.locations))

    @property
    def d(self):
        return len(self.locations)


@dataclass
class ClgModel:
    """Multi-dipole CLG model on a :class:`VoxelGrid` with Rao-Blackwellized moments.

    ``data`` holds the full sensors x time recording; ``window`` selects the
    analysed time indices (1-based, inclusive). ``sigma`` is the known noise
    covariance. The moment prior mean is zero.
    """

    grid: VoxelGrid
    data: np.ndarray
    theta_star: float
    window: tuple = (40, 60)
    sigma: np.ndarray | None = None
    log_lambda_bounds: tuple = (-8.0, -5.0)
    poisson_rate: float = 1.0
    max_dipoles: int = 10
    lambda_step: float = 0.5
    name: str = "clg"
    n_evals: int = field(default=0, compare=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        m = self.grid.n_sensors
        if self.data.shape[0] != m:
            raise ValueError(f"data has {self.data.shape[0]} rows, grid has {m} sensors")
        if not self.theta_star > 0:
            raise ValueError("theta_star must be positive")
        lo, hi = self.window
        if not 1 <= lo <= hi <= self.data.shape[1]:
            raise ValueError(f"window {self.window} outside 1..{self.data.shape[1]}")
        sigma = np.eye(m) if self.sigma is None else np.asarray(self.sigma, dtype=float)
        if not np.allclose(sigma, sigma.T):
            raise ValueError("sigma must be symmetric")
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise ValueError("sigma must be positive definite") from None
        self.sigma = sigma
        self._whiten = np.linalg.inv(chol)
        self._logdet_sigma = 2 * float(np.sum(np.log(np.diag(chol))))
        self._y = self._whiten @ self.data[:, lo - 1:hi]
        self._yy = float(np.sum(self._y ** 2))
        self._lead = np.einsum("ij,vjk->vik", self._whiten, self.grid.lead)
        self._cache = {}
        self._lock = threading.Lock()
        self._log_trunc = float(poisson.logcdf(self.max_dipoles, self.poisson_rate))

    # sampler interface
    @property
    def n_init_uniforms(self):
        return 2 + self.max_dipoles

    n_move_uniforms = 10
    moves_per_sweep = 3

    @property
    def particle_dtypes(self):
        return {"d": "int64", "locs": "int64", "log_lam": "float64",
                "eig": "float64", "proj": "float64"}

    @property
    def n_window(self):
        return self._y.shape[1]

    @property
    def window_data(self):
        return self.data[:, self.window[0] - 1:self.window[1]]

    def config(self):
        return {"theta_star": self.theta_star, "window": list(self.window),
                "log_lambda_bounds": list(self.log_lambda_bounds),
                "poisson_rate": self.poisson_rate, "max_dipoles": self.max_dipoles,
                "lambda_step": self.lambda_step, "grid": self.grid.params}

    def clear_cache(self):
        with self._lock:
            self._cache.clear()

    def theta_of_alpha(self, alpha):
        return theta_of_alpha(self.theta_star, alpha)

    # -- statistics -----------------------------------------------------------

    def source_statistics(self, locs, d):
        """Spectral statistics of a batch of configurations.

        Parameters
        ----------
        locs : ndarray, shape (n, max_dipoles)
            Voxel indices, padded with -1 beyond ``d``.
        d : ndarray, shape (n,)

        Returns
        -------
        eig, proj : ndarray, shape (n, 3 * max_dipoles)
            Eigenvalues of ``G^T G`` and data energies per eigenvector,
            zero-padded. Both are invariant to the order of the dipoles.
        """
        n = len(d)
        width = 3 * self.max_dipoles
        eig = np.zeros((n, width))
        proj = np.zeros((n, width))
        with self._lock:
            self.n_evals += n
        keys = [tuple(sorted(int(v) for v in locs[i, :d[i]])) for i in range(n)]
        todo = {}
        for i, key in enumerate(keys):
            if key and key not in self._cache:
                todo.setdefault(len(key), set()).add(key)
        for dd, group in sorted(todo.items()):
            group = sorted(group)
            arr = np.array(group, dtype=np.int64)
            g = self._lead[arr].transpose(0, 2, 1, 3).reshape(len(group), -1, 3 * dd)
            gt = g.transpose(0, 2, 1)
            e, vecs = np.linalg.eigh(gt @ g)
            c = np.sum((vecs.transpose(0, 2, 1) @ (gt @ self._y)) ** 2, axis=2)
            e = np.maximum(e, 0.0)
            with self._lock:
                for key, ei, ci in zip(group, e, c):
                    self._cache[key] = (ei, ci)
        for i, key in enumerate(keys):
            if key:
                ei, ci = self._cache[key]
                eig[i, :ei.size] = ei
                proj[i, :ci.size] = ci
        return eig, proj

    def loglik_from_stats(self, eig, proj, log_lam, theta):
        """Marginal log-likelihood over the analysis window from spectral statistics."""
        lam = np.exp(np.asarray(log_lam, dtype=float))[..., None]
        th2 = np.asarray(theta, dtype=float) ** 2
        th2c = th2[..., None] if np.ndim(th2) else th2
        m, nt = self._y.shape
        logdet = np.sum(np.log1p(lam * eig / th2c), axis=-1)
        quad = self._yy - np.sum(proj / (th2c / lam + eig), axis=-1)
        return (-0.5 * nt * (m * np.log(2 * math.pi * th2) + self._logdet_sigma)
                - 0.5 * nt * logdet - 0.5 * quad / th2)

    def log_likelihood(self, particles, theta):
        return self.loglik_from_stats(particles.eig, particles.proj, particles.log_lam, theta)

    def log_bridge(self, particles, alpha):
        if alpha == 0:
            return np.zeros(len(particles))
        return self.log_likelihood(particles, self.theta_of_alpha(alpha))

    # -- prior ------------------------------------------------------------------

    def log_prior_parts(self, d, log_lam):
        d = np.asarray(d)
        lo, hi = self.log_lambda_bounds
        log_lam = np.asarray(log_lam, dtype=float)
        lp_d = np.where((d >= 0) & (d <= self.max_dipoles),
                        d * math.log(self.poisson_rate) - self.poisson_rate
                        - gammaln(d + 1) - self._log_trunc, -np.inf)
        lp_lam = np.where((log_lam >= lo) & (log_lam <= hi), -math.log(hi - lo), -np.inf)
        return lp_d + lp_lam - d * math.log(self.grid.n_voxels)

    def log_prior(self, particles):
        return self.log_prior_parts(particles.d, particles.log_lam)

    def log_target(self, particles, alpha):
        lp = self.log_prior(particles)
        ok = np.isfinite(lp)
        out = np.full(len(particles), -np.inf)
        if ok.any():
            out[ok] = lp[ok] + self.log_bridge(particles[ok], alpha)
        return out

    # -- sampling ---------------------------------------------------------------

    def _with_stats(self, d, locs, log_lam, **extra):
        eig, proj = self.source_statistics(locs, d)
        return Particles(d=d, locs=locs, log_lam=log_lam, eig=eig, proj=proj, **extra)

    def sample_prior(self, u):
        n = len(u)
        k = np.arange(self.max_dipoles + 1)
        cdf = np.cumsum(poisson.pmf(k, self.poisson_rate))
        cdf /= cdf[-1]
        d = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), self.max_dipoles)
        locs = _pick(u[:, 2:2 + self.max_dipoles], self.grid.n_voxels)
        locs = np.where(np.arange(self.max_dipoles)[None, :] < d[:, None], locs, -1)
        lo, hi = self.log_lambda_bounds
        log_lam = lo + (hi - lo) * u[:, 1]
        return self._with_stats(d.astype(np.int64), locs.astype(np.int64), log_lam)

    def tune(self, particles, weights):
        return {}

    def _accept(self, cur, prop, alpha, u, log_q, valid):
        """Accept/reject ``prop`` against ``cur`` where ``valid``; returns (particles, mask)."""
        idx = np.flatnonzero(valid)
        acc = np.zeros(len(cur), dtype=bool)
        if idx.size:
            sub_prop = prop[idx]
            sub_cur = cur[idx]
            acc[idx] = metropolis_accept(self.log_target(sub_cur, alpha),
                                         self.log_target(sub_prop, alpha), u[idx], log_q[idx])
        merged = {k: np.where(acc.reshape((-1,) + (1,) * (getattr(cur, k).ndim - 1)),
                              getattr(prop, k), getattr(cur, k)) for k in cur.fields}
        return Particles(**merged), acc

    def birth_death(self, p, alpha, u):
        """Birth of a uniformly placed dipole or death of a uniformly chosen one."""
        n, dmax = len(p), self.max_dipoles
        d, locs = p.d, p.locs
        cols = np.arange(dmax)[None, :]
        birth = u[:, 0] < 0.5
        new_vox = _pick(u[:, 1], self.grid.n_voxels)
        pos = _pick(u[:, 2], d + 1)
        shifted = np.concatenate([np.full((n, 1), -1), locs[:, :-1]], axis=1)
        born = np.where(cols < pos[:, None], locs,
                        np.where(cols == pos[:, None], new_vox[:, None], shifted))
        kill = _pick(u[:, 3], np.maximum(d, 1))
        pulled = np.concatenate([locs[:, 1:], np.full((n, 1), -1)], axis=1)
        died = np.where(cols < kill[:, None], locs, pulled)
        new_locs = np.where(birth[:, None], born, died)
        new_d = np.where(birth, d + 1, d - 1)
        valid = np.where(birth, d < dmax, d > 0)
        new_d = np.where(valid, new_d, d)
        new_locs = np.where(valid[:, None], new_locs, locs)
        log_v = math.log(self.grid.n_voxels)
        log_q = np.where(birth, log_v, -log_v)
        extra = {k: getattr(p, k) for k in p.fields
                 if k not in ("d", "locs", "log_lam", "eig", "proj")}
        prop = self._proposal(p, new_d, new_locs, valid, extra)
        return self._accept(p, prop, alpha, u[:, 4], log_q, valid)

    def _proposal(self, p, new_d, new_locs, valid, extra):
        eig = p.eig.copy()
        proj = p.proj.copy()
        idx = np.flatnonzero(valid)
        if idx.size:
            eig[idx], proj[idx] = self.source_statistics(new_locs[idx], new_d[idx])
        return Particles(d=new_d, locs=new_locs, log_lam=p.log_lam, eig=eig, proj=proj, **extra)

    def relocate(self, p, alpha, u):
        """Move one uniformly chosen dipole to a uniformly chosen neighbouring voxel."""
        d, locs = p.d, p.locs
        valid = d > 0
        j = _pick(u[:, 0], np.maximum(d, 1))
        rows = np.arange(len(p))
        old = np.where(valid, locs[rows, j], 0)
        counts = self.grid.n_neighbours[old]
        new = self.grid.neighbours[old, _pick(u[:, 1], counts)]
        new_locs = locs.copy()
        new_locs[rows[valid], j[valid]] = new[valid]
        log_q = np.log(counts) - np.log(self.grid.n_neighbours[new])
        extra = {k: getattr(p, k) for k in p.fields
                 if k not in ("d", "locs", "log_lam", "eig", "proj")}
        prop = self._proposal(p, d, new_locs, valid, extra)
        return self._accept(p, prop, alpha, u[:, 2], log_q, valid)

    def rescale(self, p, alpha, u):
        """Gaussian random walk on ``log lambda``; statistics are reused."""
        prop = p.replace(log_lam=p.log_lam + self.lambda_step * _normals(u[:, 0]))
        return self._accept(p, prop, alpha, u[:, 1], np.zeros(len(p)), np.ones(len(p), bool))

    def move(self, particles, alpha, u, tuning):
        """One sweep: birth/death, then relocation, then ``lambda`` update."""
        p, a1 = self.birth_death(particles, alpha, u[:, 0:5])
        p, a2 = self.relocate(p, alpha, u[:, 5:8])
        p, a3 = self.rescale(p, alpha, u[:, 8:10])
        return p, int(a1.sum()) + int(a2.sum()) + int(a3.sum())

    # -- per-configuration helpers ------------------------------------------------

    def config_particles(self, configs):
        configs = list(configs)
        dmax = self.max_dipoles
        d = np.array([c.d for c in configs], dtype=np.int64)
        if np.any(d > dmax):
            raise ValueError(f"configuration with more than {dmax} dipoles")
        locs = np.full((len(configs), dmax), -1, dtype=np.int64)
        for i, c in enumerate(configs):
            locs[i, :c.d] = c.locations
        log_lam = np.log([c.lam for c in configs])
        return self._with_stats(d, locs, log_lam)

    def configs(self, particles):
        return [SourceConfig(tuple(particles.locs[i, :particles.d[i]]),
                             math.exp(particles.log_lam[i])) for i in range(len(particles))]


def clg_config_loglik(model, config, theta, y=None):
    """Dense marginal log-likelihood of ``config`` summed over the analysis window."""
    y = model.window_data if y is None else y
    lead = model.grid.lead_matrix(config.locations)
    if config.d == 0:
        lead = np.zeros((model.grid.n_sensors, 1))
    return clg_marginal_loglik(lead, y, theta, lam=config.lam, sigma=model.sigma)


def prior_logdensity_source(model, config):
    """``log Poisson(d) + log U(log lambda) + d log(1/|Omega|)``; ``-inf`` off support."""
    if not config.lam > 0:
        return -math.inf
    return float(model.log_prior_parts(np.array(config.d), math.log(config.lam)))


def rb_tempered_logdensity(model, config, alpha, y=None):
    """Log of the corrected tempered density at exponent ``alpha``.

    Equal to the prior plus the marginal log-likelihood at
    ``theta_star / sqrt(alpha)``, i.e. the Rao-Blackwellized posterior for
    that noise level (unnormalized).
    """
    theta = theta_of_alpha(model.theta_star, alpha)
    lp = prior_logdensity_source(model, config)
    if not math.isfinite(lp):
        return lp
    return lp + clg_config_loglik(model, config, theta, y)


def defective_sequence_logconstant(model, config, lam, alpha):
    """Log of the factor multiplying the marginal when the full likelihood is tempered.

    Tempering the full likelihood at ``theta_star`` and integrating the linear
    block out gives ``l(lambda) * N(y; G eta, G Gamma G^T + theta_star^2/alpha Sigma)``
    per time point. The factor is the power constant of the noise density
    ``N(.; G x1, theta_star^2 Sigma)`` raised to ``alpha``, accumulated over the window.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    per_t = gaussian_power_log_constant(model.theta_star ** 2 * model.sigma, alpha)
    return model.n_window * per_t


def naive_power_logconstant(model, config, lam, alpha):
    """Log of the factor when the marginal likelihood itself is raised to ``alpha``.

    ``N(y; G eta, C)^alpha = c(C, alpha) N(y; G eta, C/alpha)`` with
    ``C = lam G G^T + theta_star^2 Sigma``; ``c`` depends on ``lam``.
    """
    lead = model.grid.lead_matrix(config.locations)
    cov = lam * lead @ lead.T + model.theta_star ** 2 * model.sigma
    return model.n_window * gaussian_power_log_constant(cov, alpha)


def naive_tempered_marginal_logdensity(model, config, alpha, y=None):
    """Prior times the integral of the tempered full likelihood over the linear block."""
    theta = theta_of_alpha(model.theta_star, alpha)
    return (prior_logdensity_source(model, config) + clg_config_loglik(model, config, theta, y)
            + defective_sequence_logconstant(model, config, config.lam, alpha))


# -- data -------------------------------------------------------------------------


def time_course(n_times=100, peak=50.0, width=10.0, strength=0.05):
    """Gaussian bump ``strength * exp(-(t - peak)^2 / (2 width^2))`` on ``t = 1..n_times``."""
    t = np.arange(1, n_times + 1, dtype=float)
    return strength * np.exp(-0.5 * ((t - peak) / width) ** 2)


def best_axis(grid, r):
    """Axis ``k`` maximizing ``|G(r) e_k|``; ties resolve to the lower axis."""
    return int(np.argmax(np.linalg.norm(grid.lead[int(r)], axis=0)))


def generate_clg_data(seed, grid, theta_range=(0.05, 0.5), n_dipoles=2, min_separation=3.0,
                      n_times=100, peak=50.0, width=10.0, strength=0.05, noise=True,
                      max_draws=10_000):
    """Simulate one multi-dipole recording.

    Returns
    -------
    data : ndarray, shape (n_sensors, n_times)
    truth : dict
        ``locations`` (voxel indices), ``positions`` (cm), ``axes``,
        ``theta_true``, ``moments`` (n_dipoles x 3 x n_times).
    """
    rng = np.random.default_rng(seed)
    theta_true = float(rng.uniform(*theta_range))
    for _ in range(max_draws):
        locs = rng.integers(0, grid.n_voxels, size=n_dipoles)
        pos = grid.positions[locs]
        dist = np.linalg.norm(pos[:, None] - pos[None, :], axis=2)
        if np.all(dist[np.triu_indices(n_dipoles, 1)] > min_separation):
            break
    else:
        raise RuntimeError(f"no admissible dipole placement after {max_draws} draws")
    course = time_course(n_times, peak, width, strength)
    axes = [best_axis(grid, r) for r in locs]
    moments = np.zeros((n_dipoles, 3, n_times))
    for i, k in enumerate(axes):
        moments[i, k] = course
    clean = sum(grid.lead[r] @ moments[i] for i, r in enumerate(locs))
    eps = rng.standard_normal(clean.shape) * theta_true
    data = clean + eps if noise else clean.copy()
    truth = {"locations": [int(r) for r in locs], "positions": pos.tolist(), "axes": axes,
             "theta_true": theta_true, "moments": moments}
    return data, truth
