"""Natural exponential family identities used to build interpretable ladders.

If ``p_theta(y) = exp(theta * T(y) - A(theta))`` then raising it to a power
``alpha`` gives another member of the family up to a constant,
``p_theta^alpha = exp(A(alpha*theta) - alpha*A(theta)) * p_{alpha*theta}``.
For Gaussian noise with precision ``theta = 1/sigma^2`` this is why tempering
the likelihood by ``alpha`` equals evaluating it at ``sigma / sqrt(alpha)``.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import DomainError


@dataclass(frozen=True)
class NefDescriptor:
    sufficient_statistic: Callable
    log_normalizer: Callable
    domain: tuple = (-math.inf, math.inf)

    def logpdf(self, y, theta):
        return theta * self.sufficient_statistic(y) - self.log_normalizer(theta)


def gaussian_nef(mean=0.0, gamma=1.0):
    """1-D Gaussian ``N(mean, gamma/theta)`` as an NEF in the precision ``theta``."""
    return NefDescriptor(
        sufficient_statistic=lambda y: -0.5 * (np.asarray(y) - mean) ** 2 / gamma,
        log_normalizer=lambda th: 0.5 * math.log(2 * math.pi * gamma / th),
        domain=(0.0, math.inf))


def nef_power_constant(log_normalizer, theta, alpha, domain=None):
    """Constant ``c`` with ``[p_theta]^alpha = c * p_{alpha*theta}``.

    Raises
    ------
    DomainError
        If ``alpha == 0`` or ``alpha*theta`` lies outside the natural
        parameter domain (either via ``domain`` or a non-finite normalizer).
    """
    if alpha == 0:
        raise DomainError("alpha must be non-zero")
    scaled = alpha * theta
    if domain is not None and not domain[0] < scaled < domain[1]:
        raise DomainError(f"alpha*theta={scaled} outside {domain}")
    try:
        a_scaled = log_normalizer(scaled)
        a_theta = log_normalizer(theta)
    except (ValueError, ZeroDivisionError) as exc:
        raise DomainError(str(exc)) from exc
    out = a_scaled - alpha * a_theta
    if not math.isfinite(out):
        raise DomainError(f"log-normalizer not finite at {scaled}")
    return math.exp(out)


def gaussian_power_log_constant(cov, alpha):
    """Log of the constant in :func:`gaussian_power`."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    m = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or not np.allclose(cov, cov.T):
        raise np.linalg.LinAlgError("covariance is not positive definite")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("covariance is not positive definite") from None
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    return 0.5 * ((1 - alpha) * (m * math.log(2 * math.pi) + logdet) - m * math.log(alpha))


def gaussian_power(mean, cov, alpha):
    """Power of an m-dimensional Gaussian density.

    ``N(x; mean, cov)^alpha = c * N(x; mean, cov/alpha)`` with
    ``c = sqrt(((2 pi)^m det(cov))^(1-alpha) * alpha^(-m))``.

    Returns
    -------
    constant : float
    new_cov : ndarray
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    c = math.exp(gaussian_power_log_constant(cov, alpha))
    return c, cov / alpha


def theta_of_alpha(theta_star, alpha):
    """Noise level whose posterior equals the ``alpha``-tempered one: ``theta_star/sqrt(alpha)``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    if not theta_star > 0:
        raise ValueError("theta_star must be positive")
    return theta_star / math.sqrt(alpha)
