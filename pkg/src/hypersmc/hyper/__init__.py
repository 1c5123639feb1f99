"""Hyper-parameter inference from a single tempered SMC run."""

from .eb import EBResult, Reweighted, anchor_iteration, eb_select, reweight_to_theta
from .fb import (RecycledPosterior, fb_average, recycle, sensitivity_reweight,
                 weighted_kde_mode, weighted_quantile)
from .ledger import EvidenceLedger, build_ledger, trapezoid_weights
from .posterior import HyperPosterior, hyper_posterior, theta_estimators
from .prior import HyperPrior
from .quadrature import adaptive_simpson, golden_section_max
