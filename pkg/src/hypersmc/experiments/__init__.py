"""Experiment drivers, baselines and metrics."""

from .baselines import (JointClgModel, JointToyModel, baseline_eb_toy, baseline_fb_clg,
                        baseline_fb_toy, grid_theta_posterior)
from .metrics import DipoleEstimate, dipole_estimators, ospa, weighted_kmeans
from .study import StudySpec, run_study
