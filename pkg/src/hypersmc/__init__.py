"""Tempered SMC samplers whose intermediate distributions are posteriors
under a ladder of noise levels, giving Empirical-Bayes selection and
Fully-Bayesian averaging of the noise hyper-parameter from a single run."""

__version__ = "0.1.0"
