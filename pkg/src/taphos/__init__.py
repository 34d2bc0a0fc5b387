"""Bayesian decomposition modeling: fits per-characteristic logistic rate
models, inverts them for postmortem-interval posteriors, and ranks candidate
experiments by expected information gain."""

__version__ = "0.1.0"
