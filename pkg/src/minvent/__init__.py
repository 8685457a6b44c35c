"""Minute-ventilation estimation with pruned, skip-rewired 1-D VGG regressors.

Everything runs on numpy: a small reverse-mode autodiff engine, a synthetic
respiration/heart-rate cohort, the VGG-style network graph, one-shot
magnitude pruning with sparse skip edges, training loops and the
comparison statistics.
"""

__version__ = "0.1.0"
