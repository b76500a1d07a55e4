"""Hyperbolic (Lorentz-model) cross-modal embedding toolkit.

Dual residual-MLP encoders project paired feature vectors onto a shared
hyperboloid, trained with an exterior-angle contrastive objective plus
centroid and structural-hierarchy regularizers; retrieval and hierarchy
analyses live in :mod:`hypercross.evaluation`.
"""

__version__ = "0.1.0"
