"""Robust CRF training from noisy labels with auxiliary-regularized variational EM."""

__version__ = "0.1.0"
