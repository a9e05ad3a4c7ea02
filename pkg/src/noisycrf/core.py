"""Energy, conditionals and joint scores of the noisy-label CRF.

The model couples three binary vectors: noisy labels ``y`` (length N),
latent clean labels ``yhat`` (length C) and hidden units ``h`` (length H).
Its energy is

    E(y, yhat, h | x) = -a(x).yhat - b(x).y - c.h - yhat' W y - h' W' y

where ``a(x)`` and ``b(x)`` come from a feature network and ``c``, ``W``,
``W'`` are free parameters. The graph is bipartite between ``y`` and
``(yhat, h)``, so both block conditionals factorize.

All functions broadcast over leading batch axes: ``y`` may be ``(N,)`` or
``(..., N)`` as long as the matching bias arrays broadcast against it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

MULTILABEL = "multilabel"
MULTICLASS = "multiclass"
MODES = (MULTILABEL, MULTICLASS)


class BiasPair(NamedTuple):
    """Input-dependent biases on clean (``a``) and noisy (``b``) units."""

    a: np.ndarray
    b: np.ndarray


@dataclass
class EnergyParams:
    """The x-independent CRF parameters.

    Parameters
    ----------
    c : ndarray of shape (H,)
        Hidden-unit biases.
    W : ndarray of shape (C, N)
        Clean-noisy pairwise weights.
    Wp : ndarray of shape (H, N)
        Hidden-noisy pairwise weights.
    mode : {"multilabel", "multiclass"}
        In multiclass mode ``y`` and ``yhat`` are one-hot vectors.
    """

    c: np.ndarray
    W: np.ndarray
    Wp: np.ndarray
    mode: str = MULTILABEL

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        self.W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        self.Wp = np.asarray(self.Wp, dtype=np.float64)
        if self.Wp.ndim != 2:
            self.Wp = self.Wp.reshape(self.c.shape[0], self.W.shape[1])
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.validate()

    @classmethod
    def zeros(cls, n_noisy, n_clean, n_hidden=0, mode=MULTILABEL):
        return cls(
            c=np.zeros(n_hidden),
            W=np.zeros((n_clean, n_noisy)),
            Wp=np.zeros((n_hidden, n_noisy)),
            mode=mode,
        )

    @property
    def dims(self):
        """``(N, C, H)``."""
        return self.W.shape[1], self.W.shape[0], self.c.shape[0]

    def validate(self):
        n, c, h = self.dims
        if self.Wp.shape != (h, n):
            raise ValueError(f"Wp has shape {self.Wp.shape}, expected {(h, n)}")
        for name in ("c", "W", "Wp"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    def copy(self):
        return EnergyParams(self.c.copy(), self.W.copy(), self.Wp.copy(), self.mode)


@dataclass
class FactorialPosterior:
    """Per-unit probabilities of a factorial distribution over ``(yhat, h)``.

    In multiclass mode ``p_clean`` is a categorical distribution over the C
    classes (last axis sums to one); hidden units stay Bernoulli.
    """

    p_clean: np.ndarray
    p_hidden: np.ndarray
    mode: str = MULTILABEL
    clean_logits: np.ndarray | None = field(default=None, repr=False)
    hidden_logits: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_logits(cls, clean_logits, hidden_logits, mode=MULTILABEL):
        return cls(
            p_clean=clean_probs(clean_logits, mode),
            p_hidden=expit(hidden_logits),
            mode=mode,
            clean_logits=clean_logits,
            hidden_logits=hidden_logits,
        )


def sigmoid(u):
    """Logistic function, overflow-safe for any magnitude of ``u``."""
    return expit(np.asarray(u, dtype=np.float64))


def log_sigmoid(u):
    return -np.logaddexp(0.0, -np.asarray(u, dtype=np.float64))


def clean_probs(logits, mode):
    if mode == MULTICLASS:
        return softmax(logits, axis=-1)
    return expit(logits)


def clean_log_probs(logits, mode):
    """Log-probabilities of ``yhat_i = 1`` (multilabel) or of class i."""
    if mode == MULTICLASS:
        return log_softmax(logits, axis=-1)
    return log_sigmoid(logits)


def _check_last(arr, size, name):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape[-1:] != (size,):
        raise ValueError(f"{name} has trailing dimension {arr.shape[-1:]}, expected ({size},)")
    return arr


def _check_bias(params, bias):
    n, c, _ = params.dims
    return BiasPair(_check_last(bias.a, c, "bias.a"), _check_last(bias.b, n, "bias.b"))


def energy(params, bias, y, yhat, h):
    """Quadratic energy of a configuration; lower energy means more likely."""
    n, c, hd = params.dims
    a, b = _check_bias(params, bias)
    y = _check_last(y, n, "y")
    yhat = _check_last(yhat, c, "yhat")
    h = _check_last(h, hd, "h")
    return -(
        np.sum(a * yhat, axis=-1)
        + np.sum(b * y, axis=-1)
        + h @ params.c
        + np.sum(yhat * (y @ params.W.T), axis=-1)
        + np.sum(h * (y @ params.Wp.T), axis=-1)
    )


def unnormalized_log_joint(params, bias, y, yhat, h):
    return -energy(params, bias, y, yhat, h)


def clean_hidden_logits(params, bias, y):
    """Logits of ``p(yhat | y, x)`` and ``p(h | y)``."""
    n, _, _ = params.dims
    a, _ = _check_bias(params, bias)
    y = _check_last(y, n, "y")
    return a + y @ params.W.T, params.c + y @ params.Wp.T


def cond_clean_hidden(params, bias, y):
    """Exact factorial conditional ``p(yhat, h | y, x)``.

    The hidden part depends on ``y`` only; it ignores ``x`` and ``bias.a``.
    """
    clean, hidden = clean_hidden_logits(params, bias, y)
    return FactorialPosterior.from_logits(clean, hidden, params.mode)


def noisy_logits(params, bias, yhat, h):
    _, c, hd = params.dims
    _, b = _check_bias(params, bias)
    yhat = _check_last(yhat, c, "yhat")
    h = _check_last(h, hd, "h")
    return b + yhat @ params.W + h @ params.Wp


def cond_noisy(params, bias, yhat, h):
    """``p(y_j = 1 | yhat, h, x)``, or the class distribution in multiclass mode."""
    return clean_probs(noisy_logits(params, bias, yhat, h), params.mode)


def sample_units(probs, rng, mode=MULTILABEL):
    """Draw binary units (or one-hot categories) from per-unit probabilities."""
    probs = np.asarray(probs)
    if mode == MULTICLASS:
        u = rng.random(probs.shape[:-1] + (1,))
        idx = np.minimum((np.cumsum(probs, axis=-1) < u).sum(axis=-1), probs.shape[-1] - 1)
        out = np.zeros(probs.shape)
        np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
        return out
    return (rng.random(probs.shape) < probs).astype(np.float64)


def check_label_matrix(labels, size, mode, name="labels"):
    """Validate a stack of binary label vectors; returns float64 0/1 array."""
    labels = np.asarray(labels)
    if labels.shape[-1:] != (size,):
        raise ValueError(f"{name} has trailing dimension {labels.shape[-1:]}, expected ({size},)")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError(f"{name} must contain only 0/1 entries")
    if mode == MULTICLASS and not np.all(labels.sum(axis=-1) == 1):
        raise ValueError(f"{name} must be one-hot in multiclass mode")
    return labels.astype(np.float64)


def one_hot(classes, n_classes):
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size and (classes.min() < 0 or classes.max() >= n_classes):
        raise ValueError("class index out of range")
    out = np.zeros(classes.shape + (n_classes,))
    np.put_along_axis(out, classes[..., None], 1.0, axis=-1)
    return out


@dataclass
class SufficientStats:
    """Per-instance expectations of the energy's sufficient statistics.

    Shapes carry a leading batch axis: ``clean (B, C)``, ``noisy (B, N)``,
    ``hidden (B, H)``, ``clean_noisy (B, C, N)``, ``hidden_noisy (B, H, N)``.
    The gradient of ``-E`` with respect to ``(a, b, c, W, W')`` is exactly
    ``(clean, noisy, hidden, clean_noisy, hidden_noisy)``.
    """

    clean: np.ndarray
    noisy: np.ndarray
    hidden: np.ndarray
    clean_noisy: np.ndarray
    hidden_noisy: np.ndarray

    @classmethod
    def from_factorial(cls, clean, noisy, hidden):
        """Statistics of a distribution where ``y`` is fixed (or independent of the rest)."""
        clean, noisy, hidden = (np.asarray(v, dtype=np.float64) for v in (clean, noisy, hidden))
        return cls(
            clean=clean,
            noisy=noisy,
            hidden=hidden,
            clean_noisy=clean[..., :, None] * noisy[..., None, :],
            hidden_noisy=hidden[..., :, None] * noisy[..., None, :],
        )

    def __sub__(self, other):
        return SufficientStats(
            self.clean - other.clean,
            self.noisy - other.noisy,
            self.hidden - other.hidden,
            self.clean_noisy - other.clean_noisy,
            self.hidden_noisy - other.hidden_noisy,
        )
