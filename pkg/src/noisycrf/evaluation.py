"""Metrics and comparison baselines.

Metrics are returned in percent. Average precision is non-interpolated:
the mean of precision at the rank of each positive, with score ties broken
by ascending instance id. The baselines train a :class:`FeatureNet` clean
head with plain, forward-corrected or backward-corrected cross-entropy.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import softmax

from .features import FeatureNet, global_norm
from .trainer import Adam

logger = logging.getLogger(__name__)

_CLAMP = 1e-12


@dataclass
class MetricReport:
    prediction_accuracy: float = math.nan
    recovery_accuracy: float = math.nan
    map: float = math.nan
    per_class: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("prediction_accuracy", "recovery_accuracy", "map"):
            value = getattr(self, name)
            if not (math.isnan(value) or 0.0 <= value <= 100.0):
                raise ValueError(f"{name}={value} is outside [0, 100]")

    def to_dict(self):
        return asdict(self)


def accuracy(proba, labels):
    """Argmax accuracy in percent; ``labels`` are one-hot rows or class indices."""
    proba = np.asarray(proba)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    if len(proba) != len(labels):
        raise ValueError("prediction and label counts differ")
    if len(labels) == 0:
        return math.nan
    return 100.0 * float(np.mean(proba.argmax(axis=1) == labels))


def recovery_accuracy(q, hidden_clean):
    """Accuracy of ``q`` at the hidden clean labels of the noisy training set.

    Multiclass (one-hot targets): argmax agreement. Multilabel targets: mean
    per-label agreement of ``q >= 0.5``; report :func:`mean_average_precision`
    alongside it as the primary multilabel recovery figure.
    """
    if hidden_clean is None:
        raise ValueError("recovery accuracy needs the hidden clean labels")
    q = np.asarray(q, dtype=np.float64)
    hidden_clean = np.asarray(hidden_clean, dtype=np.float64)
    if q.shape != hidden_clean.shape:
        raise ValueError(f"q has shape {q.shape}, hidden labels {hidden_clean.shape}")
    if np.all(hidden_clean.sum(axis=1) == 1):
        return accuracy(q, hidden_clean)
    return 100.0 * float(np.mean((q >= 0.5) == (hidden_clean > 0.5)))


def average_precision(scores, labels, ids=None):
    """Non-interpolated AP of one class; ``nan`` when there are no positives."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) > 0.5
    ids = np.arange(len(scores)) if ids is None else np.asarray(ids)
    if not labels.any():
        return math.nan
    order = np.lexsort((ids, -scores))
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(scores, labels, ids=None):
    """Unweighted mean over classes of per-class AP, in percent.

    Classes without positives are skipped with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError("scores and labels must be matching (n, K) matrices")
    aps = np.array([average_precision(scores[:, k], labels[:, k], ids) for k in range(scores.shape[1])])
    empty = np.isnan(aps)
    if empty.any():
        warnings.warn(f"{int(empty.sum())} classes have no positives and are excluded from mAP", stacklevel=2)
    if empty.all():
        return math.nan
    return 100.0 * float(np.mean(aps[~empty]))


def per_class_average_precision(scores, labels):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {str(k): 100.0 * average_precision(scores[:, k], labels[:, k]) for k in range(scores.shape[1])}


def _check_transition(T):
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 2 or T.shape[0] != T.shape[1] or np.any(T < 0) or not np.allclose(T.sum(axis=1), 1.0):
        raise ValueError("T must be a square row-stochastic matrix")
    return T


def cross_entropy(model_probs, noisy_label):
    """``-log p[noisy]`` with the probability clamped at ``1e-12``."""
    p = np.asarray(model_probs, dtype=np.float64)
    picked = np.take_along_axis(p, np.asarray(noisy_label)[..., None], axis=-1)[..., 0]
    return -np.log(np.maximum(picked, _CLAMP))


def forward_corrected_loss(model_probs, noisy_label, T):
    """``-log (T^T p)[noisy]``: the model's clean distribution pushed through the noise."""
    T = _check_transition(T)
    mixed = np.asarray(model_probs, dtype=np.float64) @ T
    picked = np.take_along_axis(mixed, np.asarray(noisy_label)[..., None], axis=-1)[..., 0]
    if np.any(picked < _CLAMP):
        logger.warning("forward-corrected probability below %g clamped for %d rows", _CLAMP, int(np.sum(picked < _CLAMP)))
    return -np.log(np.maximum(picked, _CLAMP))


def _inverse(T):
    T = _check_transition(T)
    if np.linalg.cond(T) > 1e12:
        raise ValueError("transition matrix is singular; backward correction is undefined")
    return np.linalg.inv(T)


def backward_corrected_loss(per_class_ce_losses, noisy_label, T):
    """``(T^-1 l)[noisy]`` where ``l[k]`` is the cross-entropy the model would pay for class ``k``."""
    Tinv = _inverse(T)
    losses = np.asarray(per_class_ce_losses, dtype=np.float64)
    corrected = losses @ Tinv.T
    return np.take_along_axis(corrected, np.asarray(noisy_label)[..., None], axis=-1)[..., 0]


def _logit_grad(method, p, noisy, T, Tinv):
    """Gradient of the per-row loss with respect to the softmax logits."""
    rows = np.arange(len(noisy))
    if method == "ce":
        g = p.copy()
        g[rows, noisy] -= 1.0
        return g
    if method == "forward":
        s = np.maximum((p @ T)[rows, noisy], _CLAMP)
        return p * (1.0 - T[:, noisy].T / s[:, None])
    # rows of T^-1 sum to one, so sum_k Tinv[j, k] (p - e_k) = p - Tinv[j]
    return p - Tinv[noisy]


class CorrectedClassifier:
    """Softmax classifier trained on noisy labels with an optional loss correction.

    Parameters
    ----------
    method : {"ce", "forward", "backward"}
    T : ndarray, optional
        Clean-to-noisy transition matrix (required for corrections).
    kind, hidden_dim : network shape, as for :class:`FeatureNet`.
    """

    def __init__(self, method="ce", T=None, kind="mlp1", hidden_dim=32, epochs=30, batch_size=64, learning_rate=0.001, adam_eps=1e-8, grad_clip=10.0, random_state=0):
        if method not in ("ce", "forward", "backward"):
            raise ValueError(f"unknown correction {method!r}")
        self.method = method
        self.T = T
        self.kind = kind
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.adam_eps = adam_eps
        self.grad_clip = grad_clip
        self.random_state = random_state

    def fit(self, X, noisy):
        X = np.asarray(X, dtype=np.float64)
        noisy = np.asarray(noisy)
        if noisy.ndim == 2:
            noisy = noisy.argmax(axis=1)
        n_classes = len(self.T) if self.T is not None else int(noisy.max()) + 1
        T = _check_transition(self.T) if self.T is not None else np.eye(n_classes)
        Tinv = _inverse(T) if self.method == "backward" else None
        if self.method != "ce" and self.T is None:
            raise ValueError(f"{self.method} correction needs a transition matrix")
        self.net_ = FeatureNet(X.shape[1], n_classes, n_classes, kind=self.kind, hidden_dim=self.hidden_dim, emits_noisy_bias=False, random_state=self.random_state)
        opt = Adam(self.learning_rate, self.adam_eps)
        zeros_b = None
        self.loss_trace_ = []
        for epoch in range(self.epochs):
            rng = np.random.default_rng([self.random_state, epoch, 0xBA5E])
            order = rng.permutation(len(X))
            total = 0.0
            for lo in range(0, len(X), self.batch_size):
                ids = order[lo : lo + self.batch_size]
                a = self.net_.forward(X[ids]).a
                p = softmax(a, axis=1)
                total += float(np.sum(self.loss(p, noisy[ids], T, Tinv)))
                g = -_logit_grad(self.method, p, noisy[ids], T, Tinv) / len(ids)
                if zeros_b is None or len(zeros_b) != len(ids):
                    zeros_b = np.zeros((len(ids), n_classes))
                grads = self.net_.backward(X[ids], g, zeros_b)
                norm = global_norm(grads)
                if norm > self.grad_clip:
                    grads = {k: v * (self.grad_clip / norm) for k, v in grads.items()}
                opt.step(self.net_.params, grads)
            self.loss_trace_.append(total / len(X))
        return self

    def loss(self, p, noisy, T, Tinv):
        if self.method == "ce":
            return cross_entropy(p, noisy)
        if self.method == "forward":
            return forward_corrected_loss(p, noisy, T)
        per_class = -np.log(np.maximum(p, _CLAMP))
        return np.take_along_axis(per_class @ Tinv.T, noisy[:, None], axis=1)[:, 0]

    def predict_proba(self, X):
        return softmax(self.net_.forward(np.asarray(X, dtype=np.float64)).a, axis=1)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)
