"""Auxiliary-regularized variational posterior and the alpha schedule.

The optimal factorial ``q`` for

    KL[q || p_model] + alpha * KL[q || p_aux]

is the normalized weighted geometric mean of the two conditionals. For
factorial Bernoulli (or categorical) distributions this is a per-unit blend
of logits, ``(model_logit + alpha * aux_logit) / (alpha + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, rel_entr

from .core import MULTICLASS, FactorialPosterior, clean_hidden_logits, clean_probs

LINEAR = "linear"
EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class AlphaSchedule:
    """Non-increasing schedule for the auxiliary KL weight.

    ``linear`` interpolates ``start -> end`` over ``anneal_epochs``;
    ``exponential`` interpolates ``log(alpha + 1)`` instead, which decays
    quickly at first and still reaches ``end = 0`` exactly.
    """

    start: float = 40.0
    end: float = 5.0
    anneal_epochs: int = 11
    shape: str = LINEAR

    def __post_init__(self):
        if not self.start >= self.end >= 0:
            raise ValueError(f"need start >= end >= 0, got start={self.start}, end={self.end}")
        if self.anneal_epochs < 1:
            raise ValueError("anneal_epochs must be positive")
        if self.shape not in (LINEAR, EXPONENTIAL):
            raise ValueError(f"unknown schedule shape {self.shape!r}")

    @classmethod
    def constant(cls, value):
        return cls(value, value, 1)

    def __call__(self, epoch):
        if epoch >= self.anneal_epochs:
            return float(self.end)
        frac = max(epoch, 0) / self.anneal_epochs
        if self.shape == LINEAR:
            return float(self.start + (self.end - self.start) * frac)
        lo, hi = np.log1p(self.end), np.log1p(self.start)
        return float(np.expm1(hi + (lo - hi) * frac))


def _check_alpha(alpha):
    if not alpha >= 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")


def blend_logits(model_logits, aux_logits, alpha):
    """Per-unit logit of the weighted geometric mean."""
    return (model_logits + alpha * aux_logits) / (alpha + 1.0)


def blends_hidden(params, aux):
    """Hidden units are blended only when the aux model has the same hidden layer size."""
    h = params.dims[2]
    return aux is not None and h > 0 and aux.n_hidden == h


def q_noisy(params, bias, aux, y, alpha):
    """Variational posterior over ``(yhat, h)`` for an instance with only noisy labels."""
    _check_alpha(alpha)
    clean, hidden = clean_hidden_logits(params, bias, y)
    if aux is not None and alpha > 0:
        clean = blend_logits(clean, aux.clean_logits(y), alpha)
        if blends_hidden(params, aux):
            hidden = blend_logits(hidden, aux.hidden_logits(y), alpha)
    return FactorialPosterior.from_logits(clean, hidden, params.mode)


def q_clean(params, aux, y, alpha):
    """Variational posterior over ``h`` for an instance whose clean label is observed."""
    _check_alpha(alpha)
    y = np.asarray(y, dtype=np.float64)
    hidden = params.c + y @ params.Wp.T
    if alpha > 0 and blends_hidden(params, aux):
        hidden = blend_logits(hidden, aux.hidden_logits(y), alpha)
    return expit(hidden)


def _check_probs(p, name):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1) or np.any(np.isnan(p)):
        raise ValueError(f"{name} has probabilities outside [0, 1]")
    return p


def bernoulli_kl(q, p):
    """Summed KL between factorial Bernoullis along the last axis."""
    q, p = _check_probs(q, "q"), _check_probs(p, "p")
    return np.sum(rel_entr(q, p) + rel_entr(1.0 - q, 1.0 - p), axis=-1)


def categorical_kl(q, p):
    q, p = _check_probs(q, "q"), _check_probs(p, "p")
    return np.sum(rel_entr(q, p), axis=-1)


def factorial_kl(q, p, include_hidden=True):
    """KL between two factorial posteriors (clean part plus optionally hidden part)."""
    kl_clean = categorical_kl if q.mode == MULTICLASS else bernoulli_kl
    out = kl_clean(q.p_clean, p.p_clean)
    if include_hidden and np.shape(q.p_hidden)[-1:] != (0,):
        out = out + bernoulli_kl(q.p_hidden, p.p_hidden)
    return out


def kl_objective(q, p_model, p_aux, alpha):
    """``KL[q || p_model] + alpha * KL[q || p_aux]`` for factorial distributions.

    The aux term covers the hidden units only when ``p_aux`` carries a hidden
    layer of the same size as ``q``.
    """
    _check_alpha(alpha)
    value = factorial_kl(q, p_model)
    if p_aux is not None and alpha > 0:
        same_hidden = np.shape(p_aux.p_hidden) == np.shape(q.p_hidden)
        value = value + alpha * factorial_kl(q, p_aux, include_hidden=same_hidden)
    return value


def posterior_entropy(q):
    """Entropy of a factorial posterior (clean and hidden units)."""
    pc = np.asarray(q.p_clean)
    if q.mode == MULTICLASS:
        ent = -np.sum(rel_entr(pc, 1.0), axis=-1)
    else:
        ent = -np.sum(rel_entr(pc, 1.0) + rel_entr(1.0 - pc, 1.0), axis=-1)
    ph = np.asarray(q.p_hidden)
    if ph.shape[-1:] != (0,):
        ent = ent - np.sum(rel_entr(ph, 1.0) + rel_entr(1.0 - ph, 1.0), axis=-1)
    return ent


def posterior_from_probs(p_clean, p_hidden, mode):
    return FactorialPosterior(np.asarray(p_clean, dtype=np.float64), np.asarray(p_hidden, dtype=np.float64), mode)


def aux_posterior(aux, y, params):
    """Aux conditional restricted to the units that ``q`` is blended over.

    Built from the aux logits, so a transition posterior's zero entries
    appear at the log floor and KL terms stay finite.
    """
    p_clean = clean_probs(aux.clean_logits(y), params.mode)
    if blends_hidden(params, aux):
        p_hidden = expit(aux.hidden_logits(y))
    else:
        p_hidden = np.zeros(np.shape(p_clean)[:-1] + (0,))
    return posterior_from_probs(p_clean, p_hidden, params.mode)


def model_posterior(params, bias, y):
    clean, hidden = clean_hidden_logits(params, bias, y)
    return posterior_from_probs(clean_probs(clean, params.mode), expit(hidden), params.mode)
