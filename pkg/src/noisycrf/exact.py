"""Brute-force ground truth for small CRFs by full enumeration.

Configurations are enumerated lexicographically over ``(y, yhat, h)``;
in multiclass mode ``y`` and ``yhat`` range over one-hot vectors only. The
log-joint over the full grid is built by broadcasting the five energy terms,
and every normalizer is accumulated with log-sum-exp.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, rel_entr

from .aux import AuxRBM, AuxTransition
from .core import MULTICLASS, SufficientStats, energy
from .variational import blends_hidden, q_clean, q_noisy


class EnumerationLimitError(ValueError):
    pass


@dataclass(frozen=True)
class EnumerationLimit:
    max_total_units: int = 20

    def check(self, dims):
        total = sum(dims)
        if total > self.max_total_units:
            raise EnumerationLimitError(
                f"model has {total} binary units; exact enumeration is limited to {self.max_total_units}"
            )


DEFAULT_LIMIT = EnumerationLimit()


def configurations(size, one_hot=False):
    """All binary vectors of length ``size`` in lexicographic order."""
    if one_hot and size > 0:
        return np.eye(size)[::-1]
    if size == 0:
        return np.zeros((1, 0))
    return np.array(list(itertools.product((0.0, 1.0), repeat=size)))


def _grids(params):
    n, c, h = params.dims
    onehot = params.mode == MULTICLASS
    return configurations(n, onehot), configurations(c, onehot), configurations(h)


def log_joint_grid(params, bias, limit=DEFAULT_LIMIT):
    """Unnormalized log-probabilities, shape ``(|Y|, |Yhat|, |H|)``."""
    limit.check(params.dims)
    Y, YH, H = _grids(params)
    a, b = np.asarray(bias.a, dtype=np.float64), np.asarray(bias.b, dtype=np.float64)
    pair_clean = YH @ params.W @ Y.T  # (|Yhat|, |Y|)
    pair_hidden = H @ params.Wp @ Y.T  # (|H|, |Y|)
    return (
        (Y @ b)[:, None, None]
        + (YH @ a)[None, :, None]
        + (H @ params.c)[None, None, :]
        + pair_clean.T[:, :, None]
        + pair_hidden.T[:, None, :]
    )


def log_partition(params, bias, limit=DEFAULT_LIMIT):
    return float(logsumexp(log_joint_grid(params, bias, limit)))


def partition(params, bias, method="log", limit=DEFAULT_LIMIT):
    """Partition function ``Z(x)``.

    ``method="log"`` accumulates in the log domain; ``"direct"`` sums raw
    Boltzmann weights (only safe for moderate energies; used as a cross-check).
    """
    if method == "log":
        return float(np.exp(log_partition(params, bias, limit)))
    if method == "direct":
        return float(np.sum(np.exp(log_joint_grid(params, bias, limit))))
    if method == "loop":
        limit.check(params.dims)
        Y, YH, H = _grids(params)
        total = 0.0
        for y in Y:
            for yh in YH:
                for h in H:
                    total += np.exp(-energy(params, bias, y, yh, h))
        return float(total)
    raise ValueError(f"unknown method {method!r}")


def joint_probabilities(params, bias, limit=DEFAULT_LIMIT):
    grid = log_joint_grid(params, bias, limit)
    return np.exp(grid - logsumexp(grid))


def exact_marginals(params, bias, limit=DEFAULT_LIMIT):
    """Exact model expectations of all sufficient statistics (unbatched)."""
    Y, YH, H = _grids(params)
    P = joint_probabilities(params, bias, limit)
    p_y_yh = P.sum(axis=2)
    p_y_h = P.sum(axis=1)
    return SufficientStats(
        clean=YH.T @ p_y_yh.sum(axis=0),
        noisy=Y.T @ P.sum(axis=(1, 2)),
        hidden=H.T @ p_y_h.sum(axis=0),
        clean_noisy=YH.T @ p_y_yh.T @ Y,
        hidden_noisy=H.T @ p_y_h.T @ Y,
    )


def _row(Y, y):
    idx = np.flatnonzero(np.all(Y == np.asarray(y, dtype=np.float64), axis=1))
    if idx.size != 1:
        raise ValueError("label vector is not a valid configuration for this model")
    return int(idx[0])


def log_prob_noisy(params, bias, y, limit=DEFAULT_LIMIT):
    """``log p(y | x)`` with ``yhat`` and ``h`` summed out."""
    grid = log_joint_grid(params, bias, limit)
    Y, _, _ = _grids(params)
    return float(logsumexp(grid[_row(Y, y)]) - logsumexp(grid))


def log_prob_pair(params, bias, y, yhat, limit=DEFAULT_LIMIT):
    """``log p(y, yhat | x)`` with ``h`` summed out."""
    grid = log_joint_grid(params, bias, limit)
    Y, YH, _ = _grids(params)
    return float(logsumexp(grid[_row(Y, y), _row(YH, yhat)]) - logsumexp(grid))


def conditional_table(params, bias, y, limit=DEFAULT_LIMIT):
    """Exact ``p(yhat, h | y, x)`` as a ``(|Yhat|, |H|)`` table."""
    grid = log_joint_grid(params, bias, limit)
    Y, _, _ = _grids(params)
    row = grid[_row(Y, y)]
    return np.exp(row - logsumexp(row))


def conditional_unit_marginals(params, bias, y, limit=DEFAULT_LIMIT):
    """Per-unit marginals of the exact conditional, computed from the table."""
    _, YH, H = _grids(params)
    table = conditional_table(params, bias, y, limit)
    return YH.T @ table.sum(axis=1), H.T @ table.sum(axis=0)


def noisy_conditional_marginals(params, bias, yhat, h, limit=DEFAULT_LIMIT):
    """Exact ``p(y_j = 1 | yhat, h, x)`` by enumeration over ``y``."""
    grid = log_joint_grid(params, bias, limit)
    Y, YH, H = _grids(params)
    col = grid[:, _row(YH, yhat), _row(H, h)]
    return Y.T @ np.exp(col - logsumexp(col))


def factorial_table(p_clean, p_hidden, mode):
    """Probability table of a factorial distribution in enumeration order."""
    p_clean = np.asarray(p_clean, dtype=np.float64)
    p_hidden = np.asarray(p_hidden, dtype=np.float64)
    YH = configurations(len(p_clean), mode == MULTICLASS)
    H = configurations(len(p_hidden))
    if mode == MULTICLASS:
        t_clean = YH @ p_clean
    else:
        t_clean = np.prod(np.where(YH > 0.5, p_clean, 1.0 - p_clean), axis=1)
    t_hidden = np.prod(np.where(H > 0.5, p_hidden, 1.0 - p_hidden), axis=1)
    return t_clean[:, None] * t_hidden[None, :]


def aux_conditional_table(aux, y, n_hidden_units, mode):
    """Exact aux conditional over the units ``q`` is regularized on.

    Returns a ``(|Yhat|, |H|)`` table when hidden units are blended and a
    ``(|Yhat|,)`` vector otherwise. RBM conditionals are obtained by
    enumerating the aux model itself rather than from its factorial formula.
    """
    y = np.asarray(y, dtype=np.float64)
    if isinstance(aux, AuxTransition):
        # floored log posterior, matching the variational code, so KL stays finite
        logits = aux.log_posterior_[int(np.argmax(y))]
        return np.exp(logits - logsumexp(logits))
    if not isinstance(aux, AuxRBM):
        raise TypeError(f"unsupported aux model {type(aux).__name__}")
    p = aux.params_
    _, c, ha = p.dims
    YH = configurations(c, mode == MULTICLASS)
    clean_scores = YH @ (aux.bias_.a + p.W @ y)
    if not (ha > 0 and ha == n_hidden_units):
        return np.exp(clean_scores - logsumexp(clean_scores))
    DEFAULT_LIMIT.check((c, ha))
    H = configurations(ha)
    logits = clean_scores[:, None] + (H @ (p.c + p.Wp @ y))[None, :]
    return np.exp(logits - logsumexp(logits))


def _kl_tables(q, p):
    return float(np.sum(rel_entr(q, p)))


def exact_bound(params, bias, aux, y, alpha, q=None, limit=DEFAULT_LIMIT):
    """Regularized lower bound on ``log p(y | x)`` for a noisy-only instance.

    ``log p(y|x) - KL[q || p(yhat,h|y,x)] - alpha KL[q || p_aux(yhat,h|y)]``,
    each KL evaluated over the enumerated configuration table. ``q`` defaults
    to the optimal blended posterior.
    """
    if q is None:
        q = q_noisy(params, bias, aux, y, alpha)
    q_table = factorial_table(q.p_clean, q.p_hidden, params.mode)
    value = log_prob_noisy(params, bias, y, limit) - _kl_tables(q_table, conditional_table(params, bias, y, limit))
    if aux is not None and alpha > 0:
        aux_table = aux_conditional_table(aux, y, params.dims[2], params.mode)
        q_marg = q_table if aux_table.ndim == 2 else q_table.sum(axis=1)
        value -= alpha * _kl_tables(q_marg, aux_table)
    return float(value)


def exact_clean_bound(params, bias, aux, y, yhat, alpha, q_h=None, limit=DEFAULT_LIMIT):
    """Regularized lower bound on ``log p(y, yhat | x)`` for a clean instance."""
    if q_h is None:
        q_h = q_clean(params, aux, y, alpha)
    Y, YH, _ = _grids(params)
    grid = log_joint_grid(params, bias, limit)
    row = grid[_row(Y, y), _row(YH, yhat)]
    p_h = np.exp(row - logsumexp(row))
    q_table = factorial_table(np.zeros(0), q_h, "multilabel")[0]
    value = log_prob_pair(params, bias, y, yhat, limit) - _kl_tables(q_table, p_h)
    if aux is not None and alpha > 0 and blends_hidden(params, aux):
        aux_h = aux_conditional_table(aux, y, params.dims[2], params.mode).sum(axis=0)
        value -= alpha * _kl_tables(q_table, aux_h)
    return float(value)
