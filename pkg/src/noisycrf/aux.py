"""Fixed auxiliary label models used to regularize the variational posterior.

Two flavours share one small interface (``clean_logits``, ``hidden_logits``,
``predict_proba``, ``conditional``, ``n_hidden``, ``mode``):

* :class:`AuxRBM`, an x-independent RBM over ``(y, yhat, h)`` trained with
  persistent contrastive divergence on clean pairs;
* :class:`AuxTransition`, a noisy-to-clean class posterior obtained by
  inverting a clean-to-noisy transition matrix with Bayes' rule.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import container
from .core import (
    MULTICLASS,
    MULTILABEL,
    BiasPair,
    EnergyParams,
    FactorialPosterior,
    check_label_matrix,
    clean_probs,
)
from .gibbs import gibbs_sweep, rao_blackwell_stats

# log-probability floor for impossible transitions
_LOG_FLOOR = np.log(1e-300)


class NumericalError(RuntimeError):
    """Raised when training produces non-finite parameters or gradients."""


class AuxRBM(BaseEstimator):
    """RBM over noisy labels, clean labels and hidden units, trained by PCD.

    Parameters
    ----------
    n_hidden : int, default=200
        Number of hidden units.
    mode : {"multilabel", "multiclass"}
    n_chains : int, default=25
        Persistent fantasy chains shared across the dataset.
    n_sweeps : int, default=5
        Block Gibbs sweeps per parameter update.
    learning_rate : float, default=0.01
    n_epochs : int, default=100
    batch_size : int, default=25
    init_scale : float, default=0.01
        Standard deviation of the initial pairwise weights; biases start at 0.
    clip_norm : float, default=10.0
        Global gradient-norm clip applied to each update.
    random_state : int, default=0
    """

    def __init__(
        self,
        n_hidden=200,
        mode=MULTILABEL,
        n_chains=25,
        n_sweeps=5,
        learning_rate=0.01,
        n_epochs=100,
        batch_size=25,
        init_scale=0.01,
        clip_norm=10.0,
        random_state=0,
    ):
        self.n_hidden = n_hidden
        self.mode = mode
        self.n_chains = n_chains
        self.n_sweeps = n_sweeps
        self.learning_rate = learning_rate
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.init_scale = init_scale
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _init_params(self, n_noisy, n_clean, rng):
        self.params_ = EnergyParams(
            c=np.zeros(self.n_hidden),
            W=rng.normal(0.0, self.init_scale, (n_clean, n_noisy)),
            Wp=rng.normal(0.0, self.init_scale, (self.n_hidden, n_noisy)),
            mode=self.mode,
        )
        self.bias_ = BiasPair(np.zeros(n_clean), np.zeros(n_noisy))

    def fit(self, Y, Yhat, callback=None):
        """Fit on clean pairs.

        Parameters
        ----------
        Y : array-like of shape (n_samples, N)
            Noisy label vectors.
        Yhat : array-like of shape (n_samples, C)
            Clean label vectors.
        callback : callable, optional
            Called as ``callback(self, epoch)`` after every epoch.
        """
        Y = np.asarray(Y)
        Yhat = np.asarray(Yhat)
        if Y.ndim != 2 or Yhat.ndim != 2 or len(Y) != len(Yhat):
            raise ValueError("Y and Yhat must be 2-D with the same number of rows")
        if len(Y) == 0:
            raise ValueError("cannot train the auxiliary RBM on an empty clean set")
        Y = check_label_matrix(Y, Y.shape[1], self.mode, "Y")
        Yhat = check_label_matrix(Yhat, Yhat.shape[1], self.mode, "Yhat")
        n, c = Y.shape[1], Yhat.shape[1]
        rng = np.random.default_rng(self.random_state)
        self._init_params(n, c, rng)
        self.n_noisy_, self.n_clean_ = n, c
        chains = Y[rng.integers(0, len(Y), self.n_chains)].copy()
        for epoch in range(self.n_epochs):
            order = rng.permutation(len(Y))
            for lo in range(0, len(Y), self.batch_size):
                idx = order[lo : lo + self.batch_size]
                chains = self._update(Y[idx], Yhat[idx], chains, rng)
            if callback is not None:
                callback(self, epoch)
        return self

    def _update(self, y, yhat, chains, rng):
        p, bias = self.params_, self.bias_
        ph = expit(p.c + y @ p.Wp.T)
        state = (chains, None, None)
        for _ in range(self.n_sweeps):
            state = gibbs_sweep(p, bias, state, rng)
        neg = rao_blackwell_stats(p, bias, state[0][None])
        grads = {
            "a": yhat.mean(0) - neg.clean[0],
            "b": y.mean(0) - neg.noisy[0],
            "c": ph.mean(0) - neg.hidden[0],
            "W": yhat.T @ y / len(y) - neg.clean_noisy[0],
            "Wp": ph.T @ y / len(y) - neg.hidden_noisy[0],
        }
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if not np.isfinite(norm):
            raise NumericalError("non-finite gradient while training the auxiliary RBM")
        scale = self.learning_rate * min(1.0, self.clip_norm / max(norm, 1e-12))
        self.bias_ = BiasPair(self.bias_.a + scale * grads["a"], self.bias_.b + scale * grads["b"])
        p.c += scale * grads["c"]
        p.W += scale * grads["W"]
        p.Wp += scale * grads["Wp"]
        return state[0]

    def clean_logits(self, Y):
        check_is_fitted(self, "params_")
        Y = np.asarray(Y, dtype=np.float64)
        if Y.shape[-1] != self.n_noisy_:
            raise ValueError(f"expected noisy labels of length {self.n_noisy_}, got {Y.shape[-1]}")
        return self.bias_.a + Y @ self.params_.W.T

    def hidden_logits(self, Y):
        check_is_fitted(self, "params_")
        Y = np.asarray(Y, dtype=np.float64)
        if Y.shape[-1] != self.n_noisy_:
            raise ValueError(f"expected noisy labels of length {self.n_noisy_}, got {Y.shape[-1]}")
        return self.params_.c + Y @ self.params_.Wp.T

    def predict_proba(self, Y):
        """Aux posterior over clean labels given noisy labels."""
        return clean_probs(self.clean_logits(Y), self.mode)

    def conditional(self, Y):
        return FactorialPosterior.from_logits(self.clean_logits(Y), self.hidden_logits(Y), self.mode)

    def to_arrays(self):
        check_is_fitted(self, "params_")
        return {
            "a": self.bias_.a,
            "b": self.bias_.b,
            "c": self.params_.c,
            "W": self.params_.W,
            "Wp": self.params_.Wp,
        }

    @classmethod
    def from_arrays(cls, arrays, mode=MULTILABEL, **kwargs):
        """Rebuild a fitted model from raw parameter arrays."""
        c = np.asarray(arrays["c"], dtype=np.float64)
        model = cls(n_hidden=len(c), mode=mode, **kwargs)
        model.params_ = EnergyParams(c, arrays["W"], arrays["Wp"], mode)
        model.bias_ = BiasPair(np.asarray(arrays["a"], dtype=np.float64), np.asarray(arrays["b"], dtype=np.float64))
        model.n_noisy_, model.n_clean_ = model.params_.dims[0], model.params_.dims[1]
        return model


class AuxTransition(BaseEstimator):
    """Noisy-to-clean class posterior built from a clean-to-noisy transition matrix.

    ``T[k, j]`` is the probability that clean class ``k`` is observed as noisy
    class ``j``. The posterior is ``p(yhat=k | y=j) ∝ prior[k] * T[k, j]``.
    ``prior`` defaults to uniform.
    """

    n_hidden = 0
    mode = MULTICLASS

    def __init__(self, prior=None):
        self.prior = prior

    def fit(self, T):
        T = np.asarray(T, dtype=np.float64)
        if T.ndim != 2 or np.any(T < 0) or not np.allclose(T.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("T must be a non-negative row-stochastic matrix")
        prior = np.full(T.shape[0], 1.0 / T.shape[0]) if self.prior is None else np.asarray(self.prior, dtype=np.float64)
        if prior.shape != (T.shape[0],) or np.any(prior < 0) or prior.sum() <= 0:
            raise ValueError("prior must be a non-negative vector with one entry per clean class")
        joint = prior[:, None] * T
        mass = joint.sum(axis=0)
        posterior = np.divide(joint, mass, out=np.full_like(joint, 1.0 / T.shape[0]), where=mass > 0)
        self.T_ = T
        self.prior_ = prior / prior.sum()
        # rows: noisy class j, columns: clean class k
        self.posterior_ = posterior.T
        with np.errstate(divide="ignore"):
            self.log_posterior_ = np.maximum(np.log(self.posterior_), _LOG_FLOOR)
        self.n_noisy_, self.n_clean_ = T.shape[1], T.shape[0]
        return self

    def clean_logits(self, Y):
        check_is_fitted(self, "log_posterior_")
        Y = np.asarray(Y, dtype=np.float64)
        if Y.shape[-1] != self.n_noisy_:
            raise ValueError(f"expected one-hot noisy labels of length {self.n_noisy_}")
        return Y @ self.log_posterior_

    def hidden_logits(self, Y):
        return np.zeros(np.shape(Y)[:-1] + (0,))

    def predict_proba(self, Y):
        check_is_fitted(self, "posterior_")
        return np.asarray(Y, dtype=np.float64) @ self.posterior_

    def conditional(self, Y):
        return FactorialPosterior(self.predict_proba(Y), self.hidden_logits(Y), MULTICLASS)

    def to_arrays(self):
        check_is_fitted(self, "T_")
        return {"T": self.T_, "prior": self.prior_}


def aux_cond(aux, y):
    """Factorial aux conditional over clean and hidden units given noisy labels."""
    return aux.conditional(y)


def train_aux_rbm(Y, Yhat, **config):
    """Train an :class:`AuxRBM` on clean pairs; extra keywords are estimator params."""
    return AuxRBM(**config).fit(Y, Yhat)


def fit_aux_transition(T, prior=None):
    return AuxTransition(prior=prior).fit(T)


def class_prior(clean_labels, n_classes, smoothing=1.0):
    """Laplace-smoothed clean-class frequencies; uniform when no labels are given."""
    if clean_labels is None or len(clean_labels) == 0:
        return np.full(n_classes, 1.0 / n_classes)
    counts = np.asarray(clean_labels, dtype=np.float64).sum(axis=0) + smoothing
    return counts / counts.sum()


def save_aux(path, aux):
    if isinstance(aux, AuxRBM):
        meta = {"model": "rbm", "mode": aux.mode, "dims": list(aux.params_.dims)}
    elif isinstance(aux, AuxTransition):
        meta = {"model": "transition", "mode": MULTICLASS, "dims": [aux.n_noisy_, aux.n_clean_, 0]}
    else:
        raise TypeError(f"cannot serialize {type(aux).__name__}")
    container.save(path, "aux-model", aux.to_arrays(), meta)


def load_aux(path):
    meta, arrays = container.load(path, kind="aux-model")
    if meta.get("model") == "rbm":
        aux = AuxRBM.from_arrays(arrays, mode=meta["mode"])
    elif meta.get("model") == "transition":
        aux = AuxTransition(prior=arrays["prior"]).fit(arrays["T"])
    else:
        raise container.ContainerError(f"unknown aux model type {meta.get('model')!r}")
    if list(aux_dims(aux)) != list(meta["dims"]):
        raise container.ContainerError("aux-model header dims do not match stored arrays")
    return aux


def aux_dims(aux):
    """``(N, C, H_aux)`` of a fitted aux model."""
    return aux.n_noisy_, aux.n_clean_, aux.n_hidden


def transition_from_labels(clean, noisy, n_clean, n_noisy, smoothing=0.0):
    """Empirical clean-to-noisy transition matrix from paired class indices."""
    counts = np.zeros((n_clean, n_noisy)) + smoothing
    np.add.at(counts, (np.asarray(clean), np.asarray(noisy)), 1.0)
    rows = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, rows, out=np.eye(n_clean, n_noisy), where=rows > 0)

