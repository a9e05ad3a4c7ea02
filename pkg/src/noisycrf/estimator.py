"""scikit-learn style front end for the robust CRF trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import MULTICLASS, MULTILABEL, check_label_matrix
from .evaluation import accuracy, mean_average_precision
from .gibbs import GibbsConfig
from .trainer import TrainConfig, init_state, posterior_clean_proba, predict_clean_proba, train
from .variational import AlphaSchedule


class RobustCRF(ClassifierMixin, BaseEstimator):
    """CRF over clean and noisy labels trained by aux-regularized EM.

    Parameters
    ----------
    aux : AuxRBM or AuxTransition, optional
        Fitted auxiliary model of clean labels given noisy labels.
    variant : str
        One of ``no_pairwise``, ``crf_no_hidden``, ``crf_hidden``,
        ``crf_no_xy``, ``clean_only_ce``, ``noisy_only_ce``.
    n_hidden : int
        Hidden units of the CRF (used by ``crf_hidden`` and ``crf_no_xy``).
    alpha_start, alpha_end, alpha_epochs, alpha_shape
        Annealing schedule for the aux KL weight.
    mode : {"multilabel", "multiclass"}, optional
        Inferred from ``aux`` or from the noisy labels when omitted.

    Attributes
    ----------
    state_ : TrainState
    classes_ : ndarray
        Clean label indices.
    """

    def __init__(
        self,
        aux=None,
        variant="crf_hidden",
        n_hidden=20,
        epochs=20,
        batch_size=64,
        learning_rate=0.001,
        optimizer="adam",
        adam_eps=1.0,
        alpha_start=40.0,
        alpha_end=5.0,
        alpha_epochs=11,
        alpha_shape="linear",
        net_kind="linear",
        net_hidden_dim=32,
        chains_per_instance=50,
        sweeps_per_update=100,
        negative_phase="pcd",
        clean_fraction=None,
        mode=None,
        random_state=0,
    ):
        self.aux = aux
        self.variant = variant
        self.n_hidden = n_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.adam_eps = adam_eps
        self.alpha_start = alpha_start
        self.alpha_end = alpha_end
        self.alpha_epochs = alpha_epochs
        self.alpha_shape = alpha_shape
        self.net_kind = net_kind
        self.net_hidden_dim = net_hidden_dim
        self.chains_per_instance = chains_per_instance
        self.sweeps_per_update = sweeps_per_update
        self.negative_phase = negative_phase
        self.clean_fraction = clean_fraction
        self.mode = mode
        self.random_state = random_state

    def _config(self):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            clean_fraction=self.clean_fraction,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            adam_eps=self.adam_eps,
            alpha=AlphaSchedule(self.alpha_start, self.alpha_end, self.alpha_epochs, self.alpha_shape),
            variant=self.variant,
            gibbs=GibbsConfig(self.sweeps_per_update, self.chains_per_instance),
            n_hidden=self.n_hidden,
            net_kind=self.net_kind,
            net_hidden_dim=self.net_hidden_dim,
            negative_phase=self.negative_phase,
            seed=self.random_state,
        )

    def _resolve_mode(self, Y):
        if self.mode is not None:
            return self.mode
        if self.aux is not None:
            return self.aux.mode
        return MULTICLASS if np.all(Y.sum(axis=1) == 1) else MULTILABEL

    def fit(self, X, Y, Yhat=None, clean_mask=None):
        """Fit on noisy labels ``Y`` and, where ``clean_mask`` is true, clean labels ``Yhat``.

        Parameters
        ----------
        X : array-like of shape (n, d)
        Y : array-like of shape (n, N)
            Binary noisy label vectors (one-hot in multiclass mode).
        Yhat : array-like of shape (n, C), optional
            Clean labels; rows outside ``clean_mask`` are ignored.
        clean_mask : array-like of shape (n,), optional
            Defaults to all false (noisy labels only).
        """
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64)
        if len(Y) != len(X):
            raise ValueError("X and Y have different numbers of rows")
        mode = self._resolve_mode(Y)
        Y = check_label_matrix(Y, Y.shape[1], mode, "Y")
        clean_mask = np.zeros(len(X), dtype=bool) if clean_mask is None else np.asarray(clean_mask, dtype=bool)
        if clean_mask.shape != (len(X),):
            raise ValueError("clean_mask must have one entry per row")
        n_clean = self.aux.n_clean_ if self.aux is not None else (Y.shape[1] if Yhat is None else np.shape(Yhat)[1])
        if Yhat is None:
            if clean_mask.any():
                raise ValueError("clean_mask marks rows but Yhat is missing")
            Yhat = np.zeros((len(X), n_clean))
        Yhat = check_array(Yhat, dtype=np.float64)
        if clean_mask.any():
            check_label_matrix(Yhat[clean_mask], n_clean, mode, "Yhat")
        config = self._config()
        state = init_state(config, X.shape[1], Y.shape[1], n_clean, mode, len(X))
        self.state_ = train(X, Y, Yhat, clean_mask, self.aux, config, state=state)
        self.classes_ = np.arange(n_clean)
        self.mode_ = mode
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        """Marginal ``p(yhat | x)`` per clean label (or class)."""
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=np.float64)
        return predict_clean_proba(self.state_, X)

    def predict(self, X):
        proba = self.predict_proba(X)
        if self.mode_ == MULTICLASS:
            return proba.argmax(axis=1)
        return (proba >= 0.5).astype(np.int64)

    def posterior(self, X, Y):
        """Clean-label posterior ``q(yhat | y, x)`` at the final alpha."""
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64)
        alpha = self.state_.config.alpha(max(self.state_.epoch - 1, 0))
        return posterior_clean_proba(self.state_, X, Y, self.aux, alpha)

    def score(self, X, Yhat, sample_weight=None):
        """Accuracy (multiclass) or mAP (multilabel) as a fraction in ``[0, 1]``."""
        proba = self.predict_proba(X)
        Yhat = np.asarray(Yhat)
        if self.mode_ == MULTICLASS:
            if Yhat.ndim == 1:
                return float(np.mean(proba.argmax(axis=1) == Yhat))
            return accuracy(proba, Yhat) / 100.0
        return mean_average_precision(proba, Yhat) / 100.0
