"""Small differentiable bias producers standing in for a CNN backbone.

A :class:`FeatureNet` maps feature vectors ``x`` to the clean-label biases
``a(x)`` and noisy-label biases ``b(x)``. ``linear`` uses affine heads on
``x``; ``mlp1`` puts one tanh hidden layer in front of the heads. With
``emits_noisy_bias=False`` the noisy bias is a learned constant vector.
"""

from __future__ import annotations

import numpy as np

from .core import BiasPair

LINEAR = "linear"
MLP1 = "mlp1"


class FeatureNet:
    def __init__(self, input_dim, n_clean, n_noisy, kind=LINEAR, hidden_dim=32, emits_noisy_bias=True, random_state=0):
        if kind not in (LINEAR, MLP1):
            raise ValueError(f"unknown feature net kind {kind!r}")
        if input_dim < 1:
            raise ValueError("input_dim must be positive")
        self.input_dim = int(input_dim)
        self.n_clean = int(n_clean)
        self.n_noisy = int(n_noisy)
        self.kind = kind
        self.hidden_dim = int(hidden_dim)
        self.emits_noisy_bias = bool(emits_noisy_bias)
        rng = np.random.default_rng(random_state)
        d = self.input_dim
        p = {}
        if kind == MLP1:
            p["V"] = rng.normal(0.0, np.sqrt(1.0 / d), (self.hidden_dim, d))
            p["v0"] = np.zeros(self.hidden_dim)
            d = self.hidden_dim
        p["A"] = rng.normal(0.0, np.sqrt(1.0 / d), (self.n_clean, d))
        p["a0"] = np.zeros(self.n_clean)
        if self.emits_noisy_bias:
            p["B"] = rng.normal(0.0, np.sqrt(1.0 / d), (self.n_noisy, d))
        p["b0"] = np.zeros(self.n_noisy)
        self.params = p

    @property
    def n_params(self):
        return sum(v.size for v in self.params.values())

    def _check_input(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1:] != (self.input_dim,):
            raise ValueError(f"expected inputs with {self.input_dim} features, got shape {X.shape}")
        if np.isnan(X).any():
            raise ValueError("NaN in network input")
        return X

    def _features(self, X):
        if self.kind == MLP1:
            return np.tanh(X @ self.params["V"].T + self.params["v0"])
        return X

    def forward(self, X):
        X = self._check_input(X)
        z = self._features(X)
        p = self.params
        a = z @ p["A"].T + p["a0"]
        if self.emits_noisy_bias:
            b = z @ p["B"].T + p["b0"]
        else:
            b = np.broadcast_to(p["b0"], X.shape[:-1] + (self.n_noisy,)).copy()
        return BiasPair(a, b)

    def backward(self, X, grad_a, grad_b):
        """Gradient of ``sum(grad_a * a(X)) + sum(grad_b * b(X))`` w.r.t. every parameter.

        ``X`` is ``(B, d)``; ``grad_a``/``grad_b`` are ``(B, C)``/``(B, N)``.
        """
        X = np.atleast_2d(self._check_input(X))
        grad_a = np.atleast_2d(np.asarray(grad_a, dtype=np.float64))
        grad_b = np.atleast_2d(np.asarray(grad_b, dtype=np.float64))
        if grad_a.shape != (len(X), self.n_clean) or grad_b.shape != (len(X), self.n_noisy):
            raise ValueError("upstream gradient shapes do not match (batch, C) and (batch, N)")
        p = self.params
        z = self._features(X)
        g = {"A": grad_a.T @ z, "a0": grad_a.sum(axis=0), "b0": grad_b.sum(axis=0)}
        dz = grad_a @ p["A"]
        if self.emits_noisy_bias:
            g["B"] = grad_b.T @ z
            dz = dz + grad_b @ p["B"]
        if self.kind == MLP1:
            dpre = dz * (1.0 - z * z)
            g["V"] = dpre.T @ X
            g["v0"] = dpre.sum(axis=0)
        return g

    def get_flat(self):
        return flatten(self.params)

    def set_flat(self, vector):
        self.params = unflatten(vector, self.params)

    def copy(self):
        new = object.__new__(FeatureNet)
        new.__dict__.update(self.__dict__)
        new.params = {k: v.copy() for k, v in self.params.items()}
        return new

    def config(self):
        return {
            "input_dim": self.input_dim,
            "n_clean": self.n_clean,
            "n_noisy": self.n_noisy,
            "kind": self.kind,
            "hidden_dim": self.hidden_dim,
            "emits_noisy_bias": self.emits_noisy_bias,
        }


def flatten(arrays):
    """Concatenate a dict of arrays in sorted-key order."""
    if not arrays:
        return np.zeros(0)
    return np.concatenate([np.ravel(arrays[k]) for k in sorted(arrays)])


def unflatten(vector, like):
    out, pos = {}, 0
    for k in sorted(like):
        size = np.size(like[k])
        out[k] = np.asarray(vector[pos : pos + size], dtype=np.float64).reshape(np.shape(like[k]))
        pos += size
    if pos != len(vector):
        raise ValueError(f"flat vector has {len(vector)} entries, layout needs {pos}")
    return out


def global_norm(grads):
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))
