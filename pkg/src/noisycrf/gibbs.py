"""Block Gibbs sampling and persistent chains for the negative phase."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    BiasPair,
    SufficientStats,
    clean_hidden_logits,
    clean_probs,
    cond_noisy,
    sample_units,
)
from scipy.special import expit

CLEAN_HIDDEN = "clean_hidden"
NOISY = "noisy"


@dataclass
class GibbsConfig:
    sweeps_per_update: int = 100
    chains_per_instance: int = 50

    def __post_init__(self):
        if self.sweeps_per_update < 1:
            raise ValueError("sweeps_per_update must be >= 1")
        if self.chains_per_instance < 1:
            raise ValueError("chains_per_instance must be >= 1")


def sample_clean_hidden(params, bias, y, rng):
    clean, hidden = clean_hidden_logits(params, bias, y)
    return sample_units(clean_probs(clean, params.mode), rng, params.mode), sample_units(expit(hidden), rng)


def sample_noisy(params, bias, yhat, h, rng):
    return sample_units(cond_noisy(params, bias, yhat, h), rng, params.mode)


def gibbs_sweep(params, bias, state, rng):
    """One block update: ``(yhat, h) ~ p(. | y, x)`` then ``y ~ p(. | yhat, h, x)``."""
    y, _, _ = state
    yhat, h = sample_clean_hidden(params, bias, y, rng)
    y = sample_noisy(params, bias, yhat, h, rng)
    return y, yhat, h


def rao_blackwell_stats(params, bias, y):
    """Chain-averaged statistics using exact conditionals at the sampled ``y``.

    ``y`` has shape ``(B, K, N)`` (K chains per instance); ``bias`` arrays
    broadcast against ``(B, K, .)``. Averaging ``E[yhat | y]`` rather than
    sampled ``yhat`` gives the same expectation with lower variance.
    """
    clean, hidden = clean_hidden_logits(params, bias, y)
    p_clean = clean_probs(clean, params.mode)
    p_hidden = expit(hidden)
    k = y.shape[-2]
    return SufficientStats(
        clean=p_clean.mean(axis=-2),
        noisy=y.mean(axis=-2),
        hidden=p_hidden.mean(axis=-2),
        clean_noisy=np.einsum("...kc,...kn->...cn", p_clean, y) / k,
        hidden_noisy=np.einsum("...kh,...kn->...hn", p_hidden, y) / k,
    )


class ChainStore:
    """Persistent chain states, one block of chains per training instance.

    Only one side of the bipartite state is kept: ``(yhat, h)`` when
    ``C + H < N``, else ``y``; the other side is resampled on retrieval.
    States are bit-packed into one flat buffer, so the logical footprint is
    exactly ``n_instances * chains_per_instance * width`` bits.
    """

    def __init__(self, n_instances, dims, chains_per_instance=50, stored_side=None, mode="multilabel"):
        n, c, h = dims
        if stored_side is None:
            stored_side = CLEAN_HIDDEN if c + h < n else NOISY
        if stored_side not in (CLEAN_HIDDEN, NOISY):
            raise ValueError(f"unknown stored_side {stored_side!r}")
        self.n_instances = int(n_instances)
        self.dims = (n, c, h)
        self.chains_per_instance = int(chains_per_instance)
        self.stored_side = stored_side
        self.mode = mode
        self.width = c + h if stored_side == CLEAN_HIDDEN else n
        self._bits = np.zeros(-(-self.memory_bits // 8), dtype=np.uint8)
        self.initialized = np.zeros(self.n_instances, dtype=bool)

    @property
    def memory_bits(self):
        return self.n_instances * self.chains_per_instance * self.width

    @property
    def nbytes(self):
        return self._bits.nbytes

    def _span(self, i):
        block = self.chains_per_instance * self.width
        start = int(i) * block
        return start, start + block

    def get(self, ids):
        """States of shape ``(len(ids), K, width)`` as float 0/1 arrays."""
        out = np.empty((len(ids), self.chains_per_instance, self.width))
        for row, i in enumerate(ids):
            if not 0 <= i < self.n_instances:
                raise KeyError(f"instance id {i} not in chain store")
            start, stop = self._span(i)
            lo, hi = start // 8, -(-stop // 8)
            bits = np.unpackbits(self._bits[lo:hi])[start - 8 * lo : stop - 8 * lo]
            out[row] = bits.reshape(self.chains_per_instance, self.width)
        return out

    def put(self, ids, states):
        states = np.asarray(states)
        for row, i in enumerate(ids):
            start, stop = self._span(i)
            lo, hi = start // 8, -(-stop // 8)
            bits = np.unpackbits(self._bits[lo:hi])
            bits[start - 8 * lo : stop - 8 * lo] = states[row].reshape(-1) > 0.5
            self._bits[lo:hi] = np.packbits(bits)
            self.initialized[i] = True

    def to_arrays(self):
        return {"chain_bits": self._bits.copy(), "chain_initialized": self.initialized.copy()}

    def meta(self):
        return {
            "n_instances": self.n_instances,
            "dims": list(self.dims),
            "chains_per_instance": self.chains_per_instance,
            "stored_side": self.stored_side,
            "mode": self.mode,
        }

    @classmethod
    def from_arrays(cls, meta, arrays):
        store = cls(
            meta["n_instances"],
            tuple(meta["dims"]),
            meta["chains_per_instance"],
            meta["stored_side"],
            meta["mode"],
        )
        if arrays["chain_bits"].shape != store._bits.shape:
            raise ValueError("chain buffer size does not match chain-store metadata")
        store._bits = arrays["chain_bits"].astype(np.uint8)
        store.initialized = arrays["chain_initialized"].astype(bool)
        return store


def negative_phase(params, bias, store, ids, observed_noisy, config, rng):
    """Advance the stored chains of ``ids`` and return model expectations.

    Cold instances start from their observed noisy labels plus a draw of
    ``(yhat, h)`` from the model conditional. Each instance runs
    ``config.sweeps_per_update`` sweeps on all of its chains; the final
    states are written back to ``store``.

    Returns
    -------
    SufficientStats
        Monte Carlo estimates of the model expectations, one row per id.
    """
    ids = np.asarray(ids)
    n, c, hd = params.dims
    if store.dims != (n, c, hd):
        raise ValueError(f"chain store dims {store.dims} do not match model dims {(n, c, hd)}")
    k = store.chains_per_instance
    bias = BiasPair(np.asarray(bias.a)[:, None, :], np.asarray(bias.b)[:, None, :])
    stored = store.get(ids)
    cold = ~store.initialized[ids]

    if store.stored_side == NOISY:
        y = stored
        y[cold] = np.asarray(observed_noisy)[cold][:, None, :]
        yhat, h = sample_clean_hidden(params, bias, y, rng)
    else:
        yhat, h = stored[..., :c], stored[..., c:]
        y = sample_noisy(params, bias, yhat, h, rng)
        if cold.any():
            y[cold] = np.broadcast_to(np.asarray(observed_noisy)[cold][:, None, :], (cold.sum(), k, n))
            yhat_cold, h_cold = sample_clean_hidden(
                params, BiasPair(bias.a[cold], bias.b[cold]), y[cold], rng
            )
            yhat[cold], h[cold] = yhat_cold, h_cold

    state = (y, yhat, h)
    for _ in range(config.sweeps_per_update):
        state = gibbs_sweep(params, bias, state, rng)
    y, yhat, h = state
    store.put(ids, y if store.stored_side == NOISY else np.concatenate([yhat, h], axis=-1))
    return rao_blackwell_stats(params, bias, y)
