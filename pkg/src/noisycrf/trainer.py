"""Regularized semi-supervised EM for the noisy-label CRF.

Each minibatch mixes noisy-only instances ``(x, y)`` and clean instances
``(x, y, yhat)``. The E step sets the variational posterior to the
alpha-weighted geometric mean of the model and aux conditionals; the M step
ascends the bound with gradient ``positive phase - negative phase`` where
the positive phase is closed-form under the factorial ``q`` and the negative
phase comes from persistent Gibbs chains (or, for tiny models, from exact
enumeration; for the no-pairwise variant, from the factorized model itself).

Randomness is counter-based: shuffling uses a generator seeded from
``(seed, epoch)`` and each minibatch draws from ``(seed, epoch, batch)``, so
a run resumed from a checkpoint replays the same random stream.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from . import container
from .aux import NumericalError
from .core import (
    MULTICLASS,
    MULTILABEL,
    BiasPair,
    EnergyParams,
    SufficientStats,
    clean_log_probs,
    clean_probs,
)
from .features import FeatureNet, global_norm
from .gibbs import ChainStore, GibbsConfig, gibbs_sweep, negative_phase, rao_blackwell_stats, sample_units
from .variational import (
    AlphaSchedule,
    aux_posterior,
    blends_hidden,
    factorial_kl,
    posterior_entropy,
    posterior_from_probs,
    q_clean,
    q_noisy,
)

logger = logging.getLogger(__name__)

NO_PAIRWISE = "no_pairwise"
CRF_NO_HIDDEN = "crf_no_hidden"
CRF_HIDDEN = "crf_hidden"
CRF_NO_XY = "crf_no_xy"
CLEAN_ONLY_CE = "clean_only_ce"
NOISY_ONLY_CE = "noisy_only_ce"
VARIANTS = (NO_PAIRWISE, CRF_NO_HIDDEN, CRF_HIDDEN, CRF_NO_XY, CLEAN_ONLY_CE, NOISY_ONLY_CE)
CE_VARIANTS = (CLEAN_ONLY_CE, NOISY_ONLY_CE)
PAIRWISE_VARIANTS = (CRF_NO_HIDDEN, CRF_HIDDEN, CRF_NO_XY)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    clean_fraction: float | None = None
    learning_rate: float = 0.001
    optimizer: str = "adam"
    adam_eps: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    alpha: AlphaSchedule = field(default_factory=AlphaSchedule)
    variant: str = CRF_HIDDEN
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    n_hidden: int = 20
    net_kind: str = "linear"
    net_hidden_dim: int = 32
    grad_clip: float = 10.0
    negative_phase: str = "pcd"
    hidden_init_scale: float = 0.01
    seed: int = 0
    predict_chains: int = 50
    predict_sweeps: int = 100
    predict_burn_in: int = 50

    def __post_init__(self):
        if isinstance(self.alpha, dict):
            self.alpha = AlphaSchedule(**self.alpha)
        if isinstance(self.gibbs, dict):
            self.gibbs = GibbsConfig(**self.gibbs)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.clean_fraction is not None and not 0 <= self.clean_fraction <= 1:
            raise ValueError("clean_fraction must lie in [0, 1]")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.negative_phase not in ("pcd", "exact"):
            raise ValueError(f"unknown negative phase {self.negative_phase!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    @property
    def hidden_units(self):
        return self.n_hidden if self.variant in (CRF_HIDDEN, CRF_NO_XY) else 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


class Batch(NamedTuple):
    ids: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Yhat: np.ndarray
    clean: np.ndarray


class Adam:
    """Adam ascent on a dict of parameter arrays, updated in place."""

    def __init__(self, lr, eps=1.0, beta1=0.9, beta2=0.999):
        self.lr, self.eps, self.beta1, self.beta2 = lr, eps, beta1, beta2
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            params[k] += self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def to_arrays(self):
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array([self.t], dtype=np.int64)
        return out

    def load_arrays(self, arrays):
        self.m = {k[len("adam.m.") :]: v.copy() for k, v in arrays.items() if k.startswith("adam.m.")}
        self.v = {k[len("adam.v.") :]: v.copy() for k, v in arrays.items() if k.startswith("adam.v.")}
        self.t = int(arrays["adam.t"][0]) if "adam.t" in arrays else 0


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] += self.lr * g

    def to_arrays(self):
        return {}

    def load_arrays(self, arrays):
        pass


def make_optimizer(config):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    return Adam(config.learning_rate, config.adam_eps, config.adam_beta1, config.adam_beta2)


@dataclass
class TrainState:
    params: EnergyParams
    net: FeatureNet
    optimizer: object
    config: TrainConfig
    epoch: int = 0
    store: ChainStore | None = None
    metrics: list = field(default_factory=list)

    @property
    def mode(self):
        return self.params.mode

    @property
    def dims(self):
        return self.params.dims

    def parameters(self):
        """Trainable arrays keyed by name; updates through these views are in place."""
        out = {f"net.{k}": v for k, v in self.net.params.items()}
        variant = self.config.variant
        if variant in PAIRWISE_VARIANTS:
            out["crf.W"] = self.params.W
        if self.dims[2] > 0 and variant not in CE_VARIANTS:
            out["crf.c"] = self.params.c
            out["crf.Wp"] = self.params.Wp
        return out


def init_state(config, input_dim, n_noisy, n_clean, mode=MULTILABEL, n_train=0):
    """Fresh parameters: network per its init rule, CRF biases and ``W`` at zero.

    ``W'`` gets small random entries so hidden units do not stay exchangeable.
    """
    if config.variant == NOISY_ONLY_CE and mode == MULTICLASS and n_noisy != n_clean:
        raise ValueError("noisy_only_ce in multiclass mode needs identical noisy and clean class sets")
    rng = np.random.default_rng([config.seed, 0xA11CE])
    h = config.hidden_units
    params = EnergyParams(
        c=np.zeros(h),
        W=np.zeros((n_clean, n_noisy)),
        Wp=rng.normal(0.0, config.hidden_init_scale, (h, n_noisy)),
        mode=mode,
    )
    net = FeatureNet(
        input_dim,
        n_clean,
        n_noisy,
        kind=config.net_kind,
        hidden_dim=config.net_hidden_dim,
        emits_noisy_bias=config.variant != CRF_NO_XY,
        random_state=config.seed,
    )
    store = None
    if config.variant in PAIRWISE_VARIANTS and config.negative_phase == "pcd":
        store = ChainStore(n_train, params.dims, config.gibbs.chains_per_instance, mode=mode)
    return TrainState(params=params, net=net, optimizer=make_optimizer(config), config=config, store=store)


def positive_phase_noisy(params, bias, y, q):
    """Closed-form expectations under ``q(yhat, h | y, x)`` with ``y`` observed."""
    return SufficientStats.from_factorial(q.p_clean, y, q.p_hidden)


def positive_phase_clean(params, y, yhat, q_h):
    """Expectations under ``q(h | y)`` with both label vectors observed."""
    return SufficientStats.from_factorial(yhat, y, q_h)


def factorized_negative_phase(params, bias):
    """Exact model expectations when there are no pairwise or hidden terms."""
    p_clean = clean_probs(bias.a, params.mode)
    p_noisy = clean_probs(bias.b, params.mode)
    return SufficientStats.from_factorial(p_clean, p_noisy, np.zeros(p_clean.shape[:-1] + (0,)))


def exact_negative_phase(params, bias):
    from .exact import exact_marginals

    rows = [exact_marginals(params, BiasPair(a, b)) for a, b in zip(bias.a, bias.b)]
    return SufficientStats(*(np.stack([getattr(r, f) for r in rows]) for f in SufficientStats.__dataclass_fields__))


def _log_partition_factorized(bias, mode):
    if mode == MULTICLASS:
        return logsumexp(bias.a, axis=-1) + logsumexp(bias.b, axis=-1)
    return np.sum(np.logaddexp(0, bias.a), axis=-1) + np.sum(np.logaddexp(0, bias.b), axis=-1)


def expected_neg_energy(params, bias, stats):
    """``E[-E]`` given per-instance sufficient statistics (linear in the statistics)."""
    return (
        np.sum(bias.a * stats.clean, axis=-1)
        + np.sum(bias.b * stats.noisy, axis=-1)
        + stats.hidden @ params.c
        + np.einsum("bcn,cn->b", stats.clean_noisy, params.W)
        + np.einsum("bhn,hn->b", stats.hidden_noisy, params.Wp)
    )


def _rows(bias, idx):
    return BiasPair(bias.a[idx], bias.b[idx])


def _instance_weights(clean):
    m_c = int(clean.sum())
    m_n = len(clean) - m_c
    return np.where(clean, 1.0 / max(m_c, 1), 1.0 / max(m_n, 1))


def crf_gradient(state, batch, aux, alpha, rng):
    """Bound gradient for one minibatch, averaged separately over noisy and clean rows.

    Returns ``(grads, objective)``. The objective is the minibatch value of
    the regularized bound; for sampled models it omits ``-log Z``.
    """
    params, net, cfg = state.params, state.net, state.config
    mode = params.mode
    bias = net.forward(batch.X)
    clean = batch.clean
    noisy_idx, clean_idx = np.flatnonzero(~clean), np.flatnonzero(clean)
    b_size = len(batch.ids)
    n, c, h = params.dims

    pos_clean = np.zeros((b_size, c))
    pos_hidden = np.zeros((b_size, h))
    terms = np.zeros(b_size)
    if noisy_idx.size:
        y = batch.Y[noisy_idx]
        q = q_noisy(params, _rows(bias, noisy_idx), aux, y, alpha)
        pos_clean[noisy_idx] = q.p_clean
        pos_hidden[noisy_idx] = q.p_hidden
        terms[noisy_idx] = posterior_entropy(q)
        if aux is not None and alpha > 0:
            terms[noisy_idx] -= alpha * factorial_kl(q, aux_posterior(aux, y, params), blends_hidden(params, aux))
    if clean_idx.size:
        y = batch.Y[clean_idx]
        q_h = q_clean(params, aux, y, alpha)
        pos_clean[clean_idx] = batch.Yhat[clean_idx]
        pos_hidden[clean_idx] = q_h
        q_hidden = posterior_from_probs(np.zeros((len(clean_idx), 0)), q_h, MULTILABEL)
        terms[clean_idx] = posterior_entropy(q_hidden)
        if aux is not None and alpha > 0 and blends_hidden(params, aux):
            p_aux_h = posterior_from_probs(np.zeros((len(clean_idx), 0)), aux_posterior(aux, y, params).p_hidden, MULTILABEL)
            terms[clean_idx] -= alpha * factorial_kl(q_hidden, p_aux_h)
    pos = SufficientStats.from_factorial(pos_clean, batch.Y, pos_hidden)
    terms += expected_neg_energy(params, bias, pos)

    if cfg.variant == NO_PAIRWISE:
        neg = factorized_negative_phase(params, bias)
        terms -= _log_partition_factorized(bias, mode)
    elif cfg.negative_phase == "exact":
        neg = exact_negative_phase(params, bias)
        from .exact import log_partition

        terms -= np.array([log_partition(params, BiasPair(a, b)) for a, b in zip(bias.a, bias.b)])
    else:
        neg = negative_phase(params, bias, state.store, batch.ids, batch.Y, cfg.gibbs, rng)

    diff = pos - neg
    w = _instance_weights(clean)
    grads = {f"net.{k}": v for k, v in net.backward(batch.X, w[:, None] * diff.clean, w[:, None] * diff.noisy).items()}
    if cfg.variant in PAIRWISE_VARIANTS:
        grads["crf.W"] = np.einsum("b,bcn->cn", w, diff.clean_noisy)
    if h > 0:
        grads["crf.c"] = w @ diff.hidden
        grads["crf.Wp"] = np.einsum("b,bhn->hn", w, diff.hidden_noisy)
    return grads, float(w @ terms)


def ce_gradient(state, batch):
    """Plain cross-entropy (log-likelihood ascent) gradient for the baseline variants."""
    net, mode = state.net, state.params.mode
    bias = net.forward(batch.X)
    w = np.full(len(batch.ids), 1.0 / len(batch.ids))
    zeros_a, zeros_b = np.zeros_like(bias.a), np.zeros_like(bias.b)
    if state.config.variant == CLEAN_ONLY_CE:
        target, logits, head = batch.Yhat, bias.a, "a"
    elif mode == MULTICLASS:
        target, logits, head = batch.Y, bias.a, "a"
    else:
        target, logits, head = batch.Y, bias.b, "b"
    g = w[:, None] * (target - clean_probs(logits, mode))
    loglik = clean_log_probs(logits, mode)
    if mode == MULTICLASS:
        objective = float(w @ np.sum(target * loglik, axis=-1))
    else:
        objective = float(w @ np.sum(target * loglik + (1 - target) * clean_log_probs(-logits, mode), axis=-1))
    grad_a, grad_b = (g, zeros_b) if head == "a" else (zeros_a, g)
    grads = {f"net.{k}": v for k, v in net.backward(batch.X, grad_a, grad_b).items()}
    return grads, objective


def em_step(state, batch, alpha, aux=None, rng=None):
    """One E step + M step on a minibatch; updates ``state`` in place.

    Returns the minibatch objective. Raises :class:`NumericalError` when the
    gradient or the updated parameters are not finite.
    """
    if len(batch.ids) == 0:
        raise ValueError("empty minibatch")
    if rng is None:
        rng = np.random.default_rng()
    if state.config.variant in CE_VARIANTS:
        grads, objective = ce_gradient(state, batch)
    else:
        grads, objective = crf_gradient(state, batch, aux, alpha, rng)
    norm = global_norm(grads)
    if not np.isfinite(norm):
        bad = sorted(k for k, g in grads.items() if not np.all(np.isfinite(g)))
        raise NumericalError(f"non-finite gradient at epoch {state.epoch} in {bad}")
    if norm > state.config.grad_clip:
        grads = {k: g * (state.config.grad_clip / norm) for k, g in grads.items()}
    state.optimizer.step(state.parameters(), grads)
    bad = sorted(k for k, v in state.parameters().items() if not np.all(np.isfinite(v)))
    if bad:
        raise NumericalError(f"non-finite parameters after update at epoch {state.epoch}: {bad}")
    return objective


def epoch_batches(clean_mask, config, epoch):
    """Minibatch id lists for one epoch.

    Without an explicit ``clean_fraction`` all training rows are shuffled
    together, so batches mix the two sets in proportion to their sizes.
    """
    clean_mask = np.asarray(clean_mask, dtype=bool)
    rng = np.random.default_rng([config.seed, epoch, 0x5EED])
    bs = config.batch_size
    clean_ids = np.flatnonzero(clean_mask)
    noisy_ids = np.flatnonzero(~clean_mask)
    if config.variant == CLEAN_ONLY_CE:
        ids = rng.permutation(clean_ids)
        return [ids[i : i + bs] for i in range(0, len(ids), bs)]
    if config.clean_fraction is None or config.variant == NOISY_ONLY_CE:
        ids = rng.permutation(len(clean_mask))
        return [ids[i : i + bs] for i in range(0, len(ids), bs)]
    m_c = int(round(bs * config.clean_fraction)) if len(clean_ids) else 0
    m_n = bs - m_c if len(noisy_ids) else 0
    if m_n == 0:
        ids = rng.permutation(clean_ids)
        return [ids[i : i + bs] for i in range(0, len(ids), bs)]
    noisy = rng.permutation(noisy_ids)
    n_batches = -(-len(noisy) // m_n)
    clean_stream = np.concatenate([rng.permutation(clean_ids) for _ in range(-(-n_batches * m_c // max(len(clean_ids), 1)))]) if m_c else np.zeros(0, dtype=np.int64)
    out = []
    for i in range(n_batches):
        part = [noisy[i * m_n : (i + 1) * m_n]]
        if m_c:
            part.append(clean_stream[i * m_c : (i + 1) * m_c])
        out.append(np.concatenate(part).astype(np.int64))
    return out


def make_batch(ids, X, Y, Yhat, clean_mask):
    return Batch(ids, X[ids], Y[ids], Yhat[ids], clean_mask[ids])


def train(X, Y, Yhat, clean_mask, aux, config, state=None, callback=None, on_epoch_end=None):
    """Run regularized EM epochs until ``config.epochs`` is reached.

    Parameters
    ----------
    X : ndarray of shape (n, d)
    Y : ndarray of shape (n, N)
        Noisy labels of every training row.
    Yhat : ndarray of shape (n, C)
        Clean labels; only rows where ``clean_mask`` is true are read.
    clean_mask : ndarray of shape (n,)
        True for rows of the clean subset.
    aux : AuxRBM, AuxTransition or None
    state : TrainState, optional
        Resume from this state (e.g. a loaded checkpoint).
    callback : callable, optional
        ``callback(state) -> dict`` of extra metrics recorded each epoch.
    on_epoch_end : callable, optional
        ``on_epoch_end(state)`` after metrics are recorded (checkpointing).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    clean_mask = np.asarray(clean_mask, dtype=bool)
    Yhat = np.where(clean_mask[:, None], np.asarray(Yhat, dtype=np.float64), 0.0)
    if state is None:
        mode = aux.mode if aux is not None else (MULTICLASS if np.all(Y.sum(axis=1) == 1) else MULTILABEL)
        state = init_state(config, X.shape[1], Y.shape[1], Yhat.shape[1], mode, len(X))
    for epoch in range(state.epoch, config.epochs):
        alpha = config.alpha(epoch)
        objectives = []
        for bi, ids in enumerate(epoch_batches(clean_mask, config, epoch)):
            rng = np.random.default_rng([config.seed, epoch, bi])
            batch = make_batch(ids, X, Y, Yhat, clean_mask)
            objectives.append(em_step(state, batch, alpha, aux, rng))
        state.epoch = epoch + 1
        record = {"epoch": epoch, "alpha": alpha, "bound": float(np.mean(objectives)) if objectives else float("nan")}
        if callback is not None:
            record.update(callback(state) or {})
        state.metrics.append(record)
        logger.info("epoch %d alpha %.4g bound %.6g", epoch, alpha, record["bound"])
        if on_epoch_end is not None:
            on_epoch_end(state)
    return state


def train_analytic_variant(X, Y, aux, config, **kwargs):
    """Noisy-only training of the no-pairwise multiclass variant (no sampling)."""
    if config.variant != NO_PAIRWISE:
        raise ValueError(f"the analytic variant needs variant={NO_PAIRWISE!r}, got {config.variant!r}")
    Y = np.asarray(Y, dtype=np.float64)
    if not np.all(Y.sum(axis=1) == 1):
        raise ValueError("the analytic variant is multiclass: noisy labels must be one-hot")
    if aux is not None and aux.mode != MULTICLASS:
        raise ValueError("the analytic variant needs a multiclass aux model")
    n_clean = aux.n_clean_ if aux is not None else Y.shape[1]
    clean_mask = np.zeros(len(Y), dtype=bool)
    Yhat = np.zeros((len(Y), n_clean))
    return train(X, Y, Yhat, clean_mask, aux, config, **kwargs)


def predict_clean_proba(state, X, seed=None, chunk=256):
    """Marginal ``p(yhat | x)``: exact for factorized variants, Gibbs otherwise."""
    cfg = state.config
    bias = state.net.forward(np.asarray(X, dtype=np.float64))
    if cfg.variant == NOISY_ONLY_CE and state.mode == MULTILABEL:
        raise ValueError("noisy_only_ce in multilabel mode has no clean-label head; map noisy predictions instead")
    if cfg.variant not in PAIRWISE_VARIANTS:
        return clean_probs(bias.a, state.mode)
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 0xF00D])
    out = []
    for lo in range(0, len(bias.a), chunk):
        part = _rows(bias, slice(lo, lo + chunk))
        out.append(gibbs_marginal(state.params, part, cfg.predict_chains, cfg.predict_sweeps, cfg.predict_burn_in, rng))
    return np.concatenate(out) if out else np.zeros((0, state.dims[1]))


def gibbs_marginal(params, bias, n_chains, sweeps, burn_in, rng):
    """Rao-Blackwellized estimate of ``p(yhat | x)`` from fresh chains.

    Chains start from ``y`` drawn from the noisy-label biases alone, run
    ``burn_in`` sweeps, then average ``p(yhat | y, x)`` over ``sweeps`` more.
    """
    b_size = len(bias.a)
    bias3 = BiasPair(bias.a[:, None, :], bias.b[:, None, :])
    y = sample_units(np.broadcast_to(clean_probs(bias3.b, params.mode), (b_size, n_chains, params.dims[0])), rng, params.mode)
    state = (y, None, None)
    for _ in range(burn_in):
        state = gibbs_sweep(params, bias3, state, rng)
    total = np.zeros((b_size, params.dims[1]))
    for _ in range(max(sweeps, 1)):
        state = gibbs_sweep(params, bias3, state, rng)
        total += rao_blackwell_stats(params, bias3, state[0]).clean
    return total / max(sweeps, 1)


def posterior_clean_proba(state, X, Y, aux, alpha):
    """The variational posterior over clean labels for labeled training rows."""
    if state.config.variant in CE_VARIANTS:
        return predict_clean_proba(state, X)
    bias = state.net.forward(np.asarray(X, dtype=np.float64))
    return q_noisy(state.params, bias, aux, np.asarray(Y, dtype=np.float64), alpha).p_clean


def save_checkpoint(path, state):
    arrays = {
        "crf.c": state.params.c,
        "crf.W": state.params.W,
        "crf.Wp": state.params.Wp,
    }
    arrays.update({f"net.{k}": v for k, v in state.net.params.items()})
    arrays.update(state.optimizer.to_arrays())
    meta = {
        "epoch": state.epoch,
        "mode": state.mode,
        "config": state.config.to_dict(),
        "net": state.net.config(),
        "metrics": state.metrics,
    }
    if state.store is not None:
        arrays.update(state.store.to_arrays())
        meta["chain_store"] = state.store.meta()
    container.save(path, "checkpoint", arrays, meta)


def load_checkpoint(path):
    meta, arrays = container.load(path, kind="checkpoint")
    config = TrainConfig.from_dict(meta["config"])
    params = EnergyParams(arrays["crf.c"], arrays["crf.W"], arrays["crf.Wp"], meta["mode"])
    net_cfg = meta["net"]
    net = FeatureNet(
        net_cfg["input_dim"],
        net_cfg["n_clean"],
        net_cfg["n_noisy"],
        kind=net_cfg["kind"],
        hidden_dim=net_cfg["hidden_dim"],
        emits_noisy_bias=net_cfg["emits_noisy_bias"],
    )
    net.params = {k[len("net.") :]: v for k, v in arrays.items() if k.startswith("net.")}
    optimizer = make_optimizer(config)
    optimizer.load_arrays(arrays)
    store = ChainStore.from_arrays(meta["chain_store"], arrays) if "chain_store" in meta else None
    return TrainState(params, net, optimizer, config, meta["epoch"], store, list(meta["metrics"]))


def with_overrides(config, **changes):
    return replace(config, **{k: v for k, v in changes.items() if v is not None})
