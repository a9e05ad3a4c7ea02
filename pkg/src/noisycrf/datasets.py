"""Labeled datasets, synthetic generators and label-noise injection.

A :class:`LabeledDataset` keeps every row's features and noisy labels, the
clean labels where they exist, and a partition of row ids into four splits:
``noisy_train`` (D_N), ``clean_train`` (D_C), ``val`` and ``test``. Clean
labels of D_N rows are kept only for measuring recovery accuracy and are
reachable solely through :meth:`LabeledDataset.recovery_labels`; the view
handed to the trainer (:meth:`LabeledDataset.training_view`) masks them.
"""

from __future__ import annotations

import logging
import pickle
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .core import MULTICLASS, MULTILABEL, MODES, one_hot

logger = logging.getLogger(__name__)

SPLITS = ("noisy_train", "clean_train", "val", "test")
NOISE_KINDS = ("none", "uniform", "pair_flip", "transition_matrix", "multilabel_tagger")
CIFAR10_CLASSES = ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")
# truck -> automobile, bird -> airplane, deer -> horse, cat <-> dog; other classes keep their label
CIFAR10_PAIR_PARTNERS = (0, 1, 0, 5, 7, 3, 6, 7, 8, 1)


class DataError(ValueError):
    """Dataset contents violate an invariant (dims, splits, labels)."""


def default_partners(n_classes):
    """Pair-flip partner of each class: the CIFAR-10 convention for 10 classes, else ``i -> i+1``."""
    if n_classes == 10:
        return list(CIFAR10_PAIR_PARTNERS)
    return [(i + 1) % n_classes for i in range(n_classes)]


@dataclass
class NoiseSpec:
    """How noisy labels are generated from clean ones.

    ``rate`` is the flip probability for ``uniform`` and ``pair_flip``. For
    ``multilabel_tagger`` it is the probability that a present clean label
    emits no tag at all; otherwise it emits 1 to 3 distinct tags drawn from
    its row of ``tag_map``. Independent ``background`` tags are added on top.
    """

    kind: str = "none"
    rate: float = 0.0
    T: list | None = None
    tag_map: list | None = None
    partners: list | None = None
    background: float = 0.05
    max_tags: int = 3

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; choose from {NOISE_KINDS}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"noise rate must lie in [0, 1], got {self.rate}")
        if not 0.0 <= self.background <= 1.0:
            raise ValueError("background tag probability must lie in [0, 1]")
        if self.kind == "transition_matrix":
            if self.T is None:
                raise ValueError("transition_matrix noise needs T")
            T = np.asarray(self.T, dtype=np.float64)
            if T.ndim != 2 or T.shape[0] != T.shape[1] or np.any(T < 0) or not np.allclose(T.sum(axis=1), 1.0):
                raise ValueError("T must be a square row-stochastic matrix")
        if self.tag_map is not None:
            M = np.asarray(self.tag_map, dtype=np.float64)
            if M.ndim != 2 or np.any(M < 0) or not np.allclose(M.sum(axis=1), 1.0):
                raise ValueError("tag_map must be a row-stochastic clean-to-tag matrix")
        if self.max_tags < 1:
            raise ValueError("max_tags must be >= 1")

    def to_dict(self):
        out = asdict(self)
        for k in ("T", "tag_map"):
            if out[k] is not None:
                out[k] = np.asarray(out[k], dtype=np.float64).tolist()
        return out


def transition_matrix(spec, n_classes):
    """Clean-to-noisy transition matrix implied by a multiclass noise spec."""
    I = np.eye(n_classes)
    if spec.kind == "none" or spec.rate == 0 and spec.kind in ("uniform", "pair_flip"):
        return I
    if spec.kind == "uniform":
        if n_classes < 2:
            return I
        return (1 - spec.rate) * I + spec.rate * (1 - I) / (n_classes - 1)
    if spec.kind == "pair_flip":
        partners = spec.partners if spec.partners is not None else default_partners(n_classes)
        _check_partners(partners, n_classes)
        T = (1 - spec.rate) * I
        T[np.arange(n_classes), partners] += spec.rate
        return T
    if spec.kind == "transition_matrix":
        return np.asarray(spec.T, dtype=np.float64)
    raise ValueError(f"{spec.kind} noise has no class transition matrix")


def _check_partners(partners, n_classes):
    if len(partners) != n_classes or any(not 0 <= int(p) < n_classes for p in partners):
        raise ValueError(f"pair-flip partners must list one class index in [0, {n_classes}) per class")


def default_tag_map(n_clean, n_tags):
    """Each clean label owns a pool of ``n_tags // n_clean`` synonym tags, used uniformly."""
    if n_tags < n_clean:
        raise ValueError("multilabel tagging needs at least one tag per clean label")
    pool = n_tags // n_clean
    M = np.zeros((n_clean, n_tags))
    for k in range(n_clean):
        M[k, k * pool : (k + 1) * pool] = 1.0 / pool
    return M


def inject_noise(clean_labels, spec, seed=0, n_noisy=None, n_classes=None):
    """Corrupt clean labels according to ``spec``.

    Parameters
    ----------
    clean_labels : ndarray
        Class indices of shape ``(n,)`` for multiclass kinds, or a binary
        ``(n, C)`` matrix for ``multilabel_tagger``.
    spec : NoiseSpec
    seed : int
    n_noisy : int, optional
        Tag vocabulary size for ``multilabel_tagger`` (defaults to
        ``tag_map`` width, else ``4 C``).
    n_classes : int, optional
        Class count for multiclass kinds; inferred from ``T``, the partner
        list or the largest label when omitted.

    Returns
    -------
    ndarray
        Noisy class indices ``(n,)`` or a binary ``(n, N)`` tag matrix.
    """
    rng = np.random.default_rng([seed, 0x70153])
    labels = np.asarray(clean_labels)
    if spec.kind == "multilabel_tagger":
        if labels.ndim != 2:
            raise ValueError("multilabel_tagger noise needs a binary (n, C) clean label matrix")
        return _tag(labels, spec, rng, n_noisy)
    if labels.ndim != 1:
        raise ValueError(f"{spec.kind} noise needs multiclass labels given as a vector of class indices")
    labels = labels.astype(np.int64)
    if spec.kind == "none":
        return labels.copy()
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
        if spec.kind == "transition_matrix":
            n_classes = len(spec.T)
        elif spec.partners is not None:
            n_classes = len(spec.partners)
        n_classes = max(n_classes, 2)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("class index out of range for the noise spec")
    if spec.kind == "pair_flip":
        partners = np.asarray(spec.partners if spec.partners is not None else default_partners(n_classes))
        _check_partners(partners, n_classes)
        flip = rng.random(labels.shape) < spec.rate
        return np.where(flip, partners[labels], labels)
    if spec.kind == "uniform":
        flip = rng.random(labels.shape) < spec.rate
        shift = rng.integers(1, n_classes, size=labels.shape)
        return np.where(flip, (labels + shift) % n_classes, labels)
    T = transition_matrix(spec, n_classes)
    cdf = np.cumsum(T[labels], axis=1)
    u = rng.random((len(labels), 1))
    return np.minimum((cdf < u).sum(axis=1), n_classes - 1)


def _tag(clean, spec, rng, n_noisy):
    clean = np.asarray(clean) > 0.5
    n, c = clean.shape
    M = np.asarray(spec.tag_map, dtype=np.float64) if spec.tag_map is not None else default_tag_map(c, n_noisy or 4 * c)
    if M.shape[0] != c:
        raise ValueError(f"tag_map has {M.shape[0]} rows but labels have {c} classes")
    n_tags = M.shape[1]
    tags = rng.random((n, n_tags)) < spec.background
    for k in range(c):
        rows = np.flatnonzero(clean[:, k])
        support = np.flatnonzero(M[k] > 0)
        keep = rows[rng.random(len(rows)) >= spec.rate]
        counts = rng.integers(1, min(spec.max_tags, len(support)) + 1, size=len(keep))
        for i, m in zip(keep, counts):
            tags[i, rng.choice(support, size=m, replace=False, p=M[k, support])] = True
    return tags.astype(np.uint8)


@dataclass
class LabeledDataset:
    features: np.ndarray
    noisy_labels: np.ndarray
    clean_labels: np.ndarray | None
    splits: dict
    mode: str = MULTICLASS
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.noisy_labels = np.asarray(self.noisy_labels, dtype=np.uint8)
        if self.clean_labels is not None:
            self.clean_labels = np.asarray(self.clean_labels, dtype=np.uint8)
        self.splits = {k: np.asarray(self.splits.get(k, []), dtype=np.int64) for k in SPLITS}
        self.validate()

    @property
    def n_instances(self):
        return len(self.features)

    @property
    def input_dim(self):
        return self.features.shape[1]

    @property
    def n_noisy(self):
        return self.noisy_labels.shape[1]

    @property
    def n_clean(self):
        return self.clean_labels.shape[1] if self.clean_labels is not None else int(self.meta.get("n_clean", self.n_noisy))

    def validate(self):
        if self.mode not in MODES:
            raise DataError(f"unknown label mode {self.mode!r}")
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n = self.n_instances
        if self.noisy_labels.ndim != 2 or len(self.noisy_labels) != n:
            raise DataError("noisy label rows do not match feature rows")
        if self.clean_labels is not None and (self.clean_labels.ndim != 2 or len(self.clean_labels) != n):
            raise DataError("clean label rows do not match feature rows")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain NaN or infinite values")
        for name, labels in (("noisy", self.noisy_labels), ("clean", self.clean_labels)):
            if labels is not None and self.mode == MULTICLASS and not np.all(labels.sum(axis=1) == 1):
                raise DataError(f"{name} labels must be one-hot in multiclass mode")
        ids = np.concatenate([self.splits[k] for k in SPLITS])
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise DataError("split ids out of range")
        if len(np.unique(ids)) != len(ids):
            raise DataError("splits overlap")
        if len(ids) != n:
            raise DataError(f"splits cover {len(ids)} of {n} rows")
        if self.clean_labels is None and len(self.splits["clean_train"]):
            raise DataError("clean_train split present without clean labels")

    def counts(self):
        return {k: int(len(v)) for k, v in self.splits.items()}

    def training_view(self):
        """Training rows (D_N then D_C) with clean labels of D_N masked out.

        Returns
        -------
        X, Y, Yhat, clean_mask
            ``Yhat`` rows are zero wherever ``clean_mask`` is false.
        """
        ids = np.concatenate([self.splits["noisy_train"], self.splits["clean_train"]])
        clean_mask = np.zeros(len(ids), dtype=bool)
        clean_mask[len(self.splits["noisy_train"]) :] = True
        Yhat = np.zeros((len(ids), self.n_clean))
        if self.clean_labels is not None:
            Yhat[clean_mask] = self.clean_labels[self.splits["clean_train"]]
        return (
            self.features[ids].astype(np.float64),
            self.noisy_labels[ids].astype(np.float64),
            Yhat,
            clean_mask,
        )

    def clean_set(self):
        """``(X, Y, Yhat)`` of D_C."""
        ids = self.splits["clean_train"]
        if self.clean_labels is None or len(ids) == 0:
            raise DataError("dataset has no clean training subset")
        return self.features[ids].astype(np.float64), self.noisy_labels[ids].astype(np.float64), self.clean_labels[ids].astype(np.float64)

    def noisy_set(self):
        ids = self.splits["noisy_train"]
        return self.features[ids].astype(np.float64), self.noisy_labels[ids].astype(np.float64)

    def recovery_labels(self):
        """Hidden clean labels of D_N, for recovery evaluation only."""
        if self.clean_labels is None:
            raise DataError("dataset carries no clean labels for the noisy training set")
        return self.clean_labels[self.splits["noisy_train"]].astype(np.float64)

    def evaluation_set(self, split="test"):
        if split not in ("val", "test"):
            raise ValueError("evaluation split must be 'val' or 'test'")
        ids = self.splits[split]
        if self.clean_labels is None:
            raise DataError("dataset carries no clean labels for evaluation")
        return self.features[ids].astype(np.float64), self.clean_labels[ids].astype(np.float64)


def save_dataset(path, dataset):
    arrays = {
        "features": dataset.features.astype(np.float32),
        "noisy_labels": dataset.noisy_labels.astype(bool),
    }
    if dataset.clean_labels is not None:
        arrays["clean_labels"] = dataset.clean_labels.astype(bool)
    for k in SPLITS:
        arrays[f"split.{k}"] = dataset.splits[k].astype(np.int64)
    meta = {
        "mode": dataset.mode,
        "n_instances": dataset.n_instances,
        "input_dim": dataset.input_dim,
        "n_noisy": dataset.n_noisy,
        "n_clean": dataset.n_clean,
        "counts": dataset.counts(),
        "provenance": dataset.meta,
    }
    container.save(path, "dataset", arrays, meta)


def load_dataset(path):
    """Read and validate a dataset file; raises :class:`DataError` or ``ContainerError``."""
    meta, arrays = container.load(path, kind="dataset")
    try:
        features = arrays["features"]
        noisy = arrays["noisy_labels"]
        splits = {k: arrays[f"split.{k}"] for k in SPLITS}
    except KeyError as exc:
        raise DataError(f"dataset file lacks array {exc}") from None
    clean = arrays.get("clean_labels")
    if features.shape != (meta["n_instances"], meta["input_dim"]) or noisy.shape[1] != meta["n_noisy"]:
        raise DataError("dataset header dims do not match stored arrays")
    if clean is not None and clean.shape[1] != meta["n_clean"]:
        raise DataError("dataset header clean-label width does not match stored arrays")
    provenance = dict(meta.get("provenance", {}))
    provenance.setdefault("n_clean", meta["n_clean"])
    ds = LabeledDataset(features, noisy, clean, splits, meta["mode"], provenance)
    if ds.counts() != meta["counts"]:
        raise DataError("dataset header split counts do not match stored splits")
    return ds


@dataclass
class SyntheticConfig:
    """Desk-scale stand-in for an image benchmark.

    Multiclass data are Gaussian clusters with class means of norm about
    ``separation``. Multilabel data draw clean label sets from a topic
    mixture so labels co-occur, place features at the sum of the present
    labels' means plus unit noise, and generate noisy tags with a
    ``multilabel_tagger`` spec. With ``topic_tag_prob > 0`` every absent
    member of an active topic also emits one of its tags with that
    probability, so false tags follow scene context rather than chance.
    """

    mode: str = MULTICLASS
    n_classes: int = 10
    n_tags: int | None = None
    input_dim: int = 20
    separation: float = 3.0
    noise_scale: float = 1.0
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 1000
    clean_fraction: float = 0.2
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    n_topics: int = 6
    topic_size: int = 5
    label_prob: float = 0.6
    topic_tag_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = NoiseSpec(**self.noise)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.input_dim < 1 or min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train < 1:
            raise ValueError("input_dim and n_train must be positive, split sizes non-negative")
        if not 0.0 <= self.clean_fraction <= 1.0:
            raise ValueError("clean_fraction must lie in [0, 1]")
        if not 0.0 <= self.topic_tag_prob <= 1.0:
            raise ValueError("topic_tag_prob must lie in [0, 1]")
        if self.mode == MULTILABEL and self.noise.kind not in ("multilabel_tagger", "none"):
            raise ValueError(f"{self.noise.kind} noise is multiclass only")
        if self.mode == MULTICLASS and self.noise.kind == "multilabel_tagger":
            raise ValueError("multilabel_tagger noise needs multilabel mode")

    def to_dict(self):
        out = asdict(self)
        out["noise"] = self.noise.to_dict()
        return out


def make_synthetic(config):
    """Generate a :class:`LabeledDataset` deterministically from ``config.seed``."""
    rng = np.random.default_rng([config.seed, 0xDA7A])
    n = config.n_train + config.n_val + config.n_test
    C, d = config.n_classes, config.input_dim
    means = rng.normal(size=(C, d))
    means *= config.separation / np.linalg.norm(means, axis=1, keepdims=True)
    if config.mode == MULTICLASS:
        classes = rng.integers(0, C, size=n)
        X = means[classes] + config.noise_scale * rng.normal(size=(n, d))
        noisy = inject_noise(classes, config.noise, seed=config.seed, n_classes=C)
        clean = one_hot(classes, C)
        noisy_onehot = one_hot(noisy, C)
    else:
        clean, context = _topic_labels(rng, n, C, config)
        X = clean @ means + config.noise_scale * rng.normal(size=(n, d))
        n_tags = config.n_tags or 4 * C
        noise = config.noise if config.noise.kind == "multilabel_tagger" else NoiseSpec("multilabel_tagger", 0.0, background=0.0)
        noisy_onehot = inject_noise(clean, noise, seed=config.seed, n_noisy=n_tags)
        if config.topic_tag_prob > 0:
            false_mentions = (context > clean) & (rng.random(clean.shape) < config.topic_tag_prob)
            noisy_onehot = noisy_onehot | inject_noise(false_mentions, NoiseSpec("multilabel_tagger", 0.0, background=0.0, max_tags=1), seed=config.seed + 1, n_noisy=n_tags)
    perm = rng.permutation(n)
    train, val, test = np.split(perm, [config.n_train, config.n_train + config.n_val])
    m_c = int(round(config.clean_fraction * config.n_train))
    splits = {
        "clean_train": np.sort(train[:m_c]),
        "noisy_train": np.sort(train[m_c:]),
        "val": np.sort(val),
        "test": np.sort(test),
    }
    meta = {"generator": "synthetic", "config": config.to_dict(), "n_clean": C}
    return LabeledDataset(X, noisy_onehot, clean, splits, config.mode, meta)


def _topic_labels(rng, n, C, config):
    """Correlated binary label sets: each row mixes one or two topics of co-occurring labels.

    Returns the labels and the context mask of every label belonging to an
    active topic.
    """
    topics = [rng.choice(C, size=min(config.topic_size, C), replace=False) for _ in range(config.n_topics)]
    labels = np.zeros((n, C), dtype=np.float64)
    context = np.zeros((n, C), dtype=bool)
    n_active = rng.integers(1, 3, size=n)
    for i in range(n):
        for t in rng.choice(config.n_topics, size=n_active[i], replace=False):
            members = topics[t]
            context[i, members] = True
            labels[i, members[rng.random(len(members)) < config.label_prob]] = 1.0
        if not labels[i].any():
            pick = rng.choice(topics[rng.integers(config.n_topics)])
            labels[i, pick] = 1.0
            context[i, pick] = True
    return labels, context


def empirical_transition(dataset, split="noisy_train"):
    """Realized clean-to-noisy transition matrix on a split (multiclass, ground truth)."""
    if dataset.mode != MULTICLASS or dataset.clean_labels is None:
        raise DataError("an empirical transition matrix needs multiclass data with clean labels")
    ids = dataset.splits[split]
    counts = dataset.clean_labels[ids].T.astype(np.float64) @ dataset.noisy_labels[ids].astype(np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, rows, out=np.eye(*counts.shape), where=rows > 0)


def _unpickle(path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="bytes")


def convert_cifar10(batch_dir, noise, clean_fraction=0.2, n_val=5000, seed=0, limit=None):
    """Build a dataset from the python-pickle CIFAR-10 batches.

    Reads ``data_batch_1..5`` and ``test_batch`` from ``batch_dir``; features
    are flattened pixels scaled to ``[0, 1]``. The last ``n_val`` training
    rows (after a seeded shuffle) form the validation split.
    """
    batch_dir = Path(batch_dir)
    files = sorted(batch_dir.glob("data_batch_*"))
    if not files or not (batch_dir / "test_batch").exists():
        raise DataError(f"no CIFAR-10 python batches in {batch_dir}")
    parts = [_unpickle(f) for f in files]
    X_tr = np.concatenate([np.asarray(p[b"data"], dtype=np.float32) for p in parts]) / 255.0
    y_tr = np.concatenate([np.asarray(p[b"labels"], dtype=np.int64) for p in parts])
    test = _unpickle(batch_dir / "test_batch")
    X_te = np.asarray(test[b"data"], dtype=np.float32) / 255.0
    y_te = np.asarray(test[b"labels"], dtype=np.int64)
    if limit is not None:
        X_tr, y_tr = X_tr[:limit], y_tr[:limit]
    rng = np.random.default_rng([seed, 0xC1FA])
    n_tr = len(X_tr)
    n_val = min(n_val, n_tr // 2)
    perm = rng.permutation(n_tr)
    train, val = perm[: n_tr - n_val], perm[n_tr - n_val :]
    m_c = int(round(clean_fraction * len(train)))
    noisy_tr = inject_noise(y_tr, noise, seed=seed, n_classes=10)
    X = np.concatenate([X_tr, X_te])
    clean = one_hot(np.concatenate([y_tr, y_te]), 10)
    noisy = one_hot(np.concatenate([noisy_tr, y_te]), 10)
    splits = {
        "clean_train": np.sort(train[:m_c]),
        "noisy_train": np.sort(train[m_c:]),
        "val": np.sort(val),
        "test": np.arange(n_tr, n_tr + len(X_te)),
    }
    meta = {"generator": "cifar10", "noise": noise.to_dict(), "classes": list(CIFAR10_CLASSES), "n_clean": 10}
    return LabeledDataset(X, noisy, clean, splits, MULTICLASS, meta)
