"""Command-line workflow: synth, train-aux, train, eval, clean.

Every command reads one JSON run configuration (``--config``), validates it
against :data:`RUN_SCHEMA` and loads all inputs before touching the output
directory. Diagnostics go to stderr; machine-readable results go to files
and stdout.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import container
from .aux import AuxRBM, AuxTransition, NumericalError, class_prior, load_aux, save_aux, transition_from_labels
from .core import MULTICLASS, MULTILABEL
from .datasets import (
    DataError,
    NoiseSpec,
    SyntheticConfig,
    convert_cifar10,
    load_dataset,
    make_synthetic,
    save_dataset,
    transition_matrix,
)
from .evaluation import MetricReport, accuracy, mean_average_precision, per_class_average_precision, recovery_accuracy
from .gibbs import GibbsConfig
from .trainer import (
    CE_VARIANTS,
    NO_PAIRWISE,
    NOISY_ONLY_CE,
    VARIANTS,
    TrainConfig,
    load_checkpoint,
    posterior_clean_proba,
    predict_clean_proba,
    save_checkpoint,
    train,
    train_analytic_variant,
)
from .variational import AlphaSchedule

logger = logging.getLogger("noisycrf")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _obj(properties, required=()):
    return {"type": "object", "properties": properties, "required": list(required), "additionalProperties": False}


_NUM = {"type": "number"}
_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_STR = {"type": "string"}
_BOOL = {"type": "boolean"}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _NUM}}

_NOISE = _obj(
    {
        "kind": {"enum": ["none", "uniform", "pair_flip", "transition_matrix", "multilabel_tagger"]},
        "rate": {"type": "number", "minimum": 0, "maximum": 1},
        "T": _MATRIX,
        "tag_map": _MATRIX,
        "partners": {"type": "array", "items": _INT},
        "background": {"type": "number", "minimum": 0, "maximum": 1},
        "max_tags": _POS_INT,
    },
    ["kind"],
)

RUN_SCHEMA = _obj(
    {
        "seed": _INT,
        "out": _STR,
        "dataset": _STR,
        "aux_model": _STR,
        "checkpoint": _STR,
        "synth": _obj(
            {
                "mode": {"enum": [MULTICLASS, MULTILABEL]},
                "n_classes": {"type": "integer", "minimum": 2},
                "n_tags": _POS_INT,
                "input_dim": _POS_INT,
                "separation": _NUM,
                "noise_scale": _NUM,
                "n_train": _POS_INT,
                "n_val": {"type": "integer", "minimum": 0},
                "n_test": {"type": "integer", "minimum": 0},
                "clean_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "noise": _NOISE,
                "n_topics": _POS_INT,
                "topic_size": _POS_INT,
                "label_prob": {"type": "number", "minimum": 0, "maximum": 1},
                "topic_tag_prob": {"type": "number", "minimum": 0, "maximum": 1},
            }
        ),
        "cifar10": _obj(
            {
                "batch_dir": _STR,
                "noise": _NOISE,
                "clean_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "n_val": {"type": "integer", "minimum": 0},
                "limit": _POS_INT,
            },
            ["batch_dir", "noise"],
        ),
        "aux": _obj(
            {
                "kind": {"enum": ["rbm", "transition"]},
                "T": _MATRIX,
                "transition_source": {"enum": ["given", "noise_spec", "clean_set"]},
                "prior": {"enum": ["uniform", "clean_set"]},
                "rbm": _obj(
                    {
                        "n_hidden": {"type": "integer", "minimum": 0},
                        "n_chains": _POS_INT,
                        "n_sweeps": _POS_INT,
                        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                        "n_epochs": {"type": "integer", "minimum": 0},
                        "batch_size": _POS_INT,
                        "init_scale": _NUM,
                        "clip_norm": _NUM,
                    }
                ),
            }
        ),
        "train": _obj(
            {
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": _POS_INT,
                "clean_fraction": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "optimizer": {"enum": ["adam", "sgd"]},
                "adam_eps": {"type": "number", "exclusiveMinimum": 0},
                "adam_beta1": _NUM,
                "adam_beta2": _NUM,
                "alpha": _obj(
                    {
                        "start": {"type": "number", "minimum": 0},
                        "end": {"type": "number", "minimum": 0},
                        "anneal_epochs": _POS_INT,
                        "shape": {"enum": ["linear", "exponential"]},
                    }
                ),
                "variant": {"enum": list(VARIANTS)},
                "gibbs": _obj({"sweeps_per_update": _POS_INT, "chains_per_instance": _POS_INT}),
                "n_hidden": {"type": "integer", "minimum": 0},
                "net_kind": {"enum": ["linear", "mlp1"]},
                "net_hidden_dim": _POS_INT,
                "grad_clip": {"type": "number", "exclusiveMinimum": 0},
                "negative_phase": {"enum": ["pcd", "exact"]},
                "hidden_init_scale": {"type": "number", "minimum": 0},
                "predict_chains": _POS_INT,
                "predict_sweeps": _POS_INT,
                "predict_burn_in": {"type": "integer", "minimum": 0},
                "noisy_only": _BOOL,
                "resume": _BOOL,
                "eval_every": {"type": "integer", "minimum": 0},
            }
        ),
        "eval": _obj({"split": {"enum": ["val", "test"]}}),
        "clean": _obj({"top": {"type": "integer", "minimum": 0}}),
    }
)

_RUN_ONLY_TRAIN_KEYS = ("noisy_only", "resume", "eval_every")


class RunConfig:
    """Validated run configuration with command-line overrides applied."""

    def __init__(self, raw, args):
        try:
            jsonschema.validate(raw, RUN_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"at {path}: {exc.message}") from None
        self.raw = raw
        self.seed = args.seed if args.seed is not None else raw.get("seed", 0)
        out = args.out or raw.get("out")
        if not out:
            raise ConfigError("no output directory: set 'out' in the config or pass --out")
        self.out = Path(out)
        self.dataset_path = Path(raw.get("dataset", self.out / "dataset.ncrf"))
        self.aux_path = Path(raw.get("aux_model", self.out / "aux.ncrf"))
        self.checkpoint_path = Path(raw.get("checkpoint", self.out / "checkpoint.ncrf"))
        self.metrics_path = self.out / "metrics.csv"
        self.args = args

    def synthetic(self):
        section = dict(self.raw.get("synth", {}))
        try:
            return SyntheticConfig(**section, seed=self.seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synth section: {exc}") from None

    def train_config(self):
        section = dict(self.raw.get("train", {}))
        for k in _RUN_ONLY_TRAIN_KEYS:
            section.pop(k, None)
        alpha = dict(section.pop("alpha", {}))
        a = self.args
        if a.alpha_start is not None:
            alpha["start"] = a.alpha_start
        if a.alpha_end is not None:
            alpha["end"] = a.alpha_end
        if a.alpha_epochs is not None:
            alpha["anneal_epochs"] = a.alpha_epochs
        if a.variant is not None:
            section["variant"] = a.variant
        try:
            schedule = AlphaSchedule(**alpha)
            gibbs = GibbsConfig(**section.pop("gibbs", {}))
            return TrainConfig(**section, alpha=schedule, gibbs=gibbs, seed=self.seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train section: {exc}") from None

    def train_option(self, key, default):
        return self.raw.get("train", {}).get(key, default)


@contextmanager
def output_lock(out):
    """Exclusive lock file in the output directory for the lifetime of a command."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{out} is locked by another run (remove {lock} if that run is dead)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    return value


def _atomic_text(path, text):
    tmp = Path(f"{path}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _load_dataset(path):
    if not Path(path).exists():
        raise DataError(f"dataset {path} not found; run 'synth' first")
    return load_dataset(path)


def cmd_synth(cfg):
    if "cifar10" in cfg.raw:
        section = dict(cfg.raw["cifar10"])
        try:
            noise = NoiseSpec(**section.pop("noise"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid cifar10 noise: {exc}") from None
        ds = convert_cifar10(section.pop("batch_dir"), noise, seed=cfg.seed, **section)
    else:
        ds = make_synthetic(cfg.synthetic())
    with output_lock(cfg.out):
        save_dataset(cfg.dataset_path, ds)
    counts = ds.counts()
    logger.info("wrote %s", cfg.dataset_path)
    print(json.dumps({"dataset": str(cfg.dataset_path), "counts": counts, "mode": ds.mode}, sort_keys=True))
    return EXIT_OK


def _aux_kind(cfg, ds):
    section = cfg.raw.get("aux", {})
    kind = section.get("kind", "transition" if ds.mode == MULTICLASS else "rbm")
    if kind == "transition" and ds.mode != MULTICLASS:
        raise ConfigError("transition aux models need a multiclass dataset")
    return kind, section


def cmd_train_aux(cfg):
    ds = _load_dataset(cfg.dataset_path)
    kind, section = _aux_kind(cfg, ds)
    if kind == "rbm":
        X, Y, Yhat = ds.clean_set()
        params = dict(section.get("rbm", {}))
        aux = AuxRBM(mode=ds.mode, random_state=cfg.seed, **params).fit(Y, Yhat)
    else:
        source = section.get("transition_source", "given" if "T" in section else "clean_set")
        n = ds.n_clean
        if source == "given":
            if "T" not in section:
                raise ConfigError("transition_source 'given' needs aux.T")
            T = np.asarray(section["T"], dtype=np.float64)
        elif source == "noise_spec":
            noise = ds.meta.get("noise") or ds.meta.get("config", {}).get("noise")
            if noise is None:
                raise DataError("dataset does not record its noise spec")
            T = transition_matrix(NoiseSpec(**noise), n)
        else:
            _, Y, Yhat = ds.clean_set()
            T = transition_from_labels(Yhat.argmax(1), Y.argmax(1), n, ds.n_noisy, smoothing=1.0)
        if T.shape != (n, ds.n_noisy):
            raise ConfigError(f"T has shape {T.shape}, dataset needs ({n}, {ds.n_noisy})")
        prior = None
        if section.get("prior", "uniform") == "clean_set":
            prior = class_prior(ds.clean_set()[2], n)
        try:
            aux = AuxTransition(prior=prior).fit(T)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    with output_lock(cfg.out):
        save_aux(cfg.aux_path, aux)
    logger.info("wrote %s aux model to %s", kind, cfg.aux_path)
    print(json.dumps({"aux_model": str(cfg.aux_path), "kind": kind}, sort_keys=True))
    return EXIT_OK


def _needs_aux(config):
    return config.variant not in CE_VARIANTS and config.alpha.start > 0


def _load_aux_for(cfg, config, ds):
    if not _needs_aux(config) and not cfg.aux_path.exists():
        return None
    if not cfg.aux_path.exists():
        raise DataError(f"aux model {cfg.aux_path} not found; run 'train-aux' first")
    aux = load_aux(cfg.aux_path)
    if (aux.n_noisy_, aux.n_clean_) != (ds.n_noisy, ds.n_clean) or aux.mode != ds.mode:
        raise DataError("aux model dims or mode do not match the dataset")
    return aux


def _epoch_metrics(ds, aux, X_noisy, Y_noisy, hidden, eval_every):
    X_val = Y_val = None
    if len(ds.splits["val"]) and ds.clean_labels is not None:
        X_val, Y_val = ds.evaluation_set("val")

    def callback(state):
        cfg = state.config
        record = {"val": math.nan, "recovery": math.nan}
        if eval_every and state.epoch % eval_every == 0:
            unusable = cfg.variant == NOISY_ONLY_CE and state.mode == MULTILABEL
            if X_val is not None and not unusable:
                record["val"] = _score(predict_clean_proba(state, X_val), Y_val, state.mode)
            if hidden is not None and len(hidden) and not unusable:
                q = posterior_clean_proba(state, X_noisy, Y_noisy, aux, cfg.alpha(state.epoch - 1))
                record["recovery"] = _recovery(q, hidden, state.mode)
        return record

    return callback


def _score(proba, labels, mode):
    return accuracy(proba, labels) if mode == MULTICLASS else mean_average_precision(proba, labels)


def _recovery(q, hidden, mode):
    return recovery_accuracy(q, hidden) if mode == MULTICLASS else mean_average_precision(q, hidden)


def metrics_csv(metrics):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "alpha", "bound", "val", "recovery"])
    for m in metrics:
        writer.writerow([m["epoch"]] + [repr(float(m.get(k, math.nan))) for k in ("alpha", "bound", "val", "recovery")])
    return buf.getvalue()


def cmd_train(cfg):
    config = cfg.train_config()
    ds = _load_dataset(cfg.dataset_path)
    aux = _load_aux_for(cfg, config, ds)
    noisy_only = cfg.train_option("noisy_only", False) or len(ds.splits["clean_train"]) == 0
    analytic = config.variant == NO_PAIRWISE and ds.mode == MULTICLASS and noisy_only
    if noisy_only and not analytic and config.variant != NOISY_ONLY_CE:
        raise ConfigError("noisy-only training is available for the no_pairwise multiclass variant and noisy_only_ce")
    state = None
    if cfg.train_option("resume", False) and cfg.checkpoint_path.exists():
        state = load_checkpoint(cfg.checkpoint_path)
        if replace(state.config, epochs=config.epochs) != config:
            raise ConfigError("checkpoint was written with a different training configuration")
        state.config = config
        logger.info("resuming from epoch %d", state.epoch)
    X_noisy, Y_noisy = ds.noisy_set()
    hidden = ds.recovery_labels() if ds.clean_labels is not None else None
    callback = _epoch_metrics(ds, aux, X_noisy, Y_noisy, hidden, cfg.train_option("eval_every", 1))

    def on_epoch_end(st):
        save_checkpoint(cfg.checkpoint_path, st)
        _atomic_text(cfg.metrics_path, metrics_csv(st.metrics))

    with output_lock(cfg.out):
        if analytic:
            state = train_analytic_variant(X_noisy, Y_noisy, aux, config, state=state, callback=callback, on_epoch_end=on_epoch_end)
        else:
            X, Y, Yhat, clean_mask = ds.training_view()
            if noisy_only:
                X, Y, Yhat, clean_mask = X[~clean_mask], Y[~clean_mask], Yhat[~clean_mask], clean_mask[~clean_mask]
            if state is None:
                from .trainer import init_state

                state = init_state(config, ds.input_dim, ds.n_noisy, ds.n_clean, ds.mode, len(X))
            state = train(X, Y, Yhat, clean_mask, aux, config, state=state, callback=callback, on_epoch_end=on_epoch_end)
        if not state.metrics:
            on_epoch_end(state)
    print(json.dumps({"checkpoint": str(cfg.checkpoint_path), "epochs": state.epoch, "metrics": str(cfg.metrics_path)}, sort_keys=True))
    return EXIT_OK


def _load_trained(cfg, ds):
    if not cfg.checkpoint_path.exists():
        raise DataError(f"checkpoint {cfg.checkpoint_path} not found; run 'train' first")
    state = load_checkpoint(cfg.checkpoint_path)
    if state.dims[:2] != (ds.n_noisy, ds.n_clean) or state.net.input_dim != ds.input_dim:
        raise DataError("checkpoint dims do not match the dataset")
    aux = None
    if cfg.aux_path.exists():
        aux = load_aux(cfg.aux_path)
    elif _needs_aux(state.config):
        raise DataError(f"aux model {cfg.aux_path} not found")
    return state, aux


def cmd_eval(cfg):
    ds = _load_dataset(cfg.dataset_path)
    state, aux = _load_trained(cfg, ds)
    split = cfg.raw.get("eval", {}).get("split", "test")
    X, labels = ds.evaluation_set(split)
    report = MetricReport()
    unusable = state.config.variant == NOISY_ONLY_CE and ds.mode == MULTILABEL
    if not unusable:
        proba = predict_clean_proba(state, X)
        X_noisy, Y_noisy = ds.noisy_set()
        alpha = state.config.alpha(max(state.epoch - 1, 0))
        q = posterior_clean_proba(state, X_noisy, Y_noisy, aux, alpha)
        hidden = ds.recovery_labels()
        if ds.mode == MULTICLASS:
            report = MetricReport(
                prediction_accuracy=accuracy(proba, labels),
                recovery_accuracy=recovery_accuracy(q, hidden),
                per_class={str(k): accuracy(proba[labels[:, k] > 0], labels[labels[:, k] > 0]) for k in range(ds.n_clean)},
            )
        else:
            report = MetricReport(
                map=mean_average_precision(proba, labels),
                recovery_accuracy=mean_average_precision(q, hidden),
                per_class=per_class_average_precision(proba, labels),
            )
    result = {"split": split, "variant": state.config.variant, "epochs": state.epoch, **report.to_dict()}
    text = json.dumps(_json_safe(result), sort_keys=True, allow_nan=False)
    with output_lock(cfg.out):
        _atomic_text(cfg.out / "eval.json", text + "\n")
    print(text)
    return EXIT_OK


def save_cleaned(path, ids, posterior, labels, confidence, meta):
    arrays = {
        "ids": np.asarray(ids, dtype=np.int64),
        "posterior": np.asarray(posterior, dtype=np.float64),
        "labels": np.asarray(labels, dtype=bool),
        "confidence": np.asarray(confidence, dtype=np.float64),
    }
    container.save(path, "cleaned-labels", arrays, meta)


def load_cleaned(path):
    meta, arrays = container.load(path, kind="cleaned-labels")
    return meta, arrays


def cmd_clean(cfg):
    ds = _load_dataset(cfg.dataset_path)
    state, aux = _load_trained(cfg, ds)
    if state.config.variant == NOISY_ONLY_CE and ds.mode == MULTILABEL:
        raise ConfigError("noisy_only_ce has no clean-label posterior in multilabel mode")
    top = cfg.raw.get("clean", {}).get("top", 100)
    ids = ds.splits["noisy_train"]
    X, Y = ds.noisy_set()
    alpha = state.config.alpha(max(state.epoch - 1, 0))
    q = posterior_clean_proba(state, X, Y, aux, alpha)
    rows = []
    if ds.mode == MULTICLASS:
        labels = np.eye(ds.n_clean, dtype=bool)[q.argmax(axis=1)]
        confidence = q.max(axis=1)
        if ds.n_noisy == ds.n_clean:
            noisy_class = Y.argmax(axis=1)
            proposed = q.argmax(axis=1)
            changed = np.flatnonzero(proposed != noisy_class)
            order = changed[np.lexsort((ids[changed], -confidence[changed]))]
            rows = [(int(ids[i]), int(noisy_class[i]), int(proposed[i]), float(confidence[i])) for i in order]
    else:
        labels = q >= 0.5
        confidence = np.where(labels, q, 1.0 - q).min(axis=1)
    meta = {"mode": ds.mode, "alpha": alpha, "n_rows": int(len(ids)), "n_changes": len(rows), "variant": state.config.variant}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "noisy_label", "proposed_label", "confidence"])
    writer.writerows(rows[:top] if top else rows)
    with output_lock(cfg.out):
        save_cleaned(cfg.out / "cleaned.ncrf", ids, q, labels, confidence, meta)
        _atomic_text(cfg.out / "label_changes.csv", buf.getvalue())
    print(json.dumps({"cleaned": str(cfg.out / "cleaned.ncrf"), "n_changes": len(rows)}, sort_keys=True))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train-aux": cmd_train_aux, "train": cmd_train, "eval": cmd_eval, "clean": cmd_clean}


def build_parser():
    parser = argparse.ArgumentParser(prog="noisycrf", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--variant", choices=VARIANTS, help="override train.variant")
    parser.add_argument("--alpha-start", type=float)
    parser.add_argument("--alpha-end", type=float)
    parser.add_argument("--alpha-epochs", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            raw = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return COMMANDS[args.command](RunConfig(raw, args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, container.ContainerError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
