import csv
import json
import time

import numpy as np
import pytest

from noisycrf.aux import load_aux
from noisycrf.cli import RUN_SCHEMA, load_cleaned, main
from noisycrf.datasets import load_dataset
from noisycrf.trainer import VARIANTS, load_checkpoint

MULTICLASS_CONFIG = {
    "seed": 0,
    "synth": {
        "mode": "multiclass",
        "n_classes": 4,
        "input_dim": 10,
        "separation": 3,
        "n_train": 3000,
        "n_val": 200,
        "n_test": 200,
        "noise": {"kind": "pair_flip", "rate": 0.3},
    },
    "aux": {"kind": "transition", "transition_source": "clean_set"},
    "train": {
        "epochs": 10,
        "variant": "no_pairwise",
        "learning_rate": 0.01,
        "adam_eps": 1e-8,
        "alpha": {"start": 8, "end": 1, "anneal_epochs": 5},
        "eval_every": 5,
    },
}

TINY = {
    "seed": 1,
    "synth": {"mode": "multilabel", "n_classes": 3, "n_tags": 6, "input_dim": 4, "n_train": 60, "n_val": 10, "n_test": 10, "n_topics": 2, "topic_size": 2},
    "aux": {"kind": "rbm", "rbm": {"n_hidden": 2, "n_epochs": 2}},
    "train": {
        "epochs": 2,
        "batch_size": 16,
        "n_hidden": 2,
        "gibbs": {"sweeps_per_update": 2, "chains_per_instance": 2},
        "predict_chains": 3,
        "predict_sweeps": 3,
        "predict_burn_in": 1,
    },
}


def write_config(path, config):
    path.write_text(json.dumps(config))
    return str(path)


def run(cmd, config_path, out, *extra):
    return main([cmd, "--config", config_path, "--out", str(out), *extra])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    cfg = write_config(root / "config.json", MULTICLASS_CONFIG)
    out = root / "run"
    for cmd in ("synth", "train-aux", "train", "eval", "clean"):
        assert run(cmd, cfg, out) == 0, cmd
    return cfg, out


def test_pipeline_writes_all_artifacts(pipeline, capsys):
    _, out = pipeline
    for name in ("dataset.ncrf", "aux.ncrf", "checkpoint.ncrf", "metrics.csv", "eval.json", "cleaned.ncrf", "label_changes.csv"):
        assert (out / name).exists(), name
    assert not (out / ".lock").exists()
    ds = load_dataset(out / "dataset.ncrf")
    assert ds.counts()["clean_train"] == 600
    report = json.loads((out / "eval.json").read_text())
    assert report["prediction_accuracy"] > 80 and report["recovery_accuracy"] > 80
    assert report["map"] is None


def test_metrics_log_columns(pipeline):
    _, out = pipeline
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert [int(r["epoch"]) for r in rows] == list(range(10))
    assert set(rows[0]) == {"epoch", "alpha", "bound", "val", "recovery"}
    assert float(rows[0]["alpha"]) == 8.0 and float(rows[-1]["alpha"]) == 1.0
    assert rows[0]["val"] == "nan" and float(rows[4]["val"]) > 0


def test_confident_label_changes_are_true_corrections(pipeline):
    _, out = pipeline
    ds = load_dataset(out / "dataset.ncrf")
    rows = list(csv.DictReader(open(out / "label_changes.csv")))
    assert len(rows) == 100
    confidence = [float(r["confidence"]) for r in rows]
    assert confidence == sorted(confidence, reverse=True)
    truth = ds.clean_labels.argmax(axis=1)
    correct = sum(truth[int(r["id"])] == int(r["proposed_label"]) for r in rows)
    assert correct >= 90


def test_cleaned_file_round_trips(pipeline):
    _, out = pipeline
    meta, arrays = load_cleaned(out / "cleaned.ncrf")
    ds = load_dataset(out / "dataset.ncrf")
    np.testing.assert_array_equal(arrays["ids"], ds.splits["noisy_train"])
    np.testing.assert_allclose(arrays["posterior"].sum(axis=1), 1.0)
    assert np.all(arrays["labels"].sum(axis=1) == 1)
    assert meta["n_changes"] >= 100


def test_synth_is_byte_identical_and_seed_overridable(tmp_path):
    cfg = write_config(tmp_path / "c.json", TINY)
    for out in ("a", "b"):
        assert run("synth", cfg, tmp_path / out) == 0
    assert (tmp_path / "a/dataset.ncrf").read_bytes() == (tmp_path / "b/dataset.ncrf").read_bytes()
    assert run("synth", cfg, tmp_path / "c", "--seed", "9") == 0
    assert (tmp_path / "a/dataset.ncrf").read_bytes() != (tmp_path / "c/dataset.ncrf").read_bytes()


def test_training_metrics_are_deterministic_and_resumable(tmp_path):
    cfg = write_config(tmp_path / "c.json", TINY)
    for out in ("a", "b"):
        for cmd in ("synth", "train-aux", "train"):
            assert run(cmd, cfg, tmp_path / out) == 0
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()
    short = dict(TINY, train=dict(TINY["train"], epochs=1, resume=True))
    resumed = dict(TINY, train=dict(TINY["train"], resume=True))
    for cmd in ("synth", "train-aux"):
        run(cmd, cfg, tmp_path / "r")
    assert run("train", write_config(tmp_path / "s.json", short), tmp_path / "r") == 0
    assert run("train", write_config(tmp_path / "f.json", resumed), tmp_path / "r") == 0
    assert (tmp_path / "r/metrics.csv").read_bytes() == (tmp_path / "a/metrics.csv").read_bytes()


def test_overrides_reach_the_checkpoint(tmp_path):
    cfg = write_config(tmp_path / "c.json", TINY)
    run("synth", cfg, tmp_path)
    run("train-aux", cfg, tmp_path)
    args = ("--variant", "crf_no_xy", "--alpha-start", "6", "--alpha-end", "2", "--alpha-epochs", "3")
    assert run("train", cfg, tmp_path, *args) == 0
    state = load_checkpoint(tmp_path / "checkpoint.ncrf")
    assert state.config.variant == "crf_no_xy"
    assert (state.config.alpha.start, state.config.alpha.end, state.config.alpha.anneal_epochs) == (6, 2, 3)


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_variant_runs_from_config(tmp_path, variant):
    cfg = write_config(tmp_path / "c.json", dict(TINY, train=dict(TINY["train"], variant=variant)))
    started = time.perf_counter()
    for cmd in ("synth", "train-aux", "train", "eval"):
        code = run(cmd, cfg, tmp_path)
        assert code == 0, cmd
    assert time.perf_counter() - started < 60
    report = json.loads((tmp_path / "eval.json").read_text())
    if variant == "noisy_only_ce":
        assert report["map"] is None
    else:
        assert 0 <= report["map"] <= 100


def test_analytic_variant_runs_without_clean_subset(tmp_path):
    config = json.loads(json.dumps(MULTICLASS_CONFIG))
    config["synth"].update(n_train=400, clean_fraction=0.0)
    config["aux"] = {"kind": "transition", "transition_source": "noise_spec"}
    config["train"].update(epochs=2, eval_every=1)
    cfg = write_config(tmp_path / "c.json", config)
    for cmd in ("synth", "train-aux", "train"):
        assert run(cmd, cfg, tmp_path) == 0, cmd
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert len(rows) == 2 and float(rows[-1]["recovery"]) > 0


def test_transition_aux_matches_bayes_inversion(tmp_path):
    config = json.loads(json.dumps(MULTICLASS_CONFIG))
    T = [[0.7, 0.3, 0, 0], [0, 0.7, 0.3, 0], [0, 0, 0.7, 0.3], [0.3, 0, 0, 0.7]]
    config["aux"] = {"kind": "transition", "T": T}
    config["synth"]["n_train"] = 100
    cfg = write_config(tmp_path / "c.json", config)
    run("synth", cfg, tmp_path)
    assert run("train-aux", cfg, tmp_path) == 0
    aux = load_aux(tmp_path / "aux.ncrf")
    T = np.array(T)
    np.testing.assert_allclose(aux.posterior_, (T / T.sum(axis=0)).T)


def test_rbm_aux_on_identity_noise_puts_mass_on_the_observed_label(tmp_path):
    config = json.loads(json.dumps(MULTICLASS_CONFIG))
    config["synth"].update(n_train=1000, noise={"kind": "none"})
    config["aux"] = {"kind": "rbm", "rbm": {"n_hidden": 4, "n_epochs": 150, "learning_rate": 0.1}}
    cfg = write_config(tmp_path / "c.json", config)
    run("synth", cfg, tmp_path)
    assert run("train-aux", cfg, tmp_path) == 0
    aux = load_aux(tmp_path / "aux.ncrf")
    assert np.all(np.diag(aux.predict_proba(np.eye(4))) > 0.9)


def test_identity_noise_proposes_almost_no_changes(tmp_path, capsys):
    config = json.loads(json.dumps(MULTICLASS_CONFIG))
    config["synth"].update(n_train=1000, noise={"kind": "none"})
    config["aux"] = {"kind": "transition", "transition_source": "noise_spec"}
    config["train"].update(epochs=4, eval_every=0)
    cfg = write_config(tmp_path / "c.json", config)
    for cmd in ("synth", "train-aux", "train", "clean"):
        assert run(cmd, cfg, tmp_path) == 0
    meta, _ = load_cleaned(tmp_path / "cleaned.ncrf")
    assert meta["n_changes"] <= 0.01 * meta["n_rows"]


def test_config_errors_exit_2_before_touching_disk(tmp_path):
    out = tmp_path / "out"
    bad = dict(TINY, bogus=1)
    assert run("synth", write_config(tmp_path / "a.json", bad), out) == 2
    bad = dict(TINY, train=dict(TINY["train"], epochs="ten"))
    assert run("train", write_config(tmp_path / "b.json", bad), out) == 2
    (tmp_path / "c.json").write_text("{not json")
    assert run("synth", str(tmp_path / "c.json"), out) == 2
    assert run("synth", str(tmp_path / "missing.json"), out) == 2
    assert run("train", write_config(tmp_path / "d.json", TINY), out, "--alpha-start", "1", "--alpha-end", "3") == 2
    assert main(["synth"]) == 2
    assert not out.exists()


def test_schema_rejects_unknown_nested_keys():
    assert RUN_SCHEMA["additionalProperties"] is False
    assert RUN_SCHEMA["properties"]["train"]["additionalProperties"] is False


def test_transition_aux_refuses_multilabel_data(tmp_path):
    cfg = write_config(tmp_path / "c.json", dict(TINY, aux={"kind": "transition"}))
    run("synth", cfg, tmp_path)
    assert run("train-aux", cfg, tmp_path) == 2
    assert not (tmp_path / "aux.ncrf").exists()


def test_data_errors_exit_3(tmp_path):
    cfg = write_config(tmp_path / "c.json", TINY)
    assert run("train", cfg, tmp_path) == 3
    assert run("eval", cfg, tmp_path) == 3
    run("synth", cfg, tmp_path)
    assert run("train", cfg, tmp_path) == 3  # aux model missing
    (tmp_path / "dataset.ncrf").write_bytes(b"garbage")
    assert run("train-aux", cfg, tmp_path) == 3


def test_checkpoint_dataset_mismatch_exits_3(tmp_path):
    cfg = write_config(tmp_path / "c.json", TINY)
    for cmd in ("synth", "train-aux", "train"):
        run(cmd, cfg, tmp_path)
    other = dict(TINY, synth=dict(TINY["synth"], input_dim=5))
    run("synth", write_config(tmp_path / "o.json", other), tmp_path)
    assert run("clean", cfg, tmp_path) == 3


def test_numeric_failure_exits_4_and_keeps_last_checkpoint(tmp_path):
    config = dict(TINY, train=dict(TINY["train"], optimizer="sgd", learning_rate=1e308, epochs=5))
    cfg = write_config(tmp_path / "c.json", config)
    run("synth", cfg, tmp_path)
    run("train-aux", cfg, tmp_path)
    with np.errstate(all="ignore"):
        assert run("train", cfg, tmp_path) == 4
    assert not (tmp_path / ".lock").exists()


def test_lock_file_blocks_concurrent_writers(tmp_path):
    cfg = write_config(tmp_path / "c.json", TINY)
    (tmp_path / ".lock").write_text("123")
    assert run("synth", cfg, tmp_path) == 2
    assert not (tmp_path / "dataset.ncrf").exists()
