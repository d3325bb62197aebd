import csv
import dataclasses
import json

import numpy as np
import pytest

from protosound.checkpoint import CheckpointError, load
from protosound.dataset import synth_records
from protosound.dsp import AudioClip
from protosound.metrics import metrics
from protosound.train import (HISTORY_FIELDS, NumericalError, TrainConfig, center_features, draw_batch,
                              evaluate, load_checkpoint, make_checkpoint, restore, save_checkpoint, train)

MICRO = dict(block_channels=(4, 8, 16, 32), batch=4, max_iter=3, checkpoint_every=2)


@pytest.fixture(scope="module")
def records():
    recs = synth_records(2, seed=5)
    return recs[:6], recs[6:]


def test_training_is_deterministic_and_writes_outputs(records, tmp_path):
    cfg = TrainConfig(variant="p2d-ma", **MICRO)
    r1 = train(*records, cfg, tmp_path / "a")
    r2 = train(*records, cfg, tmp_path / "b")
    for name in ("final.ckpt", "best.ckpt", "history.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a" / "history.csv")))
    assert tuple(rows[0]) == HISTORY_FIELDS
    assert [r["iteration"] for r in rows] == ["0", "1", "2"]
    assert rows[0]["devel_AS"] == "" and rows[1]["devel_AS"] != "" and rows[2]["devel_AS"] != ""
    assert r1.history == r2.history
    different = train(*records, dataclasses.replace(cfg, seed=1))
    assert different.history[0]["nll"] != r1.history[0]["nll"]


def test_checkpoint_restores_model_and_optimizer(records, tmp_path):
    cfg = TrainConfig(variant="p1d", **MICRO)
    result = train(*records, cfg, tmp_path)
    model, adam, cfg2 = load_checkpoint(tmp_path / "final.ckpt")
    assert cfg2 == cfg
    assert adam.step == 3
    feats = center_features(records[1])
    np.testing.assert_array_equal(model.predict_proba(feats), result.model.predict_proba(feats))
    meta = load(tmp_path / "final.ckpt").meta
    assert meta["iteration"] == 3 and meta["model_config"]["variant"] == "p1d"


def test_restore_rejects_mismatched_arrays(records):
    cfg = TrainConfig(variant="p2d-ev", **MICRO)
    result = train(*records, dataclasses.replace(cfg, max_iter=1))
    ck = make_checkpoint(result.model, result.adam, cfg, 1)
    del ck.arrays["param.fc.bias"]
    with pytest.raises(CheckpointError, match="missing"):
        restore(ck)
    ck = make_checkpoint(result.model, result.adam, cfg, 1)
    ck.arrays["param.fc.bias"] = np.zeros(7, np.float32)
    with pytest.raises(CheckpointError, match="shape"):
        restore(ck)


def test_non_finite_loss_dumps_state(records, tmp_path):
    bad = [dataclasses.replace(r, audio=AudioClip(np.full(len(r.audio), np.nan), 4000)) for r in records[0]]
    cfg = TrainConfig(variant="p2d-ev", **MICRO)
    with pytest.raises(NumericalError):
        train(bad, [], cfg, tmp_path)
    dump = json.loads((tmp_path / "nan_dump.json").read_text())
    assert dump["iteration"] == 0 and len(dump["batch_indices"]) == 4


def test_missing_class_rejected(records):
    only_normal = [r for r in records[0] if r.label == 0]
    with pytest.raises(ValueError, match="lacks a class"):
        train(only_normal, [], TrainConfig(**MICRO))


@pytest.mark.parametrize("kwargs", [{"lr0": 0}, {"batch": 0}, {"alpha": -1}, {"n_prototypes": 6},
                                    {"variant": "x"}])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_evaluate_counts_every_record(records):
    result = train(*records, TrainConfig(**{**MICRO, "max_iter": 1}))
    cm = evaluate(result.model, records[1])
    assert cm.total == len(records[1])


# --- worked examples -------------------------------------------------------------
def test_history_has_one_row_per_iteration(records):
    result = train(*records, TrainConfig(**{**MICRO, "max_iter": 5}))
    assert len(result.history) == 5


def test_loss_trends_down_over_fifty_iterations(records):
    cfg = TrainConfig(variant="p2d-ev", block_channels=(4, 8, 16, 32), batch=8, max_iter=50,
                      checkpoint_every=100, lr0=3e-3)
    nll = [row["nll"] for row in train(records[0], [], cfg).history]
    assert np.mean(nll[40:]) < np.mean(nll[:10])


def test_checkpoint_save_load_save_is_byte_identical(records, tmp_path):
    result = train(*records, TrainConfig(variant="p2d-av", **MICRO), tmp_path)
    model, adam, cfg = load_checkpoint(tmp_path / "final.ckpt")
    meta = load(tmp_path / "final.ckpt").meta
    save_checkpoint(tmp_path / "again.ckpt", model, adam, cfg, meta["iteration"], meta["metrics"])
    assert (tmp_path / "again.ckpt").read_bytes() == (tmp_path / "final.ckpt").read_bytes()
    restored = metrics(evaluate(model, records[1]))
    assert restored["AS"] == result.history[-1]["devel_AS"]


def test_batch_label_frequencies_follow_the_corpus():
    labels = np.array([0] * 60 + [1] * 25 + [2] * 10 + [3] * 5)
    idx = draw_batch(np.random.default_rng(0), len(labels), 200000)
    freq = np.bincount(labels[idx], minlength=4) / len(idx)
    np.testing.assert_allclose(freq, [0.60, 0.25, 0.10, 0.05], atol=0.005)
