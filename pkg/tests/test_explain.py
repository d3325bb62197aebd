import json
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from protosound.autograd import no_grad
from protosound.dataset import synth_records
from protosound.explain import explain_report, export_spectrogram, project, read_pgm, similarity_table
from protosound.metrics import ConfusionMatrix
from protosound.model import Cnn8Config, ModelConfig, PrototypeNet
from protosound.train import center_features

TINY = Cnn8Config(block_channels=(4, 8, 16, 32))


@pytest.fixture(scope="module")
def split():
    recs = synth_records(2, seed=9)[:5]
    return recs, center_features(recs)


@pytest.mark.parametrize("variant", ["p1d", "p2d-av", "p2d-ma"])
def test_projection_matches_brute_force(variant, split):
    recs, feats = split
    model = PrototypeNet(ModelConfig(variant, n_prototypes=2, encoder=TINY), seed=2)
    results = project(model, recs, feats)
    assert len(results) == 8
    for r, (j, s) in zip(results, oracles.projection(model, feats)):
        assert r.nearest_index == j
        assert r.nearest_record_id == recs[j].record_id
        assert r.similarity == pytest.approx(s, abs=1e-6)
        assert r.distance == pytest.approx(np.exp(-r.similarity), abs=1e-6)
        assert r.cls == r.prototype_index // 2
        assert r.log_mel_image.shape == (124, 128)


def test_prototype_equal_to_a_record_projects_onto_it(split):
    recs, feats = split
    model = PrototypeNet(ModelConfig("p1d", encoder=TINY), seed=0)
    model.eval()
    with no_grad():
        target = model.features(feats[3:4]).data[0]
    model.bank.prototypes.data[1] = target
    r = project(model, recs, feats)[1]
    assert r.nearest_index == 3
    assert r.similarity == pytest.approx(1.0, abs=1e-6)


def test_projection_does_not_modify_prototypes(split):
    recs, feats = split
    model = PrototypeNet(ModelConfig("p2d-ev", encoder=TINY))
    before = model.bank.prototypes.data.copy()
    project(model, recs, feats)
    np.testing.assert_array_equal(model.bank.prototypes.data, before)
    with pytest.raises(ValueError):
        project(model, [], feats[:0])


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
def test_min_distance_is_max_similarity(scores):
    # exp can round nearby similarities to the same distance, so compare values
    s = np.array(scores)
    d = np.exp(-s)
    assert d[np.argmax(s)] == d.min()
    if np.unique(d).size == d.size:
        assert np.argmin(d) == np.argmax(s)


def test_similarity_table_shape(split):
    _, feats = split
    model = PrototypeNet(ModelConfig("p2d-mv", n_prototypes=3, encoder=TINY))
    assert similarity_table(model, feats, batch_size=2).shape == (5, 12)


def test_pgm_pixels_orientation_and_csv(tmp_path):
    img = np.array([[0.0, 1.0], [2.0, 3.0]])  # rows = time, cols = Mel bins
    export_spectrogram(img, tmp_path / "x.pgm")
    raw = (tmp_path / "x.pgm").read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    px = read_pgm(tmp_path / "x.pgm")
    # top row is the highest Mel bin, time runs left to right
    np.testing.assert_array_equal(px, [[85, 255], [0, 170]])
    back = np.loadtxt(tmp_path / "x.csv", delimiter=",")
    np.testing.assert_array_equal(back, img)


def test_csv_round_trip_is_float32_exact(tmp_path, rng):
    img = rng.normal(size=(7, 5)).astype(np.float32) * 1e3
    export_spectrogram(img, tmp_path / "r.pgm")
    back = np.loadtxt(tmp_path / "r.csv", delimiter=",").astype(np.float32)
    np.testing.assert_array_equal(back, img)


def test_constant_image_is_mid_gray(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        export_spectrogram(np.full((3, 4), 2.5), tmp_path / "c.pgm")
    assert np.all(read_pgm(tmp_path / "c.pgm") == 128)
    assert "constant" in caplog.text
    with pytest.raises(ValueError):
        export_spectrogram(np.zeros(3), tmp_path / "bad.pgm")


def test_report_lists_every_prototype(split):
    recs, feats = split
    model = PrototypeNet(ModelConfig("p2d-ea", n_prototypes=2, encoder=TINY))
    results = project(model, recs, feats)
    cm = ConfusionMatrix.from_predictions([r.label for r in recs], model.predict(feats))
    text, doc = explain_report(results, cm)
    parsed = json.loads(doc)
    entries = [e for v in parsed["classes"].values() for e in v]
    assert len(entries) == 8
    for e in entries:
        assert f"p{e['prototype_index']}: record={e['nearest_record_id']} similarity={e['similarity']:.6g}" in text
    assert f"AS={parsed['metrics']['scores']['AS']:.4f}" in text
    with pytest.raises(ValueError):
        explain_report([], cm)
