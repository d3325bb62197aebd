import numpy as np
import pytest

from protosound.autograd import Variable, sum_
from protosound.dsp import AudioClip, build_feature, preprocess
from protosound.model import (DEFAULT_NORM, VARIANTS, Cnn8Config, ModelConfig, PrototypeNet,
                              similarity_scores)

TINY = Cnn8Config(block_channels=(8, 16, 32, 64))


def test_full_config_shapes_end_to_end():
    clip = preprocess(AudioClip(np.random.default_rng(0).normal(size=4 * 8000), 8000))
    fm = build_feature(clip)
    assert fm.data.shape == (3, 124, 128)
    cfg = ModelConfig("p2d-ev")
    assert cfg.encoder_output_shape == (512, 7, 8)
    model = PrototypeNet(cfg)
    f = model.encoder(Variable(fm.data[None]))
    assert f.shape == (1, 512, 7, 8)


@pytest.mark.parametrize("variant", VARIANTS)
def test_variant_forward_shapes(variant, rng):
    cfg = ModelConfig(variant, n_prototypes=2, encoder=TINY)
    model = PrototypeNet(cfg, seed=1)
    x = rng.normal(size=(3, 3, 124, 128)).astype(np.float32)
    feats = model.features(x)
    assert feats.shape == ((3, 64) if variant == "p1d" else (3, 64, 7, 8))
    assert model.bank.prototypes.shape == (8,) + cfg.prototype_shape
    assert model.similarities(feats).shape == (3, 8)
    probs = model(x).data
    assert probs.shape == (3, 4)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert model.predict(x).shape == (3,)


def test_predict_proba_restores_mode_and_leaves_no_graph(rng):
    model = PrototypeNet(ModelConfig("p2d-av", encoder=TINY))
    x = rng.normal(size=(2, 3, 124, 128))
    model.train()
    p = model.predict_proba(x)
    assert model.training
    assert p.shape == (2, 4)
    assert all(np.all(v.grad == 0) for v in model.parameters())


def test_prototype_class_assignment():
    model = PrototypeNet(ModelConfig("p1d", n_prototypes=3, encoder=TINY))
    assert len(model.bank) == 12
    assert [model.bank.class_of(i) for i in range(12)] == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]
    assert np.all(np.abs(model.bank.prototypes.data) <= 0.5)


def test_default_head_norms():
    for v in VARIANTS:
        assert ModelConfig(v).norm == DEFAULT_NORM[v]
    assert isinstance(PrototypeNet(ModelConfig("p2d-mv", encoder=TINY)).head_norm, type(None))


@pytest.mark.parametrize("kwargs", [
    {"variant": "p3d"}, {"norm": "group"}, {"n_prototypes": 0}, {"n_prototypes": 6},
    {"encoder": {"block_channels": (8, 8, 16, 32)}}, {"encoder": {"conv_kernel": 2}},
    {"input_shape": (8, 8)},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        cfg = ModelConfig(**kwargs)
        cfg.encoder_output_shape


def test_wrong_input_shape_rejected(rng):
    model = PrototypeNet(ModelConfig("p2d-ev", encoder=TINY))
    with pytest.raises(ValueError):
        model(rng.normal(size=(1, 3, 100, 128)))


def test_same_seed_same_weights():
    a = PrototypeNet(ModelConfig("p2d-ma", encoder=TINY), seed=4).named_parameters()
    b = PrototypeNet(ModelConfig("p2d-ma", encoder=TINY), seed=4).named_parameters()
    for k in a:
        np.testing.assert_array_equal(a[k].data, b[k].data)


def test_similarity_scores_unknown_variant():
    with pytest.raises(ValueError):
        similarity_scores("p9", Variable(np.ones((1, 2))), Variable(np.ones((1, 2))))


# --- worked examples -------------------------------------------------------------
def test_tiny_config_output_shape():
    cfg = ModelConfig("p2d-ev", encoder=TINY)
    assert cfg.encoder_output_shape == (64, 7, 8)
    out = PrototypeNet(cfg).features(np.zeros((2, 3, 124, 128), dtype=np.float32))
    assert out.shape == (2, 64, 7, 8)


def test_zero_input_gives_zero_first_convolution():
    model = PrototypeNet(ModelConfig("p2d-ev", encoder=TINY))
    x = Variable(np.zeros((3, 2, 124, 128), dtype=np.float32))  # channel-first layout
    np.testing.assert_array_equal(model.encoder.blocks[0].conv1(x).data, 0.0)


def test_fc_input_width_is_classes_times_prototypes():
    model = PrototypeNet(ModelConfig("p2d-ev", n_prototypes=3, input_shape=(32, 32), encoder=TINY))
    assert model.fc.weight.shape == (4, 12)
    assert len(model.bank) == 12


@pytest.mark.parametrize("variant", ["p1d", "p2d-ev", "p2d-av", "p2d-mv"])
def test_cosine_similarities_are_scale_invariant(variant, rng):
    f, p = rng.normal(size=(2, 8, 2, 2)), rng.normal(size=(4, 8, 2, 2))
    if variant == "p1d":
        f, p = f[:, :, 0, 0], p[:, :, 0, 0]
    a = similarity_scores(variant, Variable(f), Variable(p)).data
    b = similarity_scores(variant, Variable(3.7 * f), Variable(p)).data
    np.testing.assert_allclose(a, b, atol=1e-7)


@pytest.mark.parametrize("variant", VARIANTS)
def test_prototypes_receive_gradient(variant, rng):
    model = PrototypeNet(ModelConfig(variant, input_shape=(32, 32), encoder=TINY))
    x = rng.normal(size=(4, 3, 32, 32)).astype(np.float32)
    model.zero_grad()
    sum_(model.logits(x)).backward()
    g = model.bank.prototypes.grad
    assert g is not None and np.any(g != 0)


def test_eval_mode_is_deterministic(rng):
    model = PrototypeNet(ModelConfig("p2d-mv", input_shape=(32, 32), encoder=TINY))
    x = rng.normal(size=(3, 3, 32, 32)).astype(np.float32)
    np.testing.assert_array_equal(model.predict_proba(x), model.predict_proba(x))


def test_classifier_starts_class_connected():
    model = PrototypeNet(ModelConfig("p2d-ev", n_prototypes=2, input_shape=(32, 32), encoder=TINY))
    w = model.fc.weight.data
    assert w.shape == (4, 8)
    for c in range(4):
        for k in range(8):
            assert w[c, k] == (1.0 if k // 2 == c else -0.5)
    np.testing.assert_array_equal(model.fc.bias.data, 0.0)


def test_random_classifier_init_option():
    cfg = ModelConfig("p1d", input_shape=(32, 32), encoder=TINY, fc_init="random")
    w = PrototypeNet(cfg).fc.weight.data
    assert np.all(np.abs(w) <= 0.5) and len(np.unique(w)) == w.size
    with pytest.raises(ValueError):
        ModelConfig("p1d", fc_init="zeros")
