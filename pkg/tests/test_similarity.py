import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from protosound import autograd as ag
from protosound import similarity as sim
from protosound.autograd import Variable
from protosound.gradcheck import gradcheck

SHAPES = [(2, 2, 2), (3, 4, 4), (4, 3, 2)]
MAPS = {"ev": (sim.sim_2ev, oracles.ev), "av": (sim.sim_2av, oracles.av), "mv": (sim.sim_2mv, oracles.mv)}
SCALARS = {"ea": (sim.sim_2ea, oracles.ea), "ma": (sim.sim_2ma, oracles.ma)}


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("name", sorted(MAPS))
def test_similarity_maps_match_brute_force(name, shape, rng):
    ours, ref = MAPS[name]
    f, p = rng.normal(size=shape), rng.normal(size=shape)
    np.testing.assert_allclose(ours(Variable(f), Variable(p)).data, ref(f, p), atol=1e-10)


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("name", sorted(SCALARS))
def test_attention_similarities_match_brute_force(name, shape, rng):
    ours, ref = SCALARS[name]
    f, p = rng.normal(size=shape), rng.normal(size=shape)
    assert float(ours(Variable(f), Variable(p)).data) == pytest.approx(ref(f, p), abs=1e-10)


@pytest.mark.parametrize("name", sorted(MAPS) + sorted(SCALARS))
def test_batched_layout(name, rng):
    ours, ref = {**MAPS, **SCALARS}[name]
    f, p = rng.normal(size=(3, 2, 3, 2)), rng.normal(size=(4, 2, 3, 2))
    out = ours(Variable(f), Variable(p)).data
    assert out.shape[:2] == (3, 4)
    for b in range(3):
        for k in range(4):
            np.testing.assert_allclose(out[b, k], ref(f[b], p[k]), atol=1e-10)
    # mixed batched / unbatched operands
    assert ours(Variable(f[0]), Variable(p)).data.shape[:1] == (4,)
    assert ours(Variable(f), Variable(p[0])).data.shape[:1] == (3,)


def test_sim_1d_is_cosine(rng):
    f, p = rng.normal(size=(3, 5)), rng.normal(size=(2, 5))
    out = sim.sim_1d(Variable(f), Variable(p)).data
    for b in range(3):
        for k in range(2):
            assert out[b, k] == pytest.approx(oracles.cos(f[b], p[k]))


def test_self_similarity_is_one(rng):
    f = rng.normal(size=(3, 4, 4))
    np.testing.assert_allclose(sim.sim_2ev(Variable(f), Variable(f)).data, 1.0, atol=1e-7)
    np.testing.assert_allclose(sim.sim_2mv(Variable(f), Variable(f)).data, 1.0, atol=1e-7)
    assert float(sim.sim_1d(Variable(f[:, 0, 0]), Variable(f[:, 0, 0])).data) == pytest.approx(1.0)


def test_mv_argmax_index(rng):
    f, p = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 2))
    _, idx = sim.sim_2mv(Variable(f), Variable(p), return_argmax=True)
    assert idx.shape == (3, 2)
    flat = p.reshape(2, -1)
    for t in range(3):
        for r in range(2):
            cosines = [oracles.cos(f[:, t, r], flat[:, j]) for j in range(6)]
            assert idx[t, r] == int(np.argmax(cosines))


def test_attention_weights_are_distributions(rng):
    f, p = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(5, 3, 4, 4))
    for fn in (sim.sim_2ea, sim.sim_2ma):
        _, attn = fn(Variable(f), Variable(p), return_attention=True)
        assert attn.shape == (2, 5, 4, 4)
        np.testing.assert_allclose(attn.data.sum(axis=(-2, -1)), 1.0)


def test_scalarize_is_mean(rng):
    m = rng.normal(size=(2, 3, 4, 5))
    np.testing.assert_allclose(sim.scalarize(Variable(m)).data, m.mean(axis=(-2, -1)))


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        sim.sim_2ev(Variable(np.ones((2, 2, 2))), Variable(np.ones((2, 2, 3))))


@pytest.mark.parametrize("fn", [sim.sim_2ev, sim.sim_2av, sim.sim_2mv, sim.sim_2ea, sim.sim_2ma])
def test_similarity_gradients(fn, rng):
    f, p = rng.normal(size=(2, 3, 2, 2)), rng.normal(size=(2, 3, 2, 2))
    w = rng.normal(size=np.shape(fn(Variable(f), Variable(p)).data))
    loss = lambda a, b: ag.sum_(fn(a, b) * Variable(w))
    assert gradcheck(lambda v: loss(v, Variable(p)), f) < 1e-6
    assert gradcheck(lambda v: loss(Variable(f), v), p) < 1e-6


def test_zero_vectors_give_zero_cosine():
    z = np.zeros((2, 2, 2))
    np.testing.assert_array_equal(sim.sim_2ev(Variable(z), Variable(np.ones((2, 2, 2)))).data, 0.0)


@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2 ** 31 - 1),
       st.floats(1e-3, 1e3))
def test_vanilla_similarities_are_bounded(c, t, r, seed, scale):
    g = np.random.default_rng(seed)
    f, p = g.normal(size=(2, c, t, r)) * scale, g.normal(size=(3, c, t, r))
    for fn in (sim.sim_2ev, sim.sim_2av, sim.sim_2mv):
        out = fn(Variable(f.astype(np.float32)), Variable(p.astype(np.float32))).data
        assert np.all(np.abs(out) <= 1 + 1e-5)


# --- worked examples -------------------------------------------------------------
def test_sim_1d_example():
    f, p = np.array([[1.0, 2.0, 2.0]]), np.array([[2.0, 1.0, 2.0]])
    assert float(sim.sim_1d(Variable(f), Variable(p)).data[0, 0]) == pytest.approx(8 / 9, abs=1e-7)


def test_ev_orthogonal_bins_score_zero():
    f = np.zeros((2, 1, 2))
    p = np.zeros((2, 1, 2))
    f[0], p[1] = 1.0, 1.0
    np.testing.assert_allclose(sim.sim_2ev(Variable(f), Variable(p)).data, 0.0, atol=1e-12)


def test_av_of_constant_prototype_equal_to_bin_is_one(rng):
    f = rng.normal(size=(3, 2, 2))
    p = np.repeat(np.repeat(f[:, :1, :1], 2, axis=1), 2, axis=2)
    out = sim.sim_2av(Variable(f), Variable(p)).data
    assert out[0, 0] == pytest.approx(1.0, abs=1e-7)
    assert np.all(sim.sim_2mv(Variable(f), Variable(p)).data >= out - 1e-12)


def test_mv_finds_parallel_bin_anywhere(rng):
    f, p = rng.normal(size=(3, 2, 3)), rng.normal(size=(3, 2, 3))
    p[:, 1, 2] = 2.5 * f[:, 0, 0]
    assert sim.sim_2mv(Variable(f), Variable(p)).data[0, 0] == pytest.approx(1.0, abs=1e-7)


def test_scalarize_examples():
    assert float(sim.scalarize(Variable(np.array([[1.0, -1.0]]))).data) == 0.0
    assert float(sim.scalarize(Variable(np.array([[0.5, 0.5], [1.0, 0.0]]))).data) == 0.5


def test_ea_constant_map_gives_uniform_attention(rng):
    f = np.repeat(rng.normal(size=(3, 1, 1)), 6, axis=2).reshape(3, 2, 3)
    p = np.repeat(rng.normal(size=(3, 1, 1)), 6, axis=2).reshape(3, 2, 3)
    out, attn = sim.sim_2ea(Variable(f), Variable(p), return_attention=True)
    np.testing.assert_allclose(attn.data, 1 / 6)
    assert float(out.data) == pytest.approx(float(np.dot(f[:, 0, 0], p[:, 0, 0])))


def test_ma_single_bin_is_inner_product(rng):
    f, p = rng.normal(size=(4, 1, 1)), rng.normal(size=(4, 1, 1))
    assert float(sim.sim_2ma(Variable(f), Variable(p)).data) == pytest.approx(float(np.sum(f * p)))
