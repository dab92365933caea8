import math
import time

import numpy as np
import pytest

from mgcd.neural import autograd as ag
from mgcd.neural import checkpoint as ckpt
from mgcd.neural import gradcheck
from mgcd.neural.layers import (AttentionConfig, Dropout, EncoderLayer, LayerNorm, MultiHeadAttention, ParamStore,
                                kaiming_uniform, sinusoidal_positions)
from mgcd.neural.optim import adam_step, adamw_step


def T(x, dtype=np.float64):
    return ag.Tensor(np.asarray(x, dtype=dtype), requires_grad=True)


def test_kaiming_bounds():
    assert math.sqrt(2) * math.sqrt(3 / 512) == pytest.approx(0.108253, abs=1e-6)
    w = kaiming_uniform((512, 256), 512, math.sqrt(2), np.random.default_rng(0)).data
    assert np.abs(w).max() <= math.sqrt(6 / 512) and np.abs(w).max() > 0.99 * math.sqrt(6 / 512)
    w1 = kaiming_uniform((512, 256), 512, 1.0, np.random.default_rng(0)).data
    assert np.abs(w1).max() <= 0.076547 + 1e-6
    assert not kaiming_uniform((3, 3), 3, 0.0, np.random.default_rng(0)).data.any()
    with pytest.raises(ValueError):
        kaiming_uniform((3, 3), 0)


def test_kaiming_seeded():
    a = kaiming_uniform((4, 4), 4, rng=np.random.default_rng(5)).data
    b = kaiming_uniform((4, 4), 4, rng=np.random.default_rng(5)).data
    assert np.array_equal(a, b)


def test_softmax_basic():
    out = ag.softmax(T([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5])
    x = T(np.random.default_rng(0).normal(size=(5, 7)) * 10)
    assert np.allclose(ag.softmax(x).data.sum(-1), 1, atol=1e-6)
    mask = np.array([[True, False, True, False, True, True, True]] * 5)
    w = ag.softmax(x, mask=mask).data
    assert np.all(w[:, [1, 3]] == 0) and np.allclose(w.sum(-1), 1)


def test_layer_norm_moments():
    x = T(np.random.default_rng(1).normal(3, 5, size=(6, 32)))
    y = ag.layer_norm(x, T(np.ones(32)), T(np.zeros(32))).data
    assert np.allclose(y.mean(-1), 0, atol=1e-6)
    assert np.allclose(y.var(-1), 1, atol=1e-4)


def test_uniform_attention_is_mean():
    store = ParamStore(0, np.float64)
    att = MultiHeadAttention(store, "a", 8, 2)
    for lin in (att.q, att.k):
        lin.weight.data[:] = 0
        lin.bias.data[:] = 0
    v = np.random.default_rng(2).normal(size=(1, 5, 8))
    out = att(T(v), T(v), T(v)).data
    vproj = v @ att.v.weight.data + att.v.bias.data
    expect = vproj.mean(axis=1, keepdims=True) @ att.o.weight.data + att.o.bias.data
    assert np.allclose(out, np.broadcast_to(expect, out.shape))
    assert np.allclose(att.last_weights, 1 / 5)


def test_masked_attention_zero_weight():
    store = ParamStore(0, np.float64)
    att = MultiHeadAttention(store, "a", 8, 2)
    x = T(np.random.default_rng(3).normal(size=(2, 4, 8)))
    mask = np.array([[True, True, False, False], [True, True, True, False]])
    att(x, x, x, mask)
    w = att.last_weights
    assert np.all(w[0, :, :, 2:] == 0) and np.all(w[1, :, :, 3] == 0)
    assert np.allclose(w.sum(-1), 1)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        ag.matmul(T(np.ones((2, 3))), T(np.ones((4, 5))))


def test_cross_entropy_values():
    assert float(ag.cross_entropy(T([0.0, 0.0]), [0]).data) == pytest.approx(math.log(2))
    assert float(ag.cross_entropy(T([50.0, 0.0]), [0]).data) == pytest.approx(0, abs=1e-12)
    logits = T([[1.0, 2.0, 0.5]])
    ag.cross_entropy(logits, [1]).backward()
    p = np.exp([1.0, 2.0, 0.5]) / np.exp([1.0, 2.0, 0.5]).sum()
    assert np.allclose(logits.grad[0], p - np.array([0, 1, 0]))
    with pytest.raises(ValueError):
        ag.cross_entropy(T([0.0, 0.0]), [2])


def test_dropout_train_only_and_seeded():
    x = T(np.ones((100, 100)))
    assert np.array_equal(ag.dropout(x, 0.5, (1, 2), training=False).data, x.data)
    a = ag.dropout(x, 0.5, (1, 2)).data
    b = ag.dropout(x, 0.5, (1, 2)).data
    c = ag.dropout(x, 0.5, (1, 3)).data
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert set(np.unique(a)) <= {0.0, 2.0} and 0.45 < (a > 0).mean() < 0.55
    d = Dropout(0.5, 9)
    assert not np.array_equal(d(x, True).data, d(x, True).data)


def test_adam_first_step():
    store = ParamStore(0, np.float64)
    w = store.add("w", T([1.0]))
    loss = ag.mul(w, w)
    ag.sum_(loss).backward()
    adam_step(store, 0.1)
    assert w.data[0] == pytest.approx(0.9, abs=1e-6)


def test_adam_zero_grad_unchanged_and_adamw_decay():
    store = ParamStore(0, np.float64)
    w = store.add("w", T([2.0, -1.0]))
    w.grad = np.zeros(2)
    adam_step(store, 0.1)
    assert np.array_equal(w.data, [2.0, -1.0])
    store2 = ParamStore(0, np.float64)
    w2 = store2.add("w", T([2.0, -1.0]))
    w2.grad = np.zeros(2)
    adamw_step(store2, 0.1, weight_decay=0.01)
    assert np.allclose(w2.data, np.array([2.0, -1.0]) * (1 - 0.1 * 0.01))


def test_gradcheck_all_layers():
    t0 = time.perf_counter()
    results = gradcheck.run_all(seed=0)
    assert time.perf_counter() - t0 < 60
    per_layer = {}
    for r in results:
        per_layer.setdefault(r.layer, []).append(r)
        assert r.ok, f"{r.layer} {r.shape}: {r.rel_error:.2e}"
    assert all(len(v) >= 5 for v in per_layer.values())
    assert {"linear", "embedding", "layer_norm", "softmax", "dropout", "multi_head_attention", "feed_forward",
            "cross_entropy"} <= set(per_layer)


def test_gradcheck_detects_a_wrong_adjoint():
    def bad_square(x):
        return ag._result(x.data ** 2, (x,), lambda g: (g * x.data,))
    rng = np.random.default_rng(0)
    x = T(rng.normal(size=(3, 4)))
    err = gradcheck.check(lambda: bad_square(x), [x], rng)
    assert err > 1e-1


def test_encoder_deterministic_and_float32():
    def run():
        store = ParamStore(7, np.float32)
        layer = EncoderLayer(store, "e", AttentionConfig(16, 4, 32, 0.1))
        x = ag.Tensor(np.random.default_rng(0).normal(size=(2, 5, 16)).astype(np.float32))
        return layer(x, np.ones((2, 5), bool), training=True).data
    a, b = run(), run()
    assert a.dtype == np.float32 and np.array_equal(a, b)


def test_sinusoidal_positions():
    p = sinusoidal_positions(10, 8)
    assert p.shape == (10, 8) and np.allclose(p[0, 0::2], 0) and np.allclose(p[0, 1::2], 1)


def test_checkpoint_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"b": rng.normal(size=(3, 4)).astype(np.float32), "a": rng.normal(size=5),
              "n": np.arange(6, dtype=np.int64).reshape(2, 3), "s": np.array(np.float32(np.nan))}
    ckpt.save(tmp_path / "c.bin", arrays)
    back = ckpt.load(tmp_path / "c.bin")
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype and back[k].tobytes() == arrays[k].tobytes()
    blob = (tmp_path / "c.bin").read_bytes()
    assert blob[:4] == b"MGCD" and int.from_bytes(blob[4:8], "little") == 1
    assert ckpt.dumps(arrays) == ckpt.dumps(dict(reversed(list(arrays.items()))))


def test_checkpoint_rejects_garbage():
    with pytest.raises(ckpt.CheckpointError):
        ckpt.loads(b"NOPE" + b"\0" * 20)
    good = ckpt.dumps({"a": np.zeros(3)})
    with pytest.raises(ckpt.CheckpointError):
        ckpt.loads(good[:-4])


def test_param_store_strict_load():
    s = ParamStore(0)
    s.zeros("a", (2,))
    with pytest.raises(ValueError):
        s.load_arrays({"a": np.zeros(3, np.float32)})
    with pytest.raises(ValueError):
        s.load_arrays({"b": np.zeros(2, np.float32)})
    with pytest.raises(ValueError):
        s.zeros("a", (2,))


def test_layer_norm_layer_params_get_grads():
    store = ParamStore(0, np.float64)
    ln = LayerNorm(store, "ln", 4)
    ag.sum_(ag.mul(ln(T(np.random.default_rng(0).normal(size=(3, 4)))), T(np.arange(4.0)))).backward()
    assert ln.gamma.grad is not None and np.abs(ln.beta.grad).sum() > 0
