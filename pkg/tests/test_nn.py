from jax import config

config.update("jax_enable_x64", True)

import numpy as np
import jax
import jax.numpy as jnp
import pytest

from mlkws.nn import layers
from mlkws.nn import network as nw
from mlkws.nn import optim
from mlkws.nn.checkpoint import (
    CheckpointError,
    flatten,
    load_checkpoint,
    save_checkpoint,
    unflatten,
)
from mlkws.nn.gradcheck import check_gradient, layer_checks


def _single(layer, seed=0):
    spec = nw.NetworkSpec((layer,), layer.in_channels, seed)
    return spec, nw.build(spec)


@pytest.mark.parametrize("causal", [True, False])
def test_conv1d_receptive_field(causal: bool):
    spec, params = _single(layers.conv1d("c", 2, 3, 3, dilation=2, causal=causal))
    x = np.zeros((2, 12))
    x[:, 6] = 1.0
    y = np.asarray(nw.apply(spec, params, x))
    assert y.shape == (3, 12)
    touched = np.nonzero(np.any(y != 0, axis=0))[0]
    if causal:
        assert set(touched) <= {6, 8, 10}
    else:
        assert set(touched) <= {4, 6, 8}
    assert 6 in touched


def test_depthwise_conv_keeps_channels_apart():
    spec, params = _single(layers.conv1d("c", 4, 4, 3, 1, True, 4))
    assert params["c"]["w"].shape == (4, 1, 3)
    x = np.zeros((4, 8))
    x[2] = 1.0
    y = np.asarray(nw.apply(spec, params, x))
    np.testing.assert_array_equal(y[[0, 1, 3]], 0.0)


def test_pointwise_layers(rng: np.random.Generator):
    x = rng.standard_normal((4, 6))
    spec, params = _single(layers.affine("a", 4, 4, init="identity"))
    np.testing.assert_allclose(nw.apply(spec, params, x), x)
    spec, params = _single(layers.activation("s", "softmax", 4))
    np.testing.assert_allclose(np.sum(nw.apply(spec, params, x), axis=0), 1.0)
    spec, params = _single(layers.activation("p", "prelu", 4))
    np.testing.assert_allclose(nw.apply(spec, params, x), np.where(x >= 0, x, 0.25 * x))
    spec, params = _single(layers.gln("n", 4))
    y = np.asarray(nw.apply(spec, params, 3.0 * x + 2.0))
    assert abs(np.mean(y)) < 1e-12
    assert np.var(y) == pytest.approx(1.0, rel=1e-6)


def test_residual_concat_split(rng: np.random.Generator):
    body = [layers.affine("z", 3, 3, init="zero")]
    spec, params = _single(layers.residual("r", 3, body))
    x = rng.standard_normal((3, 5))
    np.testing.assert_allclose(nw.apply(spec, params, x), x)

    stack = (layers.concat("c", (2, 3)), layers.split("s", (4, 1)))
    spec = nw.NetworkSpec(stack, (2, 3))
    a, b = rng.standard_normal((2, 5)), rng.standard_normal((3, 5))
    head, tail = nw.apply(spec, nw.build(spec), (a, b))
    np.testing.assert_allclose(np.concatenate([head, tail]), np.concatenate([a, b]))
    assert spec.out_channels == (4, 1)


def test_lws_conv_matches_loop(rng: np.random.Generator):
    layer = layers.lws_conv("l", 2 * 8, 8, 2, 3, 2)
    spec, params = _single(layer)
    params = jax.tree_util.tree_map(
        lambda p: np.asarray(p, np.float64) + rng.standard_normal(np.shape(p)), params
    )
    x = rng.standard_normal((16, 4))
    y = np.asarray(nw.apply(spec, params, x))
    w, b = params["l"]["w"], params["l"]["b"]
    maps = x.reshape(2, 2, 4, 4)
    expected = np.zeros((6, 4))
    for r in range(2):
        for n in range(3):
            responses = [
                np.einsum("ck,ckt->t", w[r, n], maps[:, r, p : p + 2]) for p in range(3)
            ]
            expected[r * 3 + n] = np.max(responses, axis=0) + b[r, n]
    np.testing.assert_allclose(y, expected, atol=1e-12)


def test_network_validation():
    with pytest.raises(ValueError):
        nw.NetworkSpec((), 3)
    with pytest.raises(ValueError):
        nw.NetworkSpec((layers.affine("a", 3, 4), layers.affine("a", 4, 4)), 3)
    with pytest.raises(ValueError, match="Layer b"):
        nw.NetworkSpec((layers.affine("a", 3, 4), layers.affine("b", 5, 4)), 3)
    with pytest.raises(ValueError):
        nw.NetworkSpec((layers.split("s", (1, 2)), layers.affine("a", 1, 1)), 3)
    with pytest.raises(ValueError):
        nw.NetworkSpec((layers.conv1d("c", 4, 6, 3, groups=4),), 4)
    with pytest.raises(ValueError):
        nw.NetworkSpec((layers.lws_conv("l", 16, 8, 3, 2, 2),), 16)
    with pytest.raises(ValueError):
        nw.NetworkSpec((layers.Layer("x", "lstm", 3, 3),), 3)
    spec, params = _single(layers.affine("a", 3, 4))
    with pytest.raises(ValueError):
        nw.apply(spec, params, np.zeros((4, 2)))
    with pytest.raises(ValueError):
        nw.apply(spec, params, np.zeros(3))


def test_build_is_seeded():
    spec = nw.NetworkSpec((layers.affine("a", 3, 4), layers.gln("n", 4)), 3, seed=7)
    a, b = nw.build(spec), nw.build(spec)
    np.testing.assert_array_equal(a["a"]["w"], b["a"]["w"])
    assert a["a"]["w"].dtype == jnp.float32
    other = nw.build(nw.NetworkSpec(spec.layers, 3, seed=8))
    assert not np.array_equal(a["a"]["w"], other["a"]["w"])
    assert nw.num_parameters(a) == 3 * 4 + 4 + 2 * 4
    assert nw.param_shapes(spec) == {
        "a": {"w": (4, 3), "b": (4,)},
        "n": {"gamma": (4,), "beta": (4,)},
    }


def test_debug_mode_names_layer():
    spec, params = _single(layers.affine("a", 2, 2))
    x = np.array([[np.inf, 0.0], [0.0, 1.0]])
    with pytest.raises(FloatingPointError, match="Layer a"):
        nw.apply(spec, params, x, debug=True)


def test_forward_backward_tape(rng: np.random.Generator):
    spec = nw.NetworkSpec(
        (layers.affine("a", 3, 4), layers.activation("t", "tanh", 4)), 3
    )
    params = nw.build(spec)
    x = rng.standard_normal((3, 5))
    out, tape = nw.forward(spec, params, x)
    upstream = jnp.ones_like(out)
    grads = nw.backward(tape, upstream)
    expected = jax.grad(lambda p: jnp.sum(nw.apply(spec, p, x)))(params)
    np.testing.assert_allclose(grads["a"]["w"], expected["a"]["w"], rtol=1e-6)
    assert grads["t"] == {}
    with pytest.raises(nw.TapeConsumedError):
        nw.backward(tape, upstream)


def test_match_params():
    spec = nw.NetworkSpec(
        (layers.affine("a", 3, 4), layers.activation("r", "relu", 4)), 3
    )
    loaded = {"a": {"w": np.zeros((4, 3), np.float32), "b": np.zeros(4, np.float32)}}
    fitted = nw.match_params(spec, loaded)
    assert fitted["r"] == {}
    with pytest.raises(ValueError, match="/a/w"):
        nw.match_params(spec, {"a": {"w": np.zeros((3, 3)), "b": np.zeros(4)}})
    with pytest.raises(ValueError, match="/a/b"):
        nw.match_params(spec, {"a": {"w": np.zeros((4, 3))}})
    with pytest.raises(ValueError, match="extra"):
        nw.match_params(spec, dict(loaded, extra={"w": np.zeros(1)}))


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": jnp.array([1.0, -2.0, 3.0], dtype=jnp.float32)}
    grads = {"w": jnp.array([0.5, -4.0, 0.0], dtype=jnp.float32)}
    state = optim.init_adam(params)
    cfg = optim.AdamConfig(learning_rate=0.1)
    new, state = optim.optimizer_step(params, grads, state, cfg)
    assert state.step == 1
    np.testing.assert_allclose(new["w"], [0.9, -1.9, 3.0], atol=1e-5)
    assert new["w"].dtype == jnp.float32


def test_adam_errors():
    params = {"w": jnp.zeros(3, dtype=jnp.float32)}
    state = optim.init_adam(params)
    with pytest.raises(ValueError):
        optim.optimizer_step(params, {"w": jnp.zeros(2)}, state)
    with pytest.raises(optim.DivergenceError, match="w"):
        optim.optimizer_step(params, {"w": jnp.array([0.0, np.nan, 0.0])}, state)
    with pytest.raises(optim.DivergenceError, match="loss"):
        optim.check_finite({"w": jnp.zeros(3)}, loss=float("inf"))


def test_checkpoint_round_trip(tmp_path, rng: np.random.Generator):
    params = {
        "net": {"a": {"w": rng.standard_normal((4, 3)), "b": np.zeros(4)}},
        "scalar": np.float32(2.5),
    }
    meta = {"kind": "mlenet", "seed": 3, "epoch": 2, "train_loss": [1.5, 1.25]}
    save_checkpoint(tmp_path / "x.ckpt", params, meta)
    ckpt = load_checkpoint(tmp_path / "x.ckpt")
    assert ckpt.metadata == meta
    assert ckpt.version == 1
    np.testing.assert_array_equal(
        ckpt.params["net"]["a"]["w"], params["net"]["a"]["w"].astype(np.float32)
    )
    assert ckpt.params["scalar"].shape == ()
    save_checkpoint(tmp_path / "y.ckpt", unflatten(flatten(ckpt.params)), meta)
    assert (tmp_path / "x.ckpt").read_bytes() == (tmp_path / "y.ckpt").read_bytes()
    assert not (tmp_path / "x.ckpt.tmp").exists()


def test_checkpoint_corruption(tmp_path):
    save_checkpoint(tmp_path / "x.ckpt", {"w": np.ones((2, 2))}, {"step": 1})
    data = (tmp_path / "x.ckpt").read_bytes()
    bad = {
        "truncated": data[:-3],
        "trailing": data + b"\x00",
        "magic": b"XXXX" + data[4:],
        "version": data[:4] + (2).to_bytes(4, "little") + data[8:],
    }
    for name, content in bad.items():
        (tmp_path / f"{name}.ckpt").write_bytes(content)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / f"{name}.ckpt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "z.ckpt", {"a/b": np.ones(1)})


def test_check_gradient_detects_wrong_gradient(rng: np.random.Generator):
    x = rng.standard_normal(5)
    good = check_gradient("square", lambda v: jnp.sum(v**2), x, rng)
    assert good.passed and good.coords == 5

    @jax.custom_vjp
    def wrong(x):
        return jnp.sum(x**2)

    wrong.defvjp(lambda x: (wrong(x), x), lambda x, g: (g * x,))
    bad = check_gradient("wrong", wrong, rng.standard_normal(5) + 2.0, rng)
    assert not bad.passed


def test_layer_gradients():
    results = layer_checks(seed=1)
    names = {r.name for r in results}
    assert {"conv1d", "lws_conv", "gln", "concat", "split"} <= names
    for r in results:
        assert r.passed, f"{r.name}: relative error {r.max_rel_error:.2e}"
