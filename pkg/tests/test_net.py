import math

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import assert_rel_close, fd_first, fd_param_grad, fd_second, fd_second_plain
from resgrad import net as dn


def test_init_deterministic():
    a = dn.init_mlp([2, 4, 1], "tanh", seed=7)
    b = dn.init_mlp([2, 4, 1], "tanh", seed=7)
    for wa, wb in zip(a.weights, b.weights):
        assert (np.asarray(wa) == np.asarray(wb)).all()
    for ba, bb in zip(a.biases, b.biases):
        assert (np.asarray(ba) == np.asarray(bb)).all()


def test_init_paper_architectures():
    deep = dn.init_mlp([3] + [128] * 16 + [1], "silu", seed=0)
    assert deep.weights[0].shape == (128, 3)
    assert all(w.shape == (128, 128) for w in deep.weights[1:-1])
    assert deep.weights[-1].shape == (1, 128)

    wide = dn.init_mlp([2] + [96] * 6 + [1], "tanh", seed=1)
    assert len(wide.weights) == 7
    assert wide.layer_sizes == (2, 96, 96, 96, 96, 96, 96, 1)


def test_init_rejects_bad_shapes():
    with pytest.raises(ValueError):
        dn.init_mlp([2, 4, 2], "tanh", seed=0)
    with pytest.raises(ValueError):
        dn.init_mlp([2, 1], "tanh", seed=0)
    with pytest.raises(ValueError):
        dn.init_mlp([2, 4, 1], "relu", seed=0)


def test_zero_network_evaluates_to_zero():
    network = dn.init_mlp([2, 4, 1], "tanh", seed=3)
    zeroed = dn.unflatten_params(network, np.zeros(network.n_params))
    assert dn.evaluate(zeroed, [0.3, -1.2]) == 0.0
    assert dn.evaluate(zeroed, [5.0, 5.0]) == 0.0


def test_single_hidden_unit_hand_evaluation():
    network = dn.init_mlp([2, 1, 1], "tanh", seed=0)
    flat = np.array([2.0, 3.0, 1.0, 0.5, -0.25])  # W1=(2,3), b1=1, W2=0.5, b2=-0.25
    network = dn.unflatten_params(network, flat)
    x, y = 0.07, -0.04
    expected = 0.5 * math.tanh(2 * x + 3 * y + 1) - 0.25
    assert dn.evaluate(network, [x, y]) == pytest.approx(expected, rel=1e-15)


def test_evaluate_is_pure(small_net):
    x = [0.4, 0.9]
    assert dn.evaluate(small_net, x) == dn.evaluate(small_net, x)


def test_evaluate_batch_matches_pointwise(small_net):
    xs = np.random.default_rng(5).uniform(-1, 1, (7, 2))
    batch = dn.evaluate_batch(small_net, xs)
    assert batch.shape == (7,)
    for x, v in zip(xs, batch):
        assert dn.evaluate(small_net, x) == pytest.approx(float(v), rel=1e-14)
    with pytest.raises(ValueError):
        dn.evaluate_batch(small_net, np.zeros((3, 5)))


def test_evaluate_dimension_mismatch(small_net):
    with pytest.raises(ValueError):
        dn.evaluate(small_net, [1.0, 2.0, 3.0])


def test_bundle_contains_requested_entries(small_net):
    bundle = dn.input_derivatives(small_net, [0.2, 0.3], second_dirs=(1,))
    assert set(bundle.second) == {1}
    assert dn.input_derivatives(small_net, [0.2, 0.3]).second == {}


def test_quadratic_like_construction_matches_fd():
    # silu(x) + silu(-x) = x tanh(x/2), curvature ~1 near 0; the content of
    # the check is agreement with the finite-difference oracle.
    network = dn.init_mlp([1, 2, 1], "silu", seed=0)
    flat = np.array([1.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.0])
    network = dn.unflatten_params(network, flat)
    f = lambda x: dn.evaluate(network, x)
    bundle = dn.input_derivatives(network, [0.05], second_dirs=(0,))
    assert_rel_close(bundle.second[0], fd_second_plain(f, [0.05], 0), rtol=1e-6)
    assert bundle.second[0] == pytest.approx(1.0, abs=0.01)


def test_constant_network_derivatives():
    network = dn.init_mlp([2, 4, 1], "tanh", seed=5)
    flat = np.zeros(network.n_params)
    flat[-1] = 3.7  # output bias only
    network = dn.unflatten_params(network, flat)
    bundle = dn.input_derivatives(network, [0.1, 0.9], second_dirs=(0, 1))
    assert bundle.value == 3.7
    assert np.all(bundle.grad == 0.0)
    assert bundle.second[0] == 0.0 and bundle.second[1] == 0.0


def test_random_net_bundle_vs_fd_oracle(small_net):
    rng = np.random.default_rng(2)
    f = lambda x: dn.evaluate(small_net, x)
    for _ in range(10):
        x = rng.uniform(-1.0, 1.0, 2)
        bundle = dn.input_derivatives(small_net, x, second_dirs=(0, 1))
        assert_rel_close(bundle.value, f(x), rtol=1e-12)
        assert_rel_close(bundle.grad, [fd_first(f, x, i) for i in range(2)], rtol=1e-6)
        assert_rel_close(
            [bundle.second[0], bundle.second[1]],
            [fd_second(f, x, 0), fd_second(f, x, 1)],
            rtol=1e-6,
        )


def test_parameter_gradient_zero_loss(small_net):
    value, grad = dn.parameter_gradient(small_net, lambda p: 0.0 * dn.apply(p, jnp.zeros(2)))
    assert value == 0.0
    assert np.all(grad == 0.0)


def test_parameter_gradient_value_loss_vs_fd(small_net):
    pts = jnp.asarray(np.random.default_rng(0).uniform(-1, 1, (5, 2)))
    loss = lambda p: jnp.mean(jax.vmap(lambda q: dn.apply(p, q))(pts) ** 2)
    value, grad = dn.parameter_gradient(small_net, loss)
    assert value > 0
    assert_rel_close(grad, fd_param_grad(loss, small_net), rtol=1e-5, floor_frac=1e-4)


def test_parameter_gradient_second_derivative_loss_vs_fd():
    network = dn.init_mlp([2, 8, 8, 1], "silu", seed=4)
    pts = jnp.asarray(np.random.default_rng(1).uniform(-1, 1, (4, 2)))

    def loss(p):
        lap = dn.laplacian_fn(lambda q: dn.apply(p, q), 2)
        return jnp.mean(jax.vmap(lap)(pts) ** 2)

    value, grad = dn.parameter_gradient(network, loss)
    assert value > 0
    assert_rel_close(grad, fd_param_grad(loss, network), rtol=1e-5, floor_frac=1e-4)


def test_parameter_gradient_flags_offending_term(small_net):
    terms = {
        "fine": lambda p: jnp.mean(dn.apply(p, jnp.ones(2)) ** 2),
        "broken": lambda p: dn.apply(p, jnp.ones(2)) / 0.0,
    }
    with pytest.raises(dn.NonFiniteLossError) as err:
        dn.parameter_gradient(small_net, terms)
    assert "broken" in str(err.value)


def test_final_layer_scaling_scales_derivatives(small_net):
    alpha = 2.5
    scaled_weights = list(small_net.weights)
    scaled_weights[-1] = scaled_weights[-1] * alpha
    scaled_biases = list(small_net.biases)
    scaled_biases[-1] = scaled_biases[-1] * alpha
    scaled = dn.NetworkParams(
        small_net.layer_sizes, tuple(scaled_weights), tuple(scaled_biases), small_net.activation
    )
    x = [0.3, -0.6]
    b0 = dn.input_derivatives(small_net, x, second_dirs=(0, 1))
    b1 = dn.input_derivatives(scaled, x, second_dirs=(0, 1))
    assert b1.value == pytest.approx(alpha * b0.value, rel=1e-12)
    assert np.allclose(b1.grad, alpha * b0.grad, rtol=1e-12)
    assert b1.second[0] == pytest.approx(alpha * b0.second[0], rel=1e-12)


@settings(max_examples=12, deadline=None)
@given(
    n_hidden=st.integers(1, 3),
    width=st.integers(2, 16),
    dim=st.integers(1, 3),
    activation=st.sampled_from(["tanh", "silu"]),
    seed=st.integers(0, 2**31),
    data=st.data(),
)
def test_derivative_bundle_property(n_hidden, width, dim, activation, seed, data):
    network = dn.init_mlp([dim] + [width] * n_hidden + [1], activation, seed)
    x = np.array(
        data.draw(st.lists(st.floats(-1, 1, width=32), min_size=dim, max_size=dim))
    )
    f = lambda p: dn.evaluate(network, p)
    bundle = dn.input_derivatives(network, x, second_dirs=tuple(range(dim)))
    assert_rel_close(bundle.grad, [fd_first(f, x, i) for i in range(dim)], rtol=1e-6)
    assert_rel_close(
        [bundle.second[i] for i in range(dim)],
        [fd_second(f, x, i) for i in range(dim)],
        rtol=1e-6,
    )


def test_checkpoint_roundtrip(tmp_path, small_net):
    path = tmp_path / "net.ckpt"
    dn.save_checkpoint(small_net, path)
    loaded = dn.load_checkpoint(path)
    assert loaded.layer_sizes == small_net.layer_sizes
    assert loaded.activation == small_net.activation
    assert (dn.flatten_params(loaded) == dn.flatten_params(small_net)).all()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(ValueError):
        dn.load_checkpoint(path)
