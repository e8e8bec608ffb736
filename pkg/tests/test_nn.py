import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowedit import autograd as ag
from flowedit import nn
from flowedit.nn import (
    AdamState,
    Layer,
    MlpParams,
    NonFiniteError,
    ShapeError,
    adam_init,
    adam_step,
    forward_mlp,
    grad,
    init_mlp,
    layer_norm,
    mlp_arrays,
    polyak_blend,
)
from flowedit.rng import substream


def naive_mlp(params, x):
    """Independent forward-pass oracle: plain loops over layers."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    for layer, act in zip(params.layers, params.activations):
        z = h @ layer.w + layer.b
        if layer.ln_gain is not None:
            mu = z.mean(axis=-1, keepdims=True)
            var = ((z - mu) ** 2).mean(axis=-1, keepdims=True)
            z = (z - mu) / np.sqrt(var + 1e-5) * layer.ln_gain + layer.ln_offset
        if act == "relu":
            h = np.maximum(z, 0.0)
        elif act == "tanh":
            h = np.tanh(z)
        else:
            h = z
    return h


class TestForwardMlp:
    def test_zero_weights_returns_bias(self):
        b = np.array([0.5, -1.5, 2.0])
        params = MlpParams(
            layers=[Layer(w=np.zeros((4, 3)), b=b)], activations=("linear",)
        )
        out = forward_mlp(params, np.array([3.0, -2.0, 1.0, 7.0]))
        np.testing.assert_array_equal(out, b)

    def test_identity_single_layer(self):
        params = MlpParams(
            layers=[Layer(w=np.eye(2), b=np.zeros(2))], activations=("linear",)
        )
        out = forward_mlp(params, np.array([1.0, 2.0]))
        np.testing.assert_array_equal(out, np.array([1.0, 2.0]))

    def test_random_two_layer_vs_naive_oracle(self):
        rng = substream(11, "fwd-oracle")
        params = init_mlp(rng, [5, 16, 3], activation="tanh")
        x = rng.standard_normal((7, 5))
        got = forward_mlp(params, x)
        want = naive_mlp(params, x)
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_layernorm_net_vs_naive_oracle(self):
        rng = substream(12, "fwd-ln-oracle")
        params = init_mlp(rng, [6, 8, 8, 1], activation="relu", layer_norm=True)
        x = rng.standard_normal((4, 6))
        got = forward_mlp(params, x)
        want = naive_mlp(params, x)
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_pure_function_bit_identical(self):
        rng = substream(13, "purity")
        params = init_mlp(rng, [3, 8, 2])
        x = rng.standard_normal((5, 3))
        a = forward_mlp(params, x)
        b = forward_mlp(params, x)
        assert a.tobytes() == b.tobytes()

    def test_shape_mismatch_names_layer(self):
        rng = substream(14, "shape")
        params = init_mlp(rng, [3, 4, 2])
        with pytest.raises(ShapeError, match="layer 0"):
            forward_mlp(params, np.zeros((2, 5)))


class TestGrad:
    def test_bias_gradient_all_ones_for_sum_loss(self):
        params = MlpParams(
            layers=[Layer(w=np.zeros((3, 4)), b=np.zeros(4))], activations=("linear",)
        )

        def loss_fn(traced):
            return ag.sum_(forward_mlp(traced, np.zeros((1, 3))))

        grads = grad(loss_fn, params)
        np.testing.assert_array_equal(grads[1], np.ones(4))

    def test_constant_loss_gives_zero_grads(self):
        rng = substream(21, "zero-grad")
        params = init_mlp(rng, [2, 5, 1])

        def loss_fn(traced):
            out = forward_mlp(traced, np.ones((1, 2)))
            return ag.sum_(ag.mul(out, 0.0))

        for g in grad(loss_fn, params):
            np.testing.assert_array_equal(g, np.zeros_like(g))

    @pytest.mark.parametrize("layer_norm_on", [False, True])
    def test_quadratic_loss_vs_finite_differences(self, layer_norm_on):
        rng = substream(22, "fd", int(layer_norm_on))
        params = init_mlp(rng, [4, 8, 8, 2], activation="tanh", layer_norm=layer_norm_on)
        x = rng.standard_normal((3, 4))

        def traced_loss(traced):
            out = forward_mlp(traced, x)
            return ag.sum_(ag.square(out))

        def raw_loss(arrays):
            p = nn.mlp_from_arrays(params, arrays)
            out = forward_mlp(p, x)
            return np.sum(out ** 2)

        grads = grad(traced_loss, params)
        arrays = mlp_arrays(params)
        for trial in range(5):
            direction = [substream(23, "dir", trial, i).standard_normal(a.shape) for i, a in enumerate(arrays)]
            analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, direction))
            numeric = nn.directional_derivative_fd(raw_loss, arrays, direction, h=1e-5)
            assert abs(analytic - numeric) <= 1e-4 * max(1.0, abs(numeric))

    def test_non_finite_loss_raises(self):
        params = MlpParams(
            layers=[Layer(w=np.full((1, 1), 1e308), b=np.zeros(1))],
            activations=("linear",),
        )

        def loss_fn(traced):
            out = forward_mlp(traced, np.full((1, 1), 1e308))
            return ag.sum_(out)

        with pytest.raises(NonFiniteError):
            grad(loss_fn, params)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        params = [np.array([1.0, -2.0, 3.0])]
        grads = [np.array([0.3, -1.7, 0.1])]
        lr = 3e-4
        new, state = adam_step(adam_init(params), params, grads, lr)
        delta = np.abs(new[0] - params[0])
        assert np.all(delta <= lr + 1e-15)
        assert np.all(delta >= lr * (1 - 1e-6))
        assert state.step == 1

    def test_zero_gradient_leaves_params_unchanged(self):
        params = [np.array([[1.0, 2.0]])]
        new, _ = adam_step(adam_init(params), params, [np.zeros((1, 2))], 0.1)
        np.testing.assert_array_equal(new[0], params[0])

    def test_converges_on_quadratic(self):
        # Oracle: the same scalar recursion run independently.
        def oracle(theta0, lr, steps):
            m = v = 0.0
            t = 0
            theta = theta0
            for _ in range(steps):
                g = 2.0 * theta
                t += 1
                m = 0.9 * m + 0.1 * g
                v = 0.999 * v + 0.001 * g * g
                theta -= lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            return theta

        expected = oracle(1.0, 0.1, 100)
        params = [np.array([1.0])]
        state = adam_init(params)
        for _ in range(100):
            grads = [2.0 * params[0]]
            params, state = adam_step(state, params, grads, 0.1)
        assert abs(params[0][0] - expected) <= 1e-12
        assert abs(params[0][0]) < 0.05

    def test_non_finite_grads_rejected_state_unchanged(self):
        params = [np.array([1.0])]
        state = adam_init(params)
        with pytest.raises(NonFiniteError):
            adam_step(state, params, [np.array([np.nan])], 0.1)
        assert state.step == 0
        np.testing.assert_array_equal(state.m[0], np.zeros(1))


class TestLayerNorm:
    def test_constant_vector_maps_to_zero(self):
        x = np.full((1, 8), 3.7)
        out = layer_norm(x, np.ones(8), np.zeros(8))
        assert np.max(np.abs(out)) < 1e-6

    def test_already_normalized_passthrough(self):
        x = np.array([[1.0, -1.0]])
        out = layer_norm(x, np.ones(2), np.zeros(2))
        np.testing.assert_allclose(out, x, atol=1e-4)

    def test_random_vector_statistics(self):
        rng = substream(31, "ln-stats")
        x = rng.standard_normal((1, 256)) * 4.2 + 1.3
        out = layer_norm(x, np.ones(256), np.zeros(256))
        assert abs(out.mean()) <= 1e-9
        assert abs(out.var() - 1.0) <= 1e-6


class TestPolyak:
    def test_tau_one_copies_online(self):
        t, o = np.array([1.0, 2.0]), np.array([-3.0, 4.0])
        np.testing.assert_array_equal(polyak_blend(t, o, 1.0), o)

    def test_tau_zero_keeps_target(self):
        t, o = np.array([1.0, 2.0]), np.array([-3.0, 4.0])
        np.testing.assert_array_equal(polyak_blend(t, o, 0.0), t)

    def test_critic_rate_value(self):
        out = polyak_blend(np.array(0.0), np.array(1.0), 5e-3)
        assert float(out) == 0.005

    @given(
        st.floats(min_value=0.0, max_value=1.0),
        st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=8),
        st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=8),
    )
    def test_affine_per_element(self, tau, target, online):
        n = min(len(target), len(online))
        t = np.array(target[:n])
        o = np.array(online[:n])
        out = polyak_blend(t, o, tau)
        np.testing.assert_array_equal(out, tau * o + (1 - tau) * t)

    def test_bad_tau_rejected(self):
        with pytest.raises(ValueError):
            polyak_blend(np.zeros(2), np.zeros(2), 1.5)


class TestAutogradOps:
    def test_broadcast_add_backward(self):
        a = ag.leaf(np.zeros((3, 4)))
        b = ag.leaf(np.zeros(4))
        out = ag.sum_(ag.add(a, b))
        grads = ag.backward(out)
        np.testing.assert_array_equal(ag.grad_for(grads, b), np.full(4, 3.0))

    def test_concat_and_slice_roundtrip_gradient(self):
        a = ag.leaf(np.ones((2, 3)))
        b = ag.leaf(np.ones((2, 2)))
        joined = ag.concat([a, b], axis=-1)
        part = ag.slice_last(joined, 3, 5)
        grads = ag.backward(ag.sum_(part))
        np.testing.assert_array_equal(ag.grad_for(grads, a), np.zeros((2, 3)))
        np.testing.assert_array_equal(ag.grad_for(grads, b), np.ones((2, 2)))

    def test_clip_gradient_mask(self):
        x = ag.leaf(np.array([-2.0, 0.5, 3.0]))
        grads = ag.backward(ag.sum_(ag.clip(x, -1.0, 1.0)))
        np.testing.assert_array_equal(ag.grad_for(grads, x), np.array([0.0, 1.0, 0.0]))

    def test_diamond_graph_accumulates(self):
        x = ag.leaf(np.array([2.0]))
        y = ag.add(ag.mul(x, 3.0), ag.square(x))  # 3x + x^2 -> grad 3 + 2x = 7
        grads = ag.backward(ag.sum_(y))
        np.testing.assert_array_equal(ag.grad_for(grads, x), np.array([7.0]))
