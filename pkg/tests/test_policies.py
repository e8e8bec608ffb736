import math

import numpy as np
import pytest
from scipy.stats import norm

from flowedit import autograd as ag
from flowedit import nn
from flowedit.policies import (
    ChunkSpec,
    EditPolicy,
    FlowPolicy,
    Temperature,
    cfm_loss,
    edit_policy_loss,
    edit_sample_traced,
    sample_base_chunks,
    sample_edit,
    temperature_loss,
)
from flowedit.rng import substream


def make_spec(h=4, c=2, a=2):
    return ChunkSpec.symmetric(horizon=h, execute=c, action_dim=a)


class TestChunkSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            ChunkSpec.symmetric(horizon=2, execute=3, action_dim=1)
        spec = make_spec()
        assert spec.chunk_dim == 8
        assert spec.executed_dim == 4

    def test_executed_slice(self):
        spec = make_spec(h=3, c=2, a=2)
        chunk = np.arange(6.0)
        np.testing.assert_array_equal(spec.executed_slice(chunk), np.arange(4.0))


class TestCfmLoss:
    def test_perfect_velocity_gives_zero(self):
        spec = make_spec()
        rng = substream(1, "cfm")
        s = rng.standard_normal((3, 5))
        a = rng.uniform(-1, 1, (3, spec.chunk_dim))
        z0 = rng.standard_normal((3, spec.chunk_dim))
        tau = rng.uniform(0, 1, 3)

        # A "network" that outputs exactly a - z0: impossible as an MLP of
        # the inputs in general, so check via the loss formula directly
        # with a zero net and z0 == a (target velocity zero).
        flow = FlowPolicy.init(rng, spec, obs_dim=5, hidden=(8,))
        for layer in flow.net.layers:
            layer.w = np.zeros_like(layer.w)
            layer.b = np.zeros_like(layer.b)
        loss = cfm_loss(flow.net, s, a, a.copy(), tau)
        assert float(loss) <= 1e-24

    def test_matches_independent_formula(self):
        spec = make_spec()
        rng = substream(2, "cfm-oracle")
        flow = FlowPolicy.init(rng, spec, obs_dim=3, hidden=(16, 16))
        s = rng.standard_normal((4, 3))
        a = rng.uniform(-1, 1, (4, spec.chunk_dim))
        z0 = rng.standard_normal((4, spec.chunk_dim))
        tau = rng.uniform(0, 1, 4)

        got = float(cfm_loss(flow.net, s, a, z0, tau))

        # Independent reimplementation with naive loops.
        total = 0.0
        for i in range(4):
            z_tau = (1 - tau[i]) * z0[i] + tau[i] * a[i]
            x = np.concatenate([z_tau, [tau[i]], s[i]])
            h = x
            for layer, act in zip(flow.net.layers, flow.net.activations):
                h = h @ layer.w + layer.b
                if act == "relu":
                    h = np.maximum(h, 0)
            total += float(np.sum((h - (a[i] - z0[i])) ** 2))
        want = total / 4
        assert abs(got - want) <= 1e-12


class TestFlowSampling:
    def test_same_seed_identical(self):
        spec = make_spec()
        rng = substream(3, "flow")
        flow = FlowPolicy.init(rng, spec, obs_dim=3)
        s = np.array([0.1, -0.2, 0.3])
        a = sample_base_chunks(flow, s, 5, seed=42)
        b = sample_base_chunks(flow, s, 5, seed=42)
        assert a.tobytes() == b.tobytes()
        c = sample_base_chunks(flow, s, 5, seed=43)
        assert a.tobytes() != c.tobytes()

    def test_single_step_zero_net_is_clipped_noise(self):
        spec = make_spec()
        rng = substream(4, "flow-zero")
        flow = FlowPolicy.init(rng, spec, obs_dim=2, euler_steps=1)
        for layer in flow.net.layers:
            layer.w = np.zeros_like(layer.w)
            layer.b = np.zeros_like(layer.b)
        seed_rng = substream(99, "flow-sample")
        z0 = seed_rng.standard_normal((1 * 3, spec.chunk_dim))
        got = sample_base_chunks(flow, np.zeros(2), 3, seed=substream(99, "flow-sample"))
        np.testing.assert_array_equal(got, np.clip(z0, -1, 1))

    def test_trained_point_mass_recovers_target(self):
        # Train-to-convergence oracle on a synthetic one-point distribution.
        spec = ChunkSpec.symmetric(horizon=1, execute=1, action_dim=2)
        rng = substream(5, "flow-train")
        flow = FlowPolicy.init(rng, spec, obs_dim=1, hidden=(32, 32))
        target = np.array([0.4, -0.3])
        s = np.zeros((64, 1))
        arrays = nn.mlp_arrays(flow.net)
        state = nn.adam_init(arrays)
        for step in range(800):
            z0 = rng.standard_normal((64, 2))
            tau = rng.uniform(0, 1, 64)
            a = np.tile(target, (64, 1))

            traced, leaves = nn.trace_mlp(flow.net)
            loss = cfm_loss(traced, s, a, z0, tau)
            grads = nn.collect_grads(ag.backward(loss), leaves)
            arrays, state = nn.adam_step(state, nn.mlp_arrays(flow.net), grads, 1e-3)
            flow.net = nn.mlp_from_arrays(flow.net, arrays)

        samples = sample_base_chunks(flow, np.zeros(1), 256, seed=7)
        assert np.max(np.abs(samples.mean(axis=0) - target)) < 0.05


class TestEditPolicy:
    def test_bounds_strict(self):
        spec = make_spec()
        rng = substream(6, "edit")
        for beta in (0.05, 0.1, 0.2):
            edit = EditPolicy.init(rng, spec, obs_dim=3, beta=beta, hidden=(16,))
            s = rng.standard_normal((200, 3))
            base = rng.uniform(-1, 1, (200, spec.executed_dim))
            edits, _ = sample_edit(edit, s, base, seed=substream(7, "edit-sample"))
            assert np.all(np.abs(edits) < beta)

    def test_tiny_std_gives_near_zero_edit(self):
        spec = make_spec()
        rng = substream(8, "edit-small")
        edit = EditPolicy.init(rng, spec, obs_dim=2, beta=0.2, hidden=(8,))
        # Force mean 0 and log-std far below the clamp floor.
        last = edit.net.layers[-1]
        last.w = np.zeros_like(last.w)
        last.b = np.concatenate([np.zeros(spec.executed_dim), np.full(spec.executed_dim, -20.0)])
        edits, _ = sample_edit(edit, np.zeros((50, 2)), np.zeros((50, spec.executed_dim)), seed=9)
        assert np.max(np.abs(edits)) < 0.01

    def test_log_prob_matches_quadrature_oracle(self):
        # 1-D case: density of beta*tanh(mean + std*xi) via numerical
        # differentiation of the exact CDF.
        spec = ChunkSpec.symmetric(horizon=1, execute=1, action_dim=1)
        rng = substream(10, "edit-quad")
        beta = 0.2
        edit = EditPolicy.init(rng, spec, obs_dim=1, beta=beta, hidden=(8,))
        s = np.zeros((1, 1))
        base = np.zeros((1, 1))

        edits, log_prob = sample_edit(edit, s, base, seed=11)
        e = float(edits[0, 0])

        # Oracle: P(E <= e) = Phi((atanh(e/beta) - mean) / std).
        out = nn.forward_mlp(edit.net, np.concatenate([s, base], axis=-1))
        mean = float(out[0, 0])
        std = float(np.exp(np.clip(out[0, 1], -5, 2)))

        def cdf(x):
            return norm.cdf((np.arctanh(x / beta) - mean) / std)

        h = 1e-6
        density = (cdf(e + h) - cdf(e - h)) / (2 * h)
        assert abs(float(log_prob[0]) - math.log(density)) <= 1e-3

    def test_edit_loss_constant_q_has_zero_q_gradient(self):
        spec = make_spec()
        rng = substream(12, "edit-loss")
        edit = EditPolicy.init(rng, spec, obs_dim=2, beta=0.1, hidden=(8,))
        s = rng.standard_normal((4, 2))
        base = rng.uniform(-1, 1, (4, spec.executed_dim))
        noise = rng.standard_normal((4, spec.executed_dim))

        def constant_q(s_in, chunk_node):
            return ag.mul(ag.sum_(ag.mul(chunk_node, 0.0), axis=-1), 1.0)

        traced, leaves = nn.trace_mlp(edit.net)
        loss, _ = edit_policy_loss(
            EditPolicy(spec=spec, net=traced, beta=0.1), constant_q, s, base, alpha=0.0, noise=noise
        )
        grads = nn.collect_grads(ag.backward(loss), leaves)
        for g in grads:
            np.testing.assert_allclose(g, 0.0, atol=1e-18)

    def test_edit_loss_pushes_mean_toward_q_peak(self):
        # Q(s, a) = -||a||^2 peaks at 0: the loss gradient on the mean
        # should point away from a positive mean (1-D analytic sign check).
        spec = ChunkSpec.symmetric(horizon=1, execute=1, action_dim=1)
        rng = substream(13, "edit-sign")
        edit = EditPolicy.init(rng, spec, obs_dim=1, beta=0.05, hidden=(8,))
        s = np.zeros((256, 1))
        base = np.full((256, 1), 0.5)  # edited action = 0.5 + edit, so Q wants edit < 0
        noise = substream(14, "noise").standard_normal((256, 1))

        def q_fn(s_in, chunk_node):
            return ag.neg(ag.sum_(ag.square(chunk_node), axis=-1))

        traced, leaves = nn.trace_mlp(edit.net)
        loss, _ = edit_policy_loss(
            EditPolicy(spec=spec, net=traced, beta=0.05), q_fn, s, base, alpha=0.0, noise=noise
        )
        grads = nn.collect_grads(ag.backward(loss), leaves)
        # Gradient on the final bias of the mean head: positive gradient
        # means descent lowers the mean, i.e. pushes the edit negative.
        bias_grad = grads[-1][: spec.executed_dim]
        assert bias_grad[0] > 0

    def test_entropy_term_equals_alpha_times_mean_log_prob(self):
        spec = make_spec()
        rng = substream(15, "edit-ent")
        edit = EditPolicy.init(rng, spec, obs_dim=2, beta=0.1, hidden=(8,))
        s = rng.standard_normal((16, 2))
        base = rng.uniform(-1, 1, (16, spec.executed_dim))
        noise = rng.standard_normal((16, spec.executed_dim))

        def zero_q(s_in, chunk_node):
            return ag.sum_(ag.mul(chunk_node, 0.0), axis=-1)

        alpha = 0.7
        loss, log_probs = edit_policy_loss(edit, zero_q, s, base, alpha=alpha, noise=noise)
        assert abs(float(loss) - alpha * float(np.mean(log_probs))) <= 1e-12


class TestTemperature:
    def test_initial_alpha_is_one(self):
        temp = Temperature.init(executed_dim=4, beta=0.1)
        assert temp.alpha == pytest.approx(1.0)

    def test_stationary_point(self):
        temp = Temperature.init(executed_dim=2, beta=0.1)
        log_alpha = ag.leaf(temp.log_alpha)
        log_probs = np.full(8, -temp.target_entropy)
        loss = temperature_loss(log_alpha, log_probs, temp.target_entropy)
        grads = ag.backward(loss)
        assert abs(ag.grad_for(grads, log_alpha)) <= 1e-12

    def test_low_entropy_increases_alpha(self):
        # Entropy below target <=> mean log-prob above -target: descent on
        # the loss must raise log-alpha.
        temp = Temperature.init(executed_dim=2, beta=0.1)
        log_alpha = ag.leaf(temp.log_alpha)
        log_probs = np.full(8, -temp.target_entropy + 3.0)
        loss = temperature_loss(log_alpha, log_probs, temp.target_entropy)
        g = ag.grad_for(ag.backward(loss), log_alpha)
        assert g < 0  # descent direction increases log-alpha


class TestEditBoundProperty:
    @pytest.mark.parametrize("beta", [0.05, 0.1, 0.2])
    def test_hundred_thousand_samples_zero_violations(self, beta):
        spec = ChunkSpec.symmetric(horizon=2, execute=2, action_dim=2)
        rng = substream(20, "edit-bound", str(beta))
        edit = EditPolicy.init(rng, spec, obs_dim=2, beta=beta, hidden=(8,))
        # Push log-std to the clamp ceiling to stress the tails.
        edit.net.layers[-1].b[spec.executed_dim :] = 10.0
        n = 25_000  # x4 coordinates = 1e5 edit coordinates
        s = rng.standard_normal((n, 2))
        base = rng.uniform(-1, 1, (n, spec.executed_dim))
        edits, _ = sample_edit(edit, s, base, seed=substream(21, "bound", str(beta)))
        assert edits.size == 100_000
        assert int(np.sum(np.abs(edits) >= beta)) == 0
