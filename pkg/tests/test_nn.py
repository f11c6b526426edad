"""Dense-network engine: initialization, passes, optimizer, serialization."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference_errors, iter_grads, iter_params, ref_forward
from ganfolio.errors import CacheError, NumericError, ParseError, ShapeError
from ganfolio.nn import (
    AdamState,
    DenseLayer,
    Head,
    Network,
    adam_step,
    backward,
    forward,
    gradient_check,
    load_network,
    network_from_json,
    network_to_json,
    save_network,
    softmax,
    xavier_init,
)


class TestXavierInit:
    def test_unit_fan_bound_and_zero_bias(self):
        layer = xavier_init(1, 1, rng=0)
        assert abs(layer.weight[0, 0]) <= math.sqrt(3.0)
        assert layer.bias[0] == 0.0

    def test_bound_for_wide_layer(self):
        bound = math.sqrt(6.0 / (200 + 1024))
        assert bound == pytest.approx(0.0700, abs=2e-4)
        layer = xavier_init(200, 1024, rng=3)
        assert layer.weight.shape == (1024, 200)
        assert np.abs(layer.weight).max() <= bound
        # uniform draws should come close to the bound
        assert np.abs(layer.weight).max() > 0.95 * bound

    def test_deterministic_per_seed(self):
        a = xavier_init(7, 5, rng=42)
        b = xavier_init(7, 5, rng=42)
        c = xavier_init(7, 5, rng=43)
        assert np.array_equal(a.weight, b.weight)
        assert not np.array_equal(a.weight, c.weight)

    def test_rejects_bad_fans(self):
        with pytest.raises(ShapeError):
            xavier_init(0, 3, rng=0)


class TestForward:
    def test_zero_weight_identity_returns_bias(self):
        net = Network([DenseLayer(np.zeros((3, 2)), np.array([1.0, -2.0, 0.5]))],
                      ["identity"])
        out, _ = forward(net, np.zeros((4, 2)))
        assert np.array_equal(out["out"], np.tile([1.0, -2.0, 0.5], (4, 1)))

    def test_single_relu_unit(self):
        net = Network([DenseLayer(np.array([[2.0]]), np.array([1.0]))], ["relu"])
        out, _ = forward(net, np.array([3.0]))
        assert out["out"][0, 0] == 7.0

    def test_softmax_of_zero_logits_is_uniform(self):
        net = Network([DenseLayer(np.zeros((3, 2)), np.zeros(3))], ["softmax"])
        out, _ = forward(net, np.ones((1, 2)))
        np.testing.assert_allclose(out["out"][0], [1 / 3] * 3, atol=1e-12)

    def test_shape_mismatch_raises(self):
        net = Network([DenseLayer(np.zeros((2, 3)), np.zeros(2))], ["identity"])
        with pytest.raises(ShapeError):
            forward(net, np.zeros((1, 4)))

    def test_heads_all_returned(self):
        net = Network(
            [DenseLayer(np.eye(2), np.zeros(2))],
            ["identity"],
            heads={
                "a": Head(DenseLayer(np.ones((1, 2)), np.zeros(1))),
                "b": Head(DenseLayer(np.eye(2), np.ones(2))),
            },
        )
        out, _ = forward(net, np.array([[2.0, 3.0]]))
        assert out["a"][0, 0] == 5.0
        assert np.array_equal(out["b"], [[3.0, 4.0]])

    @given(st.lists(st.floats(min_value=-700, max_value=700), min_size=2, max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_softmax_is_probability_vector(self, logits):
        probs = softmax(np.array([logits]))
        assert np.all(probs >= 0)
        assert abs(probs.sum() - 1.0) <= 1e-9

    def test_softmax_overflow_safe(self):
        probs = softmax(np.array([[1000.0, 0.0, -1000.0]]))
        assert np.isfinite(probs).all()
        assert probs[0, 0] == pytest.approx(1.0)


class TestNetworkValidation:
    def test_layers_must_compose(self):
        with pytest.raises(ShapeError):
            Network(
                [DenseLayer(np.zeros((2, 3)), np.zeros(2)),
                 DenseLayer(np.zeros((4, 3)), np.zeros(4))],
                ["relu", "identity"],
            )

    def test_softmax_only_final(self):
        with pytest.raises(ShapeError):
            Network(
                [DenseLayer(np.zeros((2, 2)), np.zeros(2)),
                 DenseLayer(np.zeros((2, 2)), np.zeros(2))],
                ["softmax", "identity"],
            )

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            DenseLayer(np.array([[np.inf]]), np.zeros(1))


class TestBackward:
    def test_zero_output_gradient_gives_zero_grads(self, rng):
        net = Network([DenseLayer(rng.standard_normal((3, 2)), rng.standard_normal(3))],
                      ["relu"])
        out, cache = forward(net, rng.standard_normal((5, 2)))
        grads = backward(net, cache, {"out": np.zeros_like(out["out"])})
        for g in iter_grads(grads, net):
            assert np.all(g == 0.0)

    def test_linear_squared_loss_matches_hand_gradient(self):
        # scalar layer, L = (w x + b - y)^2 -> dL/dw = 2 (pred - y) x
        w, b, x, y = 1.5, 0.25, 3.0, 2.0
        net = Network([DenseLayer(np.array([[w]]), np.array([b]))], ["identity"])
        out, cache = forward(net, np.array([[x]]))
        pred = out["out"][0, 0]
        grads = backward(net, cache, {"out": np.array([[2.0 * (pred - y)]])})
        assert grads.layers[0].weight[0, 0] == pytest.approx(2.0 * (pred - y) * x, rel=1e-12)
        assert grads.layers[0].bias[0] == pytest.approx(2.0 * (pred - y), rel=1e-12)

    def test_matches_central_differences_on_random_nets(self, rng):
        # squared-loss against fixed targets through relu stacks
        for trial in range(5):
            dims = [int(d) for d in rng.integers(2, 7, size=3)]
            net = Network(
                [DenseLayer(rng.standard_normal((dims[1], dims[0])) * 0.7,
                            rng.standard_normal(dims[1]) * 0.1),
                 DenseLayer(rng.standard_normal((dims[2], dims[1])) * 0.7,
                            rng.standard_normal(dims[2]) * 0.1)],
                ["relu", "identity"],
            )
            x = rng.uniform(-1, 1, size=(3, dims[0]))
            target = rng.standard_normal((3, dims[2]))

            def loss_value():
                y = ref_forward(net, x)["out"]
                return float(((y - target) ** 2).mean())

            out, cache = forward(net, x)
            grad_out = 2.0 * (out["out"] - target) / out["out"].size
            analytic = backward(net, cache, {"out": grad_out})
            err, checked = central_difference_errors(net, loss_value, analytic)
            assert checked > 0
            assert err < 1e-4, f"trial {trial}: max rel err {err}"

    def test_softmax_head_gradient_matches_differences(self, rng):
        net = Network(
            [DenseLayer(rng.standard_normal((4, 3)) * 0.5, np.zeros(4))],
            ["identity"],
            heads={"p": Head(DenseLayer(rng.standard_normal((3, 4)) * 0.5, np.zeros(3)),
                             "softmax")},
        )
        x = rng.uniform(-1, 1, size=(2, 3))
        target = np.array([[1.0, 0, 0], [0, 1.0, 0]])

        def loss_value():
            p = ref_forward(net, x)["p"]
            return float(((p - target) ** 2).sum())

        out, cache = forward(net, x)
        analytic = backward(net, cache, {"p": 2.0 * (out["p"] - target)})
        err, _ = central_difference_errors(net, loss_value, analytic)
        assert err < 1e-5

    def test_mismatched_cache_rejected(self, rng):
        net_a = Network([DenseLayer(rng.standard_normal((2, 2)), np.zeros(2))], ["relu"])
        net_b = Network([DenseLayer(rng.standard_normal((3, 2)), np.zeros(3))], ["relu"])
        _, cache = forward(net_a, np.zeros((1, 2)))
        with pytest.raises(CacheError):
            backward(net_b, cache, {"out": np.zeros((1, 3))})

    def test_unknown_head_gradient_rejected(self, rng):
        net = Network([DenseLayer(rng.standard_normal((2, 2)), np.zeros(2))], ["relu"])
        _, cache = forward(net, np.zeros((1, 2)))
        with pytest.raises(CacheError):
            backward(net, cache, {"nope": np.zeros((1, 2))})

    def test_relu_subgradient_zero_at_kink(self):
        net = Network([DenseLayer(np.array([[1.0]]), np.array([0.0]))], ["relu"])
        out, cache = forward(net, np.array([[0.0]]))   # pre-activation exactly 0
        grads = backward(net, cache, {"out": np.array([[1.0]])})
        assert grads.layers[0].bias[0] == 0.0


class TestAdam:
    def _scalar_net(self, value=0.0):
        return Network([DenseLayer(np.array([[value]]), np.array([0.0]))], ["identity"])

    def _grads_like(self, net, weight_grad, bias_grad=0.0):
        out, cache = forward(net, np.array([[1.0]]))
        g = backward(net, cache, {"out": np.zeros((1, 1))})
        g.layers[0].weight[0, 0] = weight_grad
        g.layers[0].bias[0] = bias_grad
        return g

    def test_zero_gradient_is_identity(self, rng):
        net = Network([DenseLayer(rng.standard_normal((3, 2)), rng.standard_normal(3))],
                      ["relu"])
        snapshot = net.layers[0].weight.copy()
        state = AdamState.for_network(net, 1e-3, 0.0, 0.9)
        out, cache = forward(net, rng.standard_normal((2, 2)))
        grads = backward(net, cache, {"out": np.zeros_like(out["out"])})
        adam_step(net, grads, state)
        assert np.array_equal(net.layers[0].weight, snapshot)
        assert state.step_count == 1

    def test_single_step_hand_trace(self):
        # p=0, g=1, b1=0, b2=0.9, lr=2e-5: m_hat=1, v_hat=1 -> p = -lr/(1+eps)
        net = self._scalar_net(0.0)
        state = AdamState.for_network(net, 2e-5, 0.0, 0.9, epsilon=1e-8)
        adam_step(net, self._grads_like(net, 1.0), state)
        expected = -2e-5 * 1.0 / (math.sqrt(1.0) + 1e-8)
        assert net.layers[0].weight[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_three_step_trace_matches_reference(self):
        # independent scalar re-implementation of bias-corrected updates
        lr, b1, b2, eps, g = 2e-5, 0.0, 0.9, 1e-8, 1.0
        p_ref, m, v = 0.0, 0.0, 0.0
        trace = []
        for t in range(1, 4):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p_ref -= lr * m_hat / (math.sqrt(v_hat) + eps)
            trace.append(p_ref)

        net = self._scalar_net(0.0)
        state = AdamState.for_network(net, lr, b1, b2, epsilon=eps)
        for t in range(3):
            adam_step(net, self._grads_like(net, g), state)
            assert net.layers[0].weight[0, 0] == pytest.approx(trace[t], abs=1e-12)
        assert state.step_count == 3
        assert state.first_moment.layers[0].weight[0, 0] == pytest.approx(m, abs=1e-15)
        assert state.second_moment.layers[0].weight[0, 0] == pytest.approx(v, abs=1e-15)

    def test_non_finite_gradient_identifies_layer(self):
        net = self._scalar_net(0.0)
        state = AdamState.for_network(net, 1e-3, 0.0, 0.9)
        bad = self._grads_like(net, np.nan)
        with pytest.raises(NumericError, match="layer 0 weight"):
            adam_step(net, bad, state)


class TestGradientCheck:
    def test_linear_squared_loss_is_tight(self, rng):
        net = Network([DenseLayer(rng.standard_normal((2, 3)) * 0.5, np.zeros(2))],
                      ["identity"])
        x = rng.uniform(-1, 1, size=(4, 3))
        target = rng.standard_normal((4, 2))

        def loss_fn(outputs):
            err = outputs["out"] - target
            return float((err ** 2).mean()), {"out": 2.0 * err / err.size}

        assert gradient_check(net, x, loss_fn) < 1e-6

    def test_relu_net_away_from_kinks(self, rng):
        net = Network(
            [DenseLayer(rng.standard_normal((4, 3)) * 0.8, rng.uniform(0.5, 1.0, 4)),
             DenseLayer(rng.standard_normal((2, 4)) * 0.8, np.zeros(2))],
            ["relu", "identity"],
        )
        x = rng.uniform(0.2, 1.0, size=(3, 3))

        def loss_fn(outputs):
            err = outputs["out"] - 0.5
            return float((err ** 2).mean()), {"out": 2.0 * err / err.size}

        assert gradient_check(net, x, loss_fn) < 1e-4

    def test_corrupted_gradient_is_detected(self, rng):
        net = Network([DenseLayer(rng.standard_normal((2, 3)) * 0.5, np.zeros(2))],
                      ["identity"])
        x = rng.uniform(-1, 1, size=(4, 3))

        def lying_loss_fn(outputs):
            err = outputs["out"] - 1.0
            # correct value, doubled gradient
            return float((err ** 2).mean()), {"out": 4.0 * err / err.size}

        assert gradient_check(net, x, lying_loss_fn) > 1e-4


class TestSerialization:
    def _random_net(self, rng):
        return Network(
            [xavier_init(4, 5, rng), xavier_init(5, 3, rng)],
            ["relu", "identity"],
            heads={
                "adv": Head(xavier_init(3, 1, rng), "identity"),
                "cls": Head(xavier_init(3, 4, rng), "identity"),
            },
        )

    def test_round_trip_bit_exact(self, rng, tmp_path):
        net = self._random_net(rng)
        path = tmp_path / "net.json"
        save_network(path, net)
        loaded = load_network(path)
        for (_, a), (_, b) in zip(iter_params(net), iter_params(loaded)):
            assert np.array_equal(a, b)
        assert loaded.activations == net.activations
        assert set(loaded.heads) == {"adv", "cls"}

    def test_format_version_present_and_checked(self, rng):
        payload = network_to_json(self._random_net(rng))
        assert payload["format_version"] == 1
        payload["format_version"] = 99
        with pytest.raises(ParseError):
            network_from_json(payload)

    def test_declared_dims_validated(self, rng):
        payload = network_to_json(self._random_net(rng))
        payload["layers"][0]["fan_in"] = 17
        with pytest.raises(ParseError):
            network_from_json(payload)

    def test_forward_deterministic_same_seed(self):
        a = xavier_init(6, 4, rng=9)
        b = xavier_init(6, 4, rng=9)
        net_a = Network([a], ["relu"])
        net_b = Network([b], ["relu"])
        x = np.linspace(-1, 1, 6).reshape(1, 6)
        out_a, _ = forward(net_a, x)
        out_b, _ = forward(net_b, x)
        assert np.array_equal(out_a["out"], out_b["out"])
