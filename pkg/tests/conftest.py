"""Shared helpers: reference (oracle) implementations and rigged networks.

The reference functions here are deliberately independent
re-implementations used to cross-check the package: plain loops, no
reuse of the code under test.
"""

import numpy as np
import pytest

from ganfolio.nn import DenseLayer, Head, Network


def ref_forward(net: Network, x: np.ndarray) -> dict:
    """Loop-based forward pass used as the finite-difference oracle."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    for layer, act in zip(net.layers, net.activations):
        h = h @ layer.weight.T + layer.bias
        if act == "relu":
            h = np.maximum(h, 0.0)
        elif act == "softmax":
            e = np.exp(h - h.max(axis=1, keepdims=True))
            h = e / e.sum(axis=1, keepdims=True)
    if not net.heads:
        return {"out": h}
    outs = {}
    for name, head in net.heads.items():
        y = h @ head.layer.weight.T + head.layer.bias
        if head.activation == "relu":
            y = np.maximum(y, 0.0)
        elif head.activation == "softmax":
            e = np.exp(y - y.max(axis=1, keepdims=True))
            y = e / e.sum(axis=1, keepdims=True)
        outs[name] = y
    return outs


def iter_params(net: Network):
    """(label, array) for every parameter array of a network."""
    for i, layer in enumerate(net.layers):
        yield f"layer{i}.weight", layer.weight
        yield f"layer{i}.bias", layer.bias
    for name, head in net.heads.items():
        yield f"head.{name}.weight", head.layer.weight
        yield f"head.{name}.bias", head.layer.bias


def iter_grads(grads, net: Network):
    for i in range(len(net.layers)):
        yield grads.layers[i].weight
        yield grads.layers[i].bias
    for name in net.heads:
        yield grads.heads[name].weight
        yield grads.heads[name].bias


def central_difference_errors(net, loss_value_fn, analytic, step=1e-6):
    """Max relative error of analytic grads vs central differences.

    loss_value_fn() must evaluate the loss at the network's current
    parameters.  Returns (max_error, checked_count).
    """
    worst, checked = 0.0, 0
    for (_, array), grad in zip(iter_params(net), iter_grads(analytic, net)):
        flat = array.ravel()
        gflat = grad.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_value_fn()
            flat[j] = orig - step
            down = loss_value_fn()
            flat[j] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(gflat[j] - numeric) / max(abs(gflat[j]), abs(numeric), 1e-8)
            worst = max(worst, err)
            checked += 1
    return worst, checked


def identity_layer(n: int) -> DenseLayer:
    return DenseLayer(np.eye(n), np.zeros(n))


def rigged_discriminator(adv_weight, t_i: int = 4, cls_seed: int = 0) -> Network:
    """Pass-through trunk with a chosen adv head and an arbitrary cls head.

    The trunk is the 3x3 identity, so head outputs are direct linear maps
    of the input probability vector; lets tests pin D(x) exactly.
    """
    rng = np.random.default_rng(cls_seed)
    adv = DenseLayer(np.asarray(adv_weight, dtype=float).reshape(1, 3), np.zeros(1))
    cls = DenseLayer(rng.standard_normal((t_i, 3)), rng.standard_normal(t_i))
    return Network(
        layers=[identity_layer(3)],
        activations=["identity"],
        heads={"adv": Head(adv, "identity"), "cls": Head(cls, "identity")},
    )


def uniform_generator(t_i: int, noise_dim: int = 4) -> Network:
    """Zero-weight generator: softmax over zero logits = (1/3, 1/3, 1/3)."""
    return Network(
        layers=[
            DenseLayer(np.zeros((4, noise_dim + t_i)), np.zeros(4)),
            DenseLayer(np.zeros((3, 4)), np.zeros(3)),
        ],
        activations=["relu", "softmax"],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
