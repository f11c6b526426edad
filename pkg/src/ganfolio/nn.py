"""Minimal dense-network engine with manual backpropagation.

Everything is float64 and batched: inputs are ``(batch, fan_in)`` arrays.
A :class:`Network` is a stack of fully-connected layers with per-layer
activations plus optional named output heads (each a single dense layer),
which is all the model zoo here needs.  No autodiff: :func:`forward`
returns a cache and :func:`backward` replays it with the chain rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import CacheError, NumericError, ParseError, ShapeError

FORMAT_VERSION = 1

ACTIVATIONS = ("relu", "softmax", "identity")

RngLike = Union[int, np.random.Generator]


def _as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass
class DenseLayer:
    """One fully-connected layer: ``y = x @ weight.T + bias``."""

    weight: np.ndarray  # (fan_out, fan_in)
    bias: np.ndarray    # (fan_out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weight must be 2-D and bias 1-D")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} does not match "
                f"fan_out {self.weight.shape[0]}"
            )
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise NumericError("layer parameters must be finite")

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class Head:
    """A named output head: one dense layer plus its activation."""

    layer: DenseLayer
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")


@dataclass
class Network:
    """Dense trunk with per-layer activations and optional named heads.

    Without heads the trunk output is exposed under the name ``"out"``.
    Softmax is only legal as the last activation of the trunk (when there
    are no heads) or as a head activation.  ``meta`` carries builder
    annotations (e.g. how the input splits into noise and condition); it
    does not affect computation but is serialized with the network.
    """

    layers: List[DenseLayer]
    activations: List[str]
    heads: Dict[str, Head] = field(default_factory=dict)
    meta: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.layers) != len(self.activations):
            raise ShapeError("need one activation tag per layer")
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ShapeError(f"unknown activation {act!r}")
        for i in range(len(self.layers) - 1):
            if self.layers[i].fan_out != self.layers[i + 1].fan_in:
                raise ShapeError(
                    f"layer {i} fan_out {self.layers[i].fan_out} does not "
                    f"compose with layer {i + 1} fan_in {self.layers[i + 1].fan_in}"
                )
            if self.activations[i] == "softmax":
                raise ShapeError("softmax is only allowed as a final activation")
        if self.heads:
            if self.activations[-1] == "softmax":
                raise ShapeError("softmax trunk output cannot feed heads")
            trunk_out = self.layers[-1].fan_out
            for name, head in self.heads.items():
                if head.layer.fan_in != trunk_out:
                    raise ShapeError(
                        f"head {name!r} fan_in {head.layer.fan_in} does not "
                        f"match trunk output {trunk_out}"
                    )

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    def output_names(self) -> Tuple[str, ...]:
        return tuple(self.heads) if self.heads else ("out",)

    def parameter_count(self) -> int:
        n = sum(l.weight.size + l.bias.size for l in self.layers)
        n += sum(h.layer.weight.size + h.layer.bias.size for h in self.heads.values())
        return n

    def copy(self) -> "Network":
        return Network(
            layers=[DenseLayer(l.weight.copy(), l.bias.copy()) for l in self.layers],
            activations=list(self.activations),
            heads={
                name: Head(DenseLayer(h.layer.weight.copy(), h.layer.bias.copy()), h.activation)
                for name, h in self.heads.items()
            },
            meta=dict(self.meta),
        )

    def _signature(self) -> tuple:
        return (
            tuple((l.fan_in, l.fan_out) for l in self.layers),
            tuple(self.activations),
            tuple(sorted((n, h.layer.fan_in, h.layer.fan_out) for n, h in self.heads.items())),
        )


def xavier_init(fan_in: int, fan_out: int, rng: RngLike) -> DenseLayer:
    """Uniform initialization on ±sqrt(6 / (fan_in + fan_out)), zero bias."""
    if fan_in < 1 or fan_out < 1:
        raise ShapeError("fan_in and fan_out must be >= 1")
    gen = _as_generator(rng)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    weight = gen.uniform(-bound, bound, size=(fan_out, fan_in))
    return DenseLayer(weight=weight, bias=np.zeros(fan_out))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow safety."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(pre: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        return np.maximum(pre, 0.0)
    if tag == "softmax":
        return softmax(pre)
    return pre


def _activation_backward(grad_post: np.ndarray, pre: np.ndarray, post: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        # subgradient at 0 is defined as 0
        return grad_post * (pre > 0.0)
    if tag == "softmax":
        inner = (grad_post * post).sum(axis=-1, keepdims=True)
        return post * (grad_post - inner)
    return grad_post


@dataclass
class ForwardCache:
    """Intermediate values retained for the backward pass."""

    signature: tuple
    input: np.ndarray
    pre: List[np.ndarray]
    post: List[np.ndarray]
    head_pre: Dict[str, np.ndarray]
    head_post: Dict[str, np.ndarray]


def forward(net: Network, x: np.ndarray) -> Tuple[Dict[str, np.ndarray], ForwardCache]:
    """Run a batch through the network; returns head outputs and a cache.

    Accepts a single sample ``(fan_in,)`` or a batch ``(batch, fan_in)``;
    outputs always carry the batch dimension.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(
            f"input of shape {x.shape} does not match network input dim {net.input_dim}"
        )
    pre_list: List[np.ndarray] = []
    post_list: List[np.ndarray] = []
    h = x
    for layer, act in zip(net.layers, net.activations):
        pre = h @ layer.weight.T + layer.bias
        post = _activate(pre, act)
        pre_list.append(pre)
        post_list.append(post)
        h = post
    head_pre: Dict[str, np.ndarray] = {}
    head_post: Dict[str, np.ndarray] = {}
    outputs: Dict[str, np.ndarray] = {}
    if net.heads:
        for name, head in net.heads.items():
            pre = h @ head.layer.weight.T + head.layer.bias
            post = _activate(pre, head.activation)
            head_pre[name] = pre
            head_post[name] = post
            outputs[name] = post
    else:
        outputs["out"] = h
    cache = ForwardCache(
        signature=net._signature(),
        input=x,
        pre=pre_list,
        post=post_list,
        head_pre=head_pre,
        head_post=head_post,
    )
    return outputs, cache


@dataclass
class LayerGrads:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class NetGradients:
    """Parameter gradients mirroring a Network, plus the input gradient."""

    layers: List[LayerGrads]
    heads: Dict[str, LayerGrads]
    input: np.ndarray

    def add(self, other: "NetGradients") -> "NetGradients":
        return NetGradients(
            layers=[
                LayerGrads(a.weight + b.weight, a.bias + b.bias)
                for a, b in zip(self.layers, other.layers)
            ],
            heads={
                n: LayerGrads(self.heads[n].weight + other.heads[n].weight,
                              self.heads[n].bias + other.heads[n].bias)
                for n in self.heads
            },
            input=self.input + other.input,
        )


def backward(
    net: Network,
    cache: ForwardCache,
    out_grads: Dict[str, np.ndarray],
) -> NetGradients:
    """Chain-rule pass from head-output gradients down to the input.

    ``out_grads`` maps output names to dL/d(output); heads omitted from the
    dict contribute zero gradient.  The cache must come from a matching
    :func:`forward` call on the same network.
    """
    if cache.signature != net._signature():
        raise CacheError("cache does not match this network")
    valid = set(net.output_names())
    for name in out_grads:
        if name not in valid:
            raise CacheError(f"gradient for unknown output {name!r}")

    trunk_out = cache.post[-1] if cache.post else cache.input
    grad_trunk = np.zeros_like(trunk_out)
    head_grads: Dict[str, LayerGrads] = {}
    if net.heads:
        for name, head in net.heads.items():
            g_out = out_grads.get(name)
            if g_out is None:
                head_grads[name] = LayerGrads(
                    np.zeros_like(head.layer.weight), np.zeros_like(head.layer.bias)
                )
                continue
            g_out = np.asarray(g_out, dtype=np.float64)
            if g_out.shape != cache.head_post[name].shape:
                raise ShapeError(
                    f"gradient for head {name!r} has shape {g_out.shape}, "
                    f"expected {cache.head_post[name].shape}"
                )
            g_pre = _activation_backward(
                g_out, cache.head_pre[name], cache.head_post[name], head.activation
            )
            head_grads[name] = LayerGrads(g_pre.T @ trunk_out, g_pre.sum(axis=0))
            grad_trunk = grad_trunk + g_pre @ head.layer.weight
    else:
        g_out = out_grads.get("out")
        if g_out is not None:
            g_out = np.asarray(g_out, dtype=np.float64)
            if g_out.shape != trunk_out.shape:
                raise ShapeError(
                    f"gradient for output has shape {g_out.shape}, expected {trunk_out.shape}"
                )
            grad_trunk = grad_trunk + g_out

    layer_grads: List[Optional[LayerGrads]] = [None] * len(net.layers)
    g = grad_trunk
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        g_pre = _activation_backward(g, cache.pre[i], cache.post[i], net.activations[i])
        below = cache.post[i - 1] if i > 0 else cache.input
        layer_grads[i] = LayerGrads(g_pre.T @ below, g_pre.sum(axis=0))
        g = g_pre @ layer.weight
    return NetGradients(layers=list(layer_grads), heads=head_grads, input=g)


@dataclass
class AdamState:
    """Moment estimates and hyperparameters for one network's optimizer."""

    first_moment: NetGradients
    second_moment: NetGradients
    step_count: int
    beta1: float
    beta2: float
    learning_rate: float
    epsilon: float = 1e-8

    @classmethod
    def for_network(
        cls,
        net: Network,
        learning_rate: float,
        beta1: float,
        beta2: float,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        def zeros() -> NetGradients:
            return NetGradients(
                layers=[
                    LayerGrads(np.zeros_like(l.weight), np.zeros_like(l.bias))
                    for l in net.layers
                ],
                heads={
                    n: LayerGrads(np.zeros_like(h.layer.weight), np.zeros_like(h.layer.bias))
                    for n, h in net.heads.items()
                },
                input=np.zeros(net.input_dim),
            )

        return cls(
            first_moment=zeros(),
            second_moment=zeros(),
            step_count=0,
            beta1=beta1,
            beta2=beta2,
            learning_rate=learning_rate,
            epsilon=epsilon,
        )


def _iter_param_grad_moment(net: Network, grads: NetGradients, state: AdamState):
    """Yields (label, param, grad, m, v) for every parameter array."""
    for i, layer in enumerate(net.layers):
        yield (f"layer {i} weight", layer.weight, grads.layers[i].weight,
               state.first_moment.layers[i].weight, state.second_moment.layers[i].weight)
        yield (f"layer {i} bias", layer.bias, grads.layers[i].bias,
               state.first_moment.layers[i].bias, state.second_moment.layers[i].bias)
    for name in net.heads:
        yield (f"head {name} weight", net.heads[name].layer.weight, grads.heads[name].weight,
               state.first_moment.heads[name].weight, state.second_moment.heads[name].weight)
        yield (f"head {name} bias", net.heads[name].layer.bias, grads.heads[name].bias,
               state.first_moment.heads[name].bias, state.second_moment.heads[name].bias)


def adam_step(net: Network, grads: NetGradients, state: AdamState) -> Tuple[Network, AdamState]:
    """One bias-corrected Adam update, in place; returns (net, state).

    update = lr * m_hat / (sqrt(v_hat) + eps) with m_hat = m / (1 - b1^t),
    v_hat = v / (1 - b2^t).
    """
    for label, param, grad, _, _ in _iter_param_grad_moment(net, grads, state):
        if grad.shape != param.shape:
            raise ShapeError(f"{label}: gradient shape {grad.shape} != param shape {param.shape}")
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite gradient in {label}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for _, param, grad, m, v in _iter_param_grad_moment(net, grads, state):
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        param -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return net, state


LossFn = Callable[[Dict[str, np.ndarray]], Tuple[float, Dict[str, np.ndarray]]]


def gradient_check(
    net: Network,
    x: np.ndarray,
    loss_fn: LossFn,
    tolerance: float = 1e-4,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` maps head outputs to (scalar loss, gradient per output).
    relative error = |a - n| / max(|a|, |n|, 1e-8), maximized over every
    parameter of every layer and head.  Intended for small nets only.
    """
    outputs, cache = forward(net, x)
    _, out_grads = loss_fn(outputs)
    analytic = backward(net, cache, out_grads)

    def loss_at() -> float:
        outs, _ = forward(net, x)
        value, _ = loss_fn(outs)
        return float(value)

    params: List[Tuple[np.ndarray, np.ndarray]] = []
    for i in range(len(net.layers)):
        params.append((net.layers[i].weight, analytic.layers[i].weight))
        params.append((net.layers[i].bias, analytic.layers[i].bias))
    for name in net.heads:
        params.append((net.heads[name].layer.weight, analytic.heads[name].weight))
        params.append((net.heads[name].layer.bias, analytic.heads[name].bias))

    worst = 0.0
    for array, grad in params:
        flat = array.ravel()
        gflat = grad.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_at()
            flat[j] = orig - step
            down = loss_at()
            flat[j] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(gflat[j] - numeric) / max(abs(gflat[j]), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst


def network_to_json(net: Network) -> dict:
    """JSON-serializable container with full float64 precision."""

    def layer_dict(layer: DenseLayer) -> dict:
        return {
            "fan_in": layer.fan_in,
            "fan_out": layer.fan_out,
            "weight": layer.weight.tolist(),  # row-major: one row per output unit
            "bias": layer.bias.tolist(),
        }

    return {
        "format_version": FORMAT_VERSION,
        "layers": [layer_dict(l) for l in net.layers],
        "activations": list(net.activations),
        "heads": {
            name: {"activation": h.activation, **layer_dict(h.layer)}
            for name, h in net.heads.items()
        },
        "meta": dict(net.meta),
    }


def network_from_json(data: dict) -> Network:
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported network format version {version!r}")

    def make_layer(d: dict) -> DenseLayer:
        layer = DenseLayer(np.array(d["weight"], dtype=np.float64),
                           np.array(d["bias"], dtype=np.float64))
        if layer.fan_in != d["fan_in"] or layer.fan_out != d["fan_out"]:
            raise ParseError("declared layer dims do not match weight array")
        return layer

    return Network(
        layers=[make_layer(d) for d in data["layers"]],
        activations=list(data["activations"]),
        heads={
            name: Head(make_layer(d), d["activation"])
            for name, d in data.get("heads", {}).items()
        },
        meta=dict(data.get("meta", {})),
    )


def save_network(path, net: Network) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_json(net), fh)


def load_network(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        return network_from_json(json.load(fh))
