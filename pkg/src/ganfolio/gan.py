"""Conditional adversarial model: builders, losses, and training loop.

The generator maps [noise | condition] to a 3-category softmax; the
discriminator scores a category vector with a scalar adversarial head
(hinge loss) and reconstructs the condition with an L2 head.  The
generator maximizes its adversarial score (Wasserstein-style) while
matching the reconstruction, implemented as minimizing the negation.
Discriminator and generator take alternating Adam steps with distinct
learning rates.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .data import TrainingPair
from .errors import ConfigError, DataError, DivergenceError, ParseError, ShapeError
from .nn import (
    AdamState,
    Head,
    NetGradients,
    Network,
    adam_step,
    backward,
    forward,
    network_from_json,
    network_to_json,
    xavier_init,
)

CHECKPOINT_VERSION = 1

CATEGORY_COUNT = 3


@dataclass
class TrainConfig:
    """Hyperparameters for adversarial training.

    Defaults follow the full-scale setup (wide hidden layers, 128-dim
    noise); g_hidden/d_hidden can be shrunk for desk-scale experiments.
    """

    rng_seed: int
    lr_d: float = 2e-5
    lr_g: float = 1e-5
    beta1: float = 0.0
    beta2: float = 0.9
    lambda_cg: float = 32.0
    lambda_cd: float = 1.0
    batch_size: int = 16
    epochs: int = 128
    noise_dim: int = 128
    g_hidden: int = 1024
    d_hidden: Tuple[int, int] = (2048, 2048)
    condition_gain: float = 1.0
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.lr_d <= 0 or self.lr_g <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.noise_dim < 1:
            raise ConfigError("noise_dim must be >= 1")
        self.d_hidden = tuple(self.d_hidden)
        if len(self.d_hidden) != 2:
            raise ConfigError("d_hidden must name two hidden layer widths")


@dataclass
class LossTrace:
    """Per-epoch mean discriminator and generator losses."""

    d_loss: List[float] = field(default_factory=list)
    g_loss: List[float] = field(default_factory=list)
    lr_d: float = 0.0
    lr_g: float = 0.0

    def __len__(self) -> int:
        return len(self.d_loss)


def build_generator(
    t_i: int,
    noise_dim: int = 128,
    hidden: int = 1024,
    rng: "int | np.random.Generator" = 0,
    condition_gain: float = 1.0,
) -> Network:
    """[noise | condition] -> relu hidden -> 3-way softmax.

    condition_gain rescales the Xavier draw for the condition columns of
    the first layer.  Return windows are one to two orders of magnitude
    smaller than the unit-variance noise inputs, so a gain > 1 gives the
    condition pathway usable gradients at small data scales; 1.0 keeps
    the plain initialization.
    """
    gen = np.random.default_rng(rng) if isinstance(rng, int) else rng
    first = xavier_init(noise_dim + t_i, hidden, gen)
    if condition_gain != 1.0:
        first.weight[:, noise_dim:] *= condition_gain
    return Network(
        layers=[first, xavier_init(hidden, CATEGORY_COUNT, gen)],
        activations=["relu", "softmax"],
        meta={"noise_dim": noise_dim, "condition_width": t_i},
    )


def build_discriminator(
    t_i: int,
    hidden: Tuple[int, int] = (2048, 2048),
    rng: "int | np.random.Generator" = 0,
) -> Network:
    """Category vector -> two relu layers -> scalar adv head + T_i cls head."""
    gen = np.random.default_rng(rng) if isinstance(rng, int) else rng
    h1, h2 = hidden
    return Network(
        layers=[xavier_init(CATEGORY_COUNT, h1, gen), xavier_init(h1, h2, gen)],
        activations=["relu", "relu"],
        heads={
            "adv": Head(xavier_init(h2, 1, gen), "identity"),
            "cls": Head(xavier_init(h2, t_i, gen), "identity"),
        },
        meta={"condition_width": t_i},
    )


def sample_noise(count: int, dim: int, rng: "int | np.random.Generator") -> np.ndarray:
    """(count, dim) of independent standard normals, seed-deterministic."""
    if count < 1 or dim < 1:
        raise ShapeError("count and dim must be >= 1")
    gen = np.random.default_rng(rng) if isinstance(rng, int) else rng
    return gen.standard_normal((count, dim))


def generator_inputs(z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Concatenate noise and condition batches: [z | x]."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if z.shape[0] != x.shape[0]:
        raise ShapeError(f"noise batch {z.shape[0]} != condition batch {x.shape[0]}")
    return np.concatenate([z, x], axis=1)


def _check_one_hot(real: np.ndarray) -> np.ndarray:
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    if real.shape[1] != CATEGORY_COUNT:
        raise DataError(f"real rows must have {CATEGORY_COUNT} entries")
    ones = real == 1.0
    zeros = real == 0.0
    if not np.all(ones.sum(axis=1) == 1) or not np.all(ones.sum(axis=1) + zeros.sum(axis=1) == CATEGORY_COUNT):
        raise DataError("real rows must be one-hot vectors")
    return real


def _hinge_real_grads(adv: np.ndarray, batch: int) -> np.ndarray:
    # d/d adv of mean(max(0, 1 - adv)); slope 0 exactly at the kink
    return np.where(1.0 - adv > 0.0, -1.0 / batch, 0.0)


def _hinge_fake_grads(adv: np.ndarray, batch: int) -> np.ndarray:
    return np.where(1.0 + adv > 0.0, 1.0 / batch, 0.0)


def discriminator_loss(
    real_onehot: np.ndarray,
    x: np.ndarray,
    fake_probs: np.ndarray,
    d: Network,
    lambda_cd: float = 1.0,
) -> float:
    """Hinge real/fake terms plus the condition-reconstruction L2 term.

    mean_b max(0, 1 - D(real)) + lambda_cd * mean_{b,j} (D_c(real) - x)^2
    + mean_b max(0, 1 + D(fake)); fake rows are constants here.
    """
    loss, _ = discriminator_loss_gradients(real_onehot, x, fake_probs, d, lambda_cd)
    return loss


def discriminator_loss_gradients(
    real_onehot: np.ndarray,
    x: np.ndarray,
    fake_probs: np.ndarray,
    d: Network,
    lambda_cd: float = 1.0,
) -> Tuple[float, NetGradients]:
    """Loss plus gradients w.r.t. every discriminator parameter."""
    real = _check_one_hot(real_onehot)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    fake = np.atleast_2d(np.asarray(fake_probs, dtype=np.float64))
    if not (real.shape[0] == x.shape[0] == fake.shape[0]):
        raise DataError("real, condition and fake batches must be aligned")
    batch = real.shape[0]

    real_out, real_cache = forward(d, real)
    fake_out, fake_cache = forward(d, fake)
    adv_r = real_out["adv"]
    adv_f = fake_out["adv"]
    cls_r = real_out["cls"]
    if cls_r.shape != x.shape:
        raise ShapeError(f"cls head shape {cls_r.shape} != condition shape {x.shape}")

    hinge_real = np.maximum(0.0, 1.0 - adv_r).mean()
    hinge_fake = np.maximum(0.0, 1.0 + adv_f).mean()
    cls_err = cls_r - x
    cls_term = lambda_cd * float((cls_err ** 2).mean())
    loss = float(hinge_real) + cls_term + float(hinge_fake)

    g_cls = 2.0 * lambda_cd * cls_err / cls_err.size
    real_grads = backward(d, real_cache, {
        "adv": _hinge_real_grads(adv_r, batch),
        "cls": g_cls,
    })
    fake_grads = backward(d, fake_cache, {"adv": _hinge_fake_grads(adv_f, batch)})
    return loss, real_grads.add(fake_grads)


def generator_loss(
    z: np.ndarray,
    x: np.ndarray,
    g: Network,
    d: Network,
    lambda_cg: float = 32.0,
) -> float:
    """-mean D(G(z,x)) + lambda_cg * mean (D_c(G(z,x)) - x)^2, to minimize."""
    loss, _ = generator_loss_gradients(z, x, g, d, lambda_cg)
    return loss


def generator_loss_gradients(
    z: np.ndarray,
    x: np.ndarray,
    g: Network,
    d: Network,
    lambda_cg: float = 32.0,
) -> Tuple[float, NetGradients]:
    """Loss plus gradients w.r.t. generator parameters only.

    Gradients flow through the frozen discriminator into the generator;
    the discriminator's own parameter gradients are discarded.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    inputs = generator_inputs(z, x)
    g_out, g_cache = forward(g, inputs)
    probs = g_out["out"]
    d_out, d_cache = forward(d, probs)
    adv = d_out["adv"]
    cls = d_out["cls"]
    if cls.shape != x.shape:
        raise ShapeError(f"cls head shape {cls.shape} != condition shape {x.shape}")
    batch = probs.shape[0]

    cls_err = cls - x
    loss = float(-adv.mean()) + lambda_cg * float((cls_err ** 2).mean())

    d_grads = backward(d, d_cache, {
        "adv": np.full_like(adv, -1.0 / batch),
        "cls": 2.0 * lambda_cg * cls_err / cls_err.size,
    })
    g_grads = backward(g, g_cache, {"out": d_grads.input})
    return loss, g_grads


ProgressSink = Callable[[int, float, float], None]


def train(
    pairs: Sequence[TrainingPair],
    config: TrainConfig,
    progress: Optional[ProgressSink] = None,
) -> Tuple[Network, Network, LossTrace]:
    """Alternating one-D-step / one-G-step training over shuffled batches.

    Deterministic for a fixed config: initialization, shuffling and noise
    all derive from config.rng_seed.  Incomplete trailing batches are
    dropped.  Raises DivergenceError the moment a batch loss is not
    finite.
    """
    if len(pairs) < config.batch_size:
        raise DataError(
            f"need at least batch_size={config.batch_size} pairs, got {len(pairs)}"
        )
    t_i = len(pairs[0].x.values)
    for p in pairs:
        if len(p.x.values) != t_i:
            raise DataError(f"asset {p.asset_id}: inconsistent condition length")

    x_all = np.stack([p.x.values for p in pairs])
    c_all = np.stack([p.c.one_hot for p in pairs])

    seed_root = np.random.SeedSequence(config.rng_seed)
    ss_g, ss_d, ss_shuffle, ss_noise = seed_root.spawn(4)
    g_net = build_generator(t_i, config.noise_dim, config.g_hidden,
                            np.random.default_rng(ss_g), config.condition_gain)
    d_net = build_discriminator(t_i, config.d_hidden, np.random.default_rng(ss_d))
    shuffle_rng = np.random.default_rng(ss_shuffle)
    noise_rng = np.random.default_rng(ss_noise)

    d_state = AdamState.for_network(d_net, config.lr_d, config.beta1, config.beta2,
                                    config.adam_epsilon)
    g_state = AdamState.for_network(g_net, config.lr_g, config.beta1, config.beta2,
                                    config.adam_epsilon)

    trace = LossTrace(lr_d=config.lr_d, lr_g=config.lr_g)
    n = len(pairs)
    n_batches = n // config.batch_size
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        d_sum = 0.0
        g_sum = 0.0
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            xb = x_all[idx]
            cb = c_all[idx]

            z_d = sample_noise(len(idx), config.noise_dim, noise_rng)
            fake_out, _ = forward(g_net, generator_inputs(z_d, xb))
            d_loss, d_grads = discriminator_loss_gradients(
                cb, xb, fake_out["out"], d_net, config.lambda_cd
            )
            if not np.isfinite(d_loss):
                raise DivergenceError(
                    f"discriminator loss diverged at epoch {epoch}", epoch=epoch
                )
            adam_step(d_net, d_grads, d_state)

            z_g = sample_noise(len(idx), config.noise_dim, noise_rng)
            g_loss, g_grads = generator_loss_gradients(
                z_g, xb, g_net, d_net, config.lambda_cg
            )
            if not np.isfinite(g_loss):
                raise DivergenceError(
                    f"generator loss diverged at epoch {epoch}", epoch=epoch
                )
            adam_step(g_net, g_grads, g_state)

            d_sum += d_loss
            g_sum += g_loss
        trace.d_loss.append(d_sum / n_batches)
        trace.g_loss.append(g_sum / n_batches)
        if progress is not None:
            progress(epoch, trace.d_loss[-1], trace.g_loss[-1])
    return g_net, d_net, trace


def save_loss_trace(path, trace: LossTrace) -> None:
    """CSV with one row per epoch: epoch,d_loss,g_loss."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,d_loss,g_loss\n")
        for epoch, (dl, gl) in enumerate(zip(trace.d_loss, trace.g_loss)):
            fh.write(f"{epoch},{float(dl)!r},{float(gl)!r}\n")


def load_loss_trace(path) -> LossTrace:
    trace = LossTrace()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "epoch,d_loss,g_loss":
            raise ParseError(f"{path}: unexpected loss trace header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            _, dl, gl = line.strip().split(",")
            trace.d_loss.append(float(dl))
            trace.g_loss.append(float(gl))
    return trace


def save_checkpoint(path, g: Network, d: Network, config: TrainConfig, epoch: int) -> None:
    """Both networks plus the training config and epoch index, one JSON file."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "config": {**asdict(config), "d_hidden": list(config.d_hidden)},
        "generator": network_to_json(g),
        "discriminator": network_to_json(d),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> Tuple[Network, Network, TrainConfig, int]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version")
    cfg_dict = dict(payload["config"])
    cfg_dict["d_hidden"] = tuple(cfg_dict["d_hidden"])
    config = TrainConfig(**cfg_dict)
    return (
        network_from_json(payload["generator"]),
        network_from_json(payload["discriminator"]),
        config,
        int(payload["epoch"]),
    )
