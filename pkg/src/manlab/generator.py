"""The multi-target adversarial generator.

An image encoder extracts a C x H' x W' feature map M from the clean image.
The target label is then folded into M in one of two ways:

* ``concat``: the one-hot label is tiled into a K x H' x W' map, stacked onto
  M along channels and squeezed back to C channels by a 1x1 convolution.
* ``recalibrate``: a two-layer label encoder turns the one-hot label into C
  channel gains ``sigmoid(W2 @ relu(W1 @ onehot))`` that rescale M channel by
  channel.

A residual decoder with two transposed convolutions maps the result back to
image space; a final sigmoid keeps every output pixel inside [0, 1].
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, checkpoint, no_grad, ops
from .numerics.nn import Conv2d, ConvTranspose2d, InstanceNorm, Module, Parameter, Sequential, ReLU, he_normal

MODEL_TAG = 2.0
VARIANTS = ("concat", "recalibrate")
CLI_VARIANTS = {"manc": "concat", "manr": "recalibrate"}


@dataclass(frozen=True)
class GeneratorPreset:
    """Layer schedule. ``encoder`` lists (out_channels, stride) per conv stage."""

    name: str
    encoder: tuple[tuple[int, int], ...]
    res_blocks: int
    width: int = 64  # bottleneck channels C
    hidden: int = 16  # label-encoder hidden units U


PRESETS = {
    # 28x28 -> 7x7 bottleneck
    "desk": GeneratorPreset("desk", ((32, 2), (64, 2)), res_blocks=3),
    # 32x32 -> 8x8 bottleneck, stride-1 stem first
    "cifar": GeneratorPreset("cifar", ((32, 1), (64, 2), (64, 2)), res_blocks=6),
}


def _stage(cin, cout, stride, rng):
    return Sequential(Conv2d(cin, cout, 3, stride, 1, bias=False, rng=rng), InstanceNorm(cout), ReLU())


class ResBlock(Module):
    """x + IN(conv(relu(IN(conv(x))))); shape preserving."""

    def __init__(self, channels, rng):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, 1, 1, bias=False, rng=rng)
        self.norm1 = InstanceNorm(channels)
        self.conv2 = Conv2d(channels, channels, 3, 1, 1, bias=False, rng=rng)
        self.norm2 = InstanceNorm(channels)

    def forward(self, x):
        h = ops.relu(self.norm1(self.conv1(x)))
        return x + self.norm2(self.conv2(h))


class GeneratorModel(Module):
    def __init__(
        self,
        variant: str,
        num_classes: int,
        input_shape: tuple[int, int, int],
        preset: str | GeneratorPreset = "desk",
        seed: int = 0,
    ):
        super().__init__()
        variant = CLI_VARIANTS.get(variant, variant)
        if variant not in VARIANTS:
            raise ValueError(f"unknown generator variant {variant!r}; expected one of {VARIANTS} or manc/manr")
        preset = PRESETS[preset] if isinstance(preset, str) else preset
        c, h, w = input_shape
        downs = sum(1 for _, s in preset.encoder if s == 2)
        if downs != 2:
            raise ValueError(f"preset {preset.name} must downsample exactly twice to match the two transposed convs")
        if h % 4 or w % 4:
            raise ValueError(f"generator needs H, W divisible by 4, got {h}x{w}")
        if preset.encoder[-1][0] != preset.width:
            raise ValueError(f"preset {preset.name}: last encoder stage must output {preset.width} channels")
        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "preset", preset)
        object.__setattr__(self, "num_classes", num_classes)
        object.__setattr__(self, "input_shape", tuple(input_shape))
        rng = np.random.default_rng(seed)
        stages, cin = [], c
        for cout, stride in preset.encoder:
            stages.append(_stage(cin, cout, stride, rng))
            cin = cout
        self.encoder = Sequential(*stages)
        C, U, K = preset.width, preset.hidden, num_classes
        if variant == "concat":
            self.mix = Conv2d(K + C, C, 1, 1, 0, bias=True, rng=rng)
        else:
            self.w1 = Parameter(he_normal(rng, (U, K), K))
            self.w2 = Parameter(he_normal(rng, (C, U), U))
        self.blocks = Sequential(*[ResBlock(C, rng) for _ in range(preset.res_blocks)])
        self.up1 = ConvTranspose2d(C, C // 2, 4, 2, 1, bias=False, rng=rng)
        self.up1_norm = InstanceNorm(C // 2)
        self.up2 = ConvTranspose2d(C // 2, c, 4, 2, 1, bias=True, rng=rng)

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        _, h, w = self.input_shape
        return (self.preset.width, h // 4, w // 4)

    # -- pieces -------------------------------------------------------------
    def _targets(self, t, batch: int) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if t.ndim == 0:
            t = np.full(batch, int(t))
        if t.shape != (batch,):
            raise ValueError(f"expected {batch} targets, got shape {t.shape}")
        if (t < 0).any() or (t >= self.num_classes).any():
            raise ValueError(f"target label out of range [0, {self.num_classes}): {t[(t < 0) | (t >= self.num_classes)][:3]}")
        return t

    def encode_image(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"generator expects (B, {self.input_shape}) images, got {x.shape}")
        return self.encoder(x)

    def onehot(self, t, batch: int) -> np.ndarray:
        return np.eye(self.num_classes, dtype=np.float32)[self._targets(t, batch)]

    def expand_label_map(self, t, batch: int) -> np.ndarray:
        """(B, K, H', W') maps: all ones in channel t, zeros elsewhere."""
        _, hp, wp = self.feature_shape
        oh = self.onehot(t, batch)
        return np.broadcast_to(oh[:, :, None, None], (batch, self.num_classes, hp, wp)).copy()

    def label_gains(self, t, batch: int) -> Tensor:
        """Channel gains t' in (0, 1)^C for the recalibrate variant, shape (B, C)."""
        oh = Tensor(self.onehot(t, batch), dtype=self.w1.dtype)
        hidden = ops.relu(ops.matmul(oh, ops.transpose(self.w1)))
        return ops.sigmoid(ops.matmul(hidden, ops.transpose(self.w2)), open_interval=True)

    def encode_label_concat(self, t, m: Tensor) -> Tensor:
        label_map = Tensor(self.expand_label_map(t, m.shape[0]), dtype=m.dtype)
        mixed = ops.concat([m, label_map], axis=1)
        return self.mix(mixed)

    def encode_label_recalibrate(self, t, m: Tensor) -> Tensor:
        return ops.channel_scale(m, self.label_gains(t, m.shape[0]))

    def integrate(self, t, m: Tensor) -> Tensor:
        if self.variant == "concat":
            return self.encode_label_concat(t, m)
        return self.encode_label_recalibrate(t, m)

    def decode(self, m: Tensor) -> Tensor:
        if tuple(m.shape[1:]) != self.feature_shape:
            raise ValueError(f"decoder expects (B, {self.feature_shape}) features, got {m.shape}")
        h = self.blocks(m)
        h = ops.relu(self.up1_norm(self.up1(h)))
        return ops.sigmoid(self.up2(h))

    def forward(self, x: Tensor, t) -> Tensor:
        """x* = F(x, t)."""
        return self.decode(self.integrate(t, self.encode_image(x)))

    # -- persistence --------------------------------------------------------
    def to_tensors(self) -> dict[str, np.ndarray]:
        f = lambda v: np.array(v, dtype=np.float32)  # noqa: E731
        meta = {
            "meta/model": f(MODEL_TAG),
            "meta/variant": f(VARIANTS.index(self.variant)),
            "meta/preset": f(list(PRESETS).index(self.preset.name)),
            "meta/num_classes": f(self.num_classes),
            "meta/input_shape": f(self.input_shape),
        }
        return {**meta, **self.state_dict()}

    def save(self, path: str | os.PathLike) -> None:
        checkpoint.save(path, self.to_tensors())

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "GeneratorModel":
        if float(tensors.get("meta/model", -1)) != MODEL_TAG:
            raise ValueError("checkpoint does not hold a generator")
        model = cls(
            VARIANTS[int(tensors["meta/variant"])],
            int(tensors["meta/num_classes"]),
            tuple(int(v) for v in tensors["meta/input_shape"]),
            list(PRESETS)[int(tensors["meta/preset"])],
        )
        model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("meta/")})
        return model


def build(variant: str, num_classes: int, input_shape, preset: str = "desk", seed: int = 0) -> GeneratorModel:
    return GeneratorModel(variant, num_classes, tuple(input_shape), preset, seed)


def load(path: str | os.PathLike) -> GeneratorModel:
    return GeneratorModel.from_tensors(checkpoint.load(path)).eval()


def generate(model: GeneratorModel, x: np.ndarray, t, batch_size: int = 256) -> np.ndarray:
    """Adversarial samples for clean images ``x`` and target labels ``t`` (no grad)."""
    x = np.asarray(x, dtype=np.float32)
    t = model._targets(t, len(x))
    out = []
    with no_grad():
        for i in range(0, len(x), batch_size):
            out.append(model(Tensor(x[i:i + batch_size]), t[i:i + batch_size]).data)
    return np.concatenate(out) if out else np.zeros_like(x)
