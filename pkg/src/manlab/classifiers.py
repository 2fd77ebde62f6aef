"""Attacked classifiers: small VGG- and ResNet-style CNNs, pretraining and inference."""

from __future__ import annotations

import contextlib
import hashlib
import logging
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset, Split, batch_iterator
from .numerics import Adam, NonFiniteError, step_decay, Tensor, checkpoint, no_grad, ops
from .numerics.nn import BatchNorm, Conv2d, Linear, MaxPool, Module, ReLU, Sequential

log = logging.getLogger(__name__)

MODEL_TAG = 1.0  # "meta/model" value identifying classifier checkpoints
_ARCH_RE = re.compile(r"^(vggS|resS-(\d+))$")


class ArchitectureError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    """Named preset. ``kind`` is "vgg" or "res"; ``blocks`` counts residual blocks."""

    name: str
    kind: str
    blocks: int = 0
    widths: tuple[int, ...] = (16, 32, 64)
    hidden: int = 128

    @classmethod
    def parse(cls, name: str) -> "ArchitectureSpec":
        m = _ARCH_RE.match(name)
        if not m:
            raise ArchitectureError(f"unknown architecture {name!r}; expected 'vggS' or 'resS-<n>'")
        if m.group(2) is None:
            return cls(name, "vgg")
        n = int(m.group(2))
        if n < 3:
            raise ArchitectureError(f"{name}: resS needs at least 3 residual blocks (one per stage)")
        return cls(name, "res", n)

    def stage_blocks(self) -> list[int]:
        n, s = self.blocks, len(self.widths)
        return [n // s + (1 if i < n % s else 0) for i in range(s)]


def _conv_bn_relu(cin, cout, rng, stride=1):
    return Sequential(Conv2d(cin, cout, 3, stride, 1, bias=False, rng=rng), BatchNorm(cout), ReLU())


class ResidualBlock(Module):
    def __init__(self, cin, cout, stride, rng):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, stride, 1, bias=False, rng=rng)
        self.bn1 = BatchNorm(cout)
        self.conv2 = Conv2d(cout, cout, 3, 1, 1, bias=False, rng=rng)
        self.bn2 = BatchNorm(cout)
        if stride != 1 or cin != cout:
            self.proj = Conv2d(cin, cout, 1, stride, 0, bias=False, rng=rng)
            self.proj_bn = BatchNorm(cout)
        else:
            self.proj = None

    def forward(self, x):
        h = ops.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = x if self.proj is None else self.proj_bn(self.proj(x))
        return ops.relu(h + skip)


class ClassifierModel(Module):
    """Maps (B, C, H, W) images in [0, 1] to (B, K) logits."""

    def __init__(self, arch: ArchitectureSpec, num_classes: int, input_shape: tuple[int, int, int], seed: int = 0):
        super().__init__()
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "num_classes", num_classes)
        object.__setattr__(self, "input_shape", tuple(input_shape))
        object.__setattr__(self, "frozen", False)
        c, h, w = input_shape
        rng = np.random.default_rng(seed)
        w1, w2, w3 = arch.widths
        if arch.kind == "vgg":
            if h % 4 or w % 4 or h < 8 or w < 8:
                raise ArchitectureError(f"vggS needs H, W divisible by 4 and >= 8, got {h}x{w}")
            self.features = Sequential(
                _conv_bn_relu(c, w1, rng), _conv_bn_relu(w1, w1, rng), MaxPool(2),
                _conv_bn_relu(w1, w2, rng), _conv_bn_relu(w2, w2, rng), MaxPool(2),
                _conv_bn_relu(w2, w3, rng), _conv_bn_relu(w3, w3, rng), MaxPool(2),
            )
            flat = w3 * (h // 8) * (w // 8)
            self.fc1 = Linear(flat, arch.hidden, rng=rng)
            self.fc2 = Linear(arch.hidden, num_classes, rng=rng)
        else:
            if h % 4 or w % 4:
                raise ArchitectureError(f"{arch.name} needs H, W divisible by 4, got {h}x{w}")
            self.stem = _conv_bn_relu(c, w1, rng)
            blocks, cin = [], w1
            for stage, (width, count) in enumerate(zip(arch.widths, arch.stage_blocks())):
                for i in range(count):
                    stride = 2 if stage > 0 and i == 0 else 1
                    blocks.append(ResidualBlock(cin, width, stride, rng))
                    cin = width
            self.blocks = Sequential(*blocks)
            self.fc = Linear(cin, num_classes, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"{self.arch.name} expects images of shape {self.input_shape}, got {x.shape[1:]}")
        if self.arch.kind == "vgg":
            h = ops.flatten(self.features(x))
            return self.fc2(ops.relu(self.fc1(h)))
        h = self.blocks(self.stem(x))
        return self.fc(ops.mean(h, axis=(2, 3)))

    def freeze(self) -> "ClassifierModel":
        """Eval mode, no parameter grads; gradients still flow to the input."""
        self.eval()
        self.requires_grad_(False)
        object.__setattr__(self, "frozen", True)
        return self

    def unfreeze(self) -> "ClassifierModel":
        self.requires_grad_(True)
        object.__setattr__(self, "frozen", False)
        return self.train()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, arr in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()[:16]

    # -- persistence --------------------------------------------------------
    def to_tensors(self) -> dict[str, np.ndarray]:
        meta = {
            "meta/model": np.array(MODEL_TAG, dtype=np.float32),
            "meta/arch_kind": np.array(0.0 if self.arch.kind == "vgg" else 1.0, dtype=np.float32),
            "meta/blocks": np.array(float(self.arch.blocks), dtype=np.float32),
            "meta/num_classes": np.array(float(self.num_classes), dtype=np.float32),
            "meta/input_shape": np.array(self.input_shape, dtype=np.float32),
        }
        return {**meta, **self.state_dict()}

    def save(self, path: str | os.PathLike) -> None:
        checkpoint.save(path, self.to_tensors())

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "ClassifierModel":
        if float(tensors.get("meta/model", -1)) != MODEL_TAG:
            raise ValueError("checkpoint does not hold a classifier")
        name = "vggS" if float(tensors["meta/arch_kind"]) == 0.0 else f"resS-{int(tensors['meta/blocks'])}"
        shape = tuple(int(v) for v in tensors["meta/input_shape"])
        model = cls(ArchitectureSpec.parse(name), int(tensors["meta/num_classes"]), shape)
        model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("meta/")})
        return model


def build(arch: str | ArchitectureSpec, num_classes: int, input_dims, seed: int = 0) -> ClassifierModel:
    spec = ArchitectureSpec.parse(arch) if isinstance(arch, str) else arch
    return ClassifierModel(spec, num_classes, tuple(input_dims), seed)


def load(path: str | os.PathLike, freeze: bool = True) -> ClassifierModel:
    model = ClassifierModel.from_tensors(checkpoint.load(path))
    return model.freeze() if freeze else model


# -- inference ------------------------------------------------------------------

@contextlib.contextmanager
def inference_mode(model: Module):
    """Eval mode with parameter grads off, restoring both on exit.

    Gradients still flow through the model to its input.
    """
    was_training = model.training
    flags = [(p, p.requires_grad) for p in model.parameters()]
    model.eval()
    for p, _ in flags:
        p.requires_grad = False
    try:
        yield model
    finally:
        for p, flag in flags:
            p.requires_grad = flag
        model.train(was_training)


def _check_images(model: ClassifierModel, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or tuple(images.shape[1:]) != model.input_shape:
        raise ValueError(f"{model.arch.name} expects (B, {model.input_shape}) images, got {images.shape}")
    if images.size and (images.min() < 0 or images.max() > 1):
        raise ValueError("pixel values must lie in [0, 1]")
    return images


def logits(model: ClassifierModel, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    images = _check_images(model, images)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = [model(Tensor(images[i:i + batch_size])).data for i in range(0, len(images), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, model.num_classes), np.float32)


def predict(model: ClassifierModel, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Softmax probabilities H(x), one row of K per image, computed in eval mode."""
    z = logits(model, images, batch_size)
    with no_grad():
        return ops.softmax(Tensor(z), axis=1).data


def predict_labels(model: ClassifierModel, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class per image; ties resolve to the lowest class index."""
    return ops.argmax(logits(model, images, batch_size))


def accuracy(model: ClassifierModel, split: Split) -> float:
    return float((predict_labels(model, split.images) == split.labels).mean())


# -- pretraining ----------------------------------------------------------------

@dataclass
class PretrainConfig:
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-3
    decay_epoch: int | None = None  # learning rate / 10 from this epoch (0-based) on
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    flip: bool = False  # horizontal flip augmentation
    checkpoint: str | None = None


@dataclass
class PretrainResult:
    accuracy: float
    curve: list[float] = field(default_factory=list)  # test accuracy after each epoch; [0] is untrained
    losses: list[float] = field(default_factory=list)  # mean train loss per epoch


def pretrain(model: ClassifierModel, dataset: Dataset, config: PretrainConfig) -> PretrainResult:
    if model.frozen:
        raise ValueError("cannot pretrain a frozen classifier")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), lr=config.learning_rate, betas=config.betas)
    result = PretrainResult(accuracy(model, dataset.test), [])
    result.curve.append(result.accuracy)
    last_good = model.state_dict()
    for epoch in range(config.epochs):
        opt.lr = step_decay(config.learning_rate, epoch, config.decay_epoch)
        model.train()
        total, count = 0.0, 0
        try:
            for xb, yb in batch_iterator(dataset.train, config.batch_size, int(rng.integers(2**31))):
                if config.flip:
                    flip = rng.random(len(xb)) < 0.5
                    xb = np.where(flip[:, None, None, None], xb[..., ::-1], xb)
                opt.zero_grad()
                loss = ops.cross_entropy(model(Tensor(xb)), yb)
                loss.backward()
                opt.step()
                total += loss.item() * len(yb)
                count += len(yb)
        except NonFiniteError as err:
            model.load_state_dict(last_good)
            if config.checkpoint:
                model.save(config.checkpoint)
            raise TrainingDiverged(f"loss diverged in epoch {epoch + 1}; restored last good weights") from err
        last_good = model.state_dict()
        result.losses.append(total / count)
        result.accuracy = accuracy(model, dataset.test)
        result.curve.append(result.accuracy)
        log.info("epoch %d loss %.4f test acc %.4f", epoch + 1, result.losses[-1], result.accuracy)
    model.eval()
    if config.checkpoint:
        model.save(config.checkpoint)
    return result
