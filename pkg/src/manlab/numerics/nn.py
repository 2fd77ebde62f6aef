"""Minimal layer/module system on top of the tensor ops."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor, default_dtype


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Container tracking parameters, buffers and submodules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (own.keys() | bufs.keys()) - state.keys()
        if missing:
            raise KeyError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()
        for name, b in bufs.items():
            arr = np.asarray(state[name], dtype=b.dtype)
            if arr.shape != b.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {b.shape}")
            b[...] = arr

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)
        object.__setattr__(self, "layers", list(layers))

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)


def he_normal(rng: np.random.Generator, shape, fan_in: float) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(default_dtype())


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=default_dtype())


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, pad=0, bias=True, *, rng):
        super().__init__()
        self.stride, self.pad = stride, pad
        self.weight = Parameter(he_normal(rng, (cout, cin, kernel, kernel), cin * kernel * kernel))
        self.bias = Parameter(zeros(cout)) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, pad=0, bias=True, *, rng):
        super().__init__()
        self.stride, self.pad = stride, pad
        fan_in = cin * kernel * kernel / (stride * stride)
        self.weight = Parameter(he_normal(rng, (cin, cout, kernel, kernel), fan_in))
        self.bias = Parameter(zeros(cout)) if bias else None

    def forward(self, x):
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad)


class Linear(Module):
    """y = x @ W + b with W stored as (in_features, out_features)."""

    def __init__(self, fin, fout, bias=True, *, rng):
        super().__init__()
        self.weight = Parameter(he_normal(rng, (fin, fout), fin))
        self.bias = Parameter(zeros(fout)) if bias else None

    def forward(self, x):
        y = ops.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(channels, dtype=default_dtype()))
        self.beta = Parameter(zeros(channels))
        self.register_buffer("running_mean", zeros(channels))
        self.register_buffer("running_var", np.ones(channels, dtype=default_dtype()))

    def forward(self, x):
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class InstanceNorm(Module):
    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=default_dtype()))
        self.beta = Parameter(zeros(channels))

    def forward(self, x):
        return ops.instance_norm(x, self.gamma, self.beta, self.eps)


class ReLU(Module):
    def forward(self, x):
        return ops.relu(x)


class MaxPool(Module):
    def __init__(self, size=2):
        super().__init__()
        self.size = size

    def forward(self, x):
        return ops.max_pool2d(x, self.size)
