"""Minimal module system: parameter naming, train/eval mode, buffers."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import ConfigError, Parameter, Tensor, get_default_dtype


class Module:
    """Base class.  Child modules and parameters are discovered from attributes
    in assignment order, which makes parameter paths deterministic."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, child in self.children():
            yield from child.named_modules(f"{prefix}.{key}" if prefix else key)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffer_names", ()):
            yield (f"{prefix}.{name}" if prefix else name), getattr(self, name)
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}.{key}" if prefix else key)

    def assign_names(self) -> None:
        for path, p in self.named_parameters():
            p.name = path

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(own) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, p in own.items():
            src = np.asarray(state[name])
            if src.shape != p.shape:
                raise ValueError(f"{name}: shape {src.shape} != {p.shape}")
            p.data = src.astype(p.dtype, copy=True)
        for name, buf in buffers.items():
            buf[...] = state[name]

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()], dtype=np.int64))


def kaiming_normal_fan_out(rng: np.random.Generator, shape, groups: int = 1) -> np.ndarray:
    """He-normal init scaled by fan-out (out channels x kernel area / groups)."""
    fan_out = shape[0] * int(np.prod(shape[2:])) // groups
    return rng.normal(0.0, math.sqrt(2.0 / max(fan_out, 1)), size=shape)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, groups: int = 1, bias: bool = False, dtype=None):
        dtype = dtype or get_default_dtype()
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.groups = stride, groups
        self.padding = (k - 1) // 2 if padding is None else padding
        if cin % groups or cout % groups:
            raise ConfigError(f"Conv2d({cin}->{cout}) not divisible by groups={groups}")
        self.weight = Parameter(kaiming_normal_fan_out(rng, (cout, cin // groups, k, k), groups), dtype=dtype)
        self.bias = Parameter(np.zeros(cout), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return (F.conv_output_size(h, self.k, self.stride, self.padding),
                F.conv_output_size(w, self.k, self.stride, self.padding))

    def macs(self, ho: int, wo: int) -> int:
        return ho * wo * self.cout * (self.cin // self.groups) * self.k * self.k


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5, zero_init: bool = False, dtype=None):
        dtype = dtype or get_default_dtype()
        self.c, self.momentum, self.eps = c, momentum, eps
        self.weight = Parameter(np.zeros(c) if zero_init else np.ones(c), dtype=dtype)
        self.bias = Parameter(np.zeros(c), dtype=dtype)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm2d(x, self.weight, self.bias, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, bias: bool = True, dtype=None):
        dtype = dtype or get_default_dtype()
        self.cin, self.cout = cin, cout
        self.weight = Parameter(rng.normal(0.0, 0.01, size=(cout, cin)), dtype=dtype)
        self.bias = Parameter(np.zeros(cout), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)
