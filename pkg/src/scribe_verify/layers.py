"""Parameterized building blocks: a minimal module tree plus the layers the backbones need."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    """A leaf tensor owned by a module and updated by the optimizer."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Base class; parameters, buffers and submodules are discovered from attributes.

    Attribute assignment order defines parameter order, so names and
    enumeration are stable across runs.
    """

    training: bool = True

    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield f"{prefix}{name}", value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = {name: (m, key) for m, name, key in self._buffer_owners()}
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = np.ascontiguousarray(value, dtype=p.dtype)
        for name, (m, key) in buffers.items():
            current = m._buffers[key]
            m._buffers[key] = np.ascontiguousarray(state[name], dtype=current.dtype).reshape(current.shape)

    def _buffer_owners(self, prefix: str = ""):
        for key in self._buffers:
            yield self, f"{prefix}{key}", key
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value._buffer_owners(f"{prefix}{name}.")

    def astype(self, dtype) -> "Module":
        """Cast parameters and buffers in place (float64 is for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for key, value in m._buffers.items():
                m._buffers[key] = value.astype(dtype)
        return self


def kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE)


def trunc_normal(shape: tuple[int, ...], std: float, rng: np.random.Generator) -> np.ndarray:
    """Normal(0, std) truncated to [-2 std, 2 std] by resampling."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(DEFAULT_DTYPE)


class Linear(Module):
    """``y = x @ weight + bias`` with weight stored as ``[in, out]``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = Parameter(kaiming_uniform((in_features, out_features), in_features, rng))
        self.bias = Parameter(np.zeros(out_features, dtype=DEFAULT_DTYPE)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = False,
    ):
        super().__init__()
        self.stride, self.padding, self.groups = stride, padding, groups
        fan_in = in_channels // groups * kernel_size * kernel_size
        shape = (out_channels, in_channels // groups, kernel_size, kernel_size)
        self.weight = Parameter(kaiming_uniform(shape, fan_in, rng))
        self.bias = Parameter(np.zeros(out_channels, dtype=DEFAULT_DTYPE)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class BatchNorm(Module):
    """Batch-statistic normalization with learned affine and running estimates.

    Training mode normalizes with the current batch and updates the running
    mean/variance; eval mode uses the running estimates, so outputs are
    independent of batch composition.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(channels, dtype=DEFAULT_DTYPE))
        self.beta = Parameter(np.zeros(channels, dtype=DEFAULT_DTYPE))
        self.register_buffer("running_mean", np.zeros(channels, dtype=DEFAULT_DTYPE))
        self.register_buffer("running_var", np.ones(channels, dtype=DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        view = (1, -1) + (1,) * (x.ndim - 2)
        if self.training:
            y, mu, var = F.batch_stat_norm(x, self.eps, return_stats=True)
            count = x.size // x.shape[1]
            unbiased = var * (count / max(count - 1, 1))
            m = self.momentum
            rm, rv = self._buffers["running_mean"], self._buffers["running_var"]
            self._buffers["running_mean"] = ((1 - m) * rm + m * mu).astype(rm.dtype)
            self._buffers["running_var"] = ((1 - m) * rv + m * unbiased).astype(rv.dtype)
        else:
            rm, rv = self._buffers["running_mean"], self._buffers["running_var"]
            scale = 1.0 / np.sqrt(rv + self.eps)
            y = (x - Tensor(rm.reshape(view))) * Tensor(scale.reshape(view).astype(rv.dtype))
        return y * self.gamma.reshape(view) + self.beta.reshape(view)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=DEFAULT_DTYPE))
        self.beta = Parameter(np.zeros(dim, dtype=DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, -1, self.eps) * self.gamma + self.beta
