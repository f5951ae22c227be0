"""Layer primitives: parameter containers around the ops catalog.

Modules register parameters and buffers by attribute assignment and expose
them under stable dotted names for checkpointing.  A `frozen_parameters`
context makes every layer read its weights through `detach()`, which is how
the cycle loss trains the dynamics/memory path without touching the
renderer's weights.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import ops
from .rng import SeedStream
from .tensor import ShapeError, Tensor, no_grad

_FROZEN = [False]


@contextmanager
def frozen_parameters():
    """Parameters read inside the context are detached from the tape."""
    _FROZEN[0] = True
    try:
        yield
    finally:
        _FROZEN[0] = False


def use(param: Tensor) -> Tensor:
    return param.detach() if _FROZEN[0] else param


LEAKY_SLOPE = 0.2


def kaiming_uniform(rng: SeedStream, shape, fan_in: int) -> np.ndarray:
    gain = np.sqrt(2.0 / (1.0 + LEAKY_SLOPE ** 2))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array: np.ndarray):
        self._buffers[name] = name
        object.__setattr__(self, name, np.asarray(array, dtype=np.float32))

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in self._buffers:
            yield (f"{prefix}{name}", getattr(self, name))
        for name, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def state(self) -> dict:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({name: b for name, b in self.named_buffers()})
        return out

    def load_state(self, state: dict, prefix: str = ""):
        for name, p in self.named_parameters(prefix):
            if name not in state:
                raise KeyError(f"missing parameter '{name}' in state")
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter '{name}' shape {arr.shape} != {p.data.shape}")
            p.data[...] = arr
        for name, buf in self.named_buffers(prefix):
            if name not in state:
                raise KeyError(f"missing buffer '{name}' in state")
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != buf.shape:
                raise ShapeError(f"buffer '{name}' shape {arr.shape} != {buf.shape}")
            buf[...] = arr

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(layers):
            if isinstance(layer, Module):
                self._modules[str(i)] = layer

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x) if isinstance(layer, Module) else layer(x)
        return x


class LeakyReLU(Module):
    def __init__(self, slope: float = LEAKY_SLOPE):
        super().__init__()
        self.slope = slope

    def __call__(self, x):
        return ops.leaky_relu(x, self.slope)


class Tanh(Module):
    def __call__(self, x):
        return ops.tanh(x)


class Sigmoid(Module):
    def __call__(self, x):
        return ops.sigmoid(x)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: SeedStream, bias: bool = True):
        super().__init__()
        self.weight = Tensor(kaiming_uniform(rng, (in_dim, out_dim), in_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x):
        return ops.linear(x, use(self.weight), use(self.bias) if self.bias is not None else None)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng: SeedStream, stride=1, padding=0, bias=True):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        fan_in = in_ch * kh * kw
        self.weight = Tensor(kaiming_uniform(rng, (out_ch, in_ch, kh, kw), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        y = ops.conv2d(x, use(self.weight), stride=self.stride, padding=self.padding)
        if self.bias is not None:
            y = ops.add(y, ops.reshape(use(self.bias), (1, self.bias.shape[0], 1, 1)))
        return y


class ConvTranspose2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng: SeedStream, stride=1, padding=0,
                 output_padding=0, bias=True):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        fan_in = in_ch * kh * kw
        self.weight = Tensor(kaiming_uniform(rng, (in_ch, out_ch, kh, kw), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding

    def __call__(self, x):
        y = ops.conv_transpose2d(x, use(self.weight), stride=self.stride,
                                 padding=self.padding, output_padding=self.output_padding)
        if self.bias is not None:
            y = ops.add(y, ops.reshape(use(self.bias), (1, self.bias.shape[0], 1, 1)))
        return y


class Conv3d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng: SeedStream, stride=1, padding=0, bias=True):
        super().__init__()
        k = (kernel,) * 3 if isinstance(kernel, int) else tuple(kernel)
        fan_in = in_ch * int(np.prod(k))
        self.weight = Tensor(kaiming_uniform(rng, (out_ch, in_ch) + k, fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        y = ops.conv3d(x, use(self.weight), stride=self.stride, padding=self.padding)
        if self.bias is not None:
            y = ops.add(y, ops.reshape(use(self.bias), (1, self.bias.shape[0], 1, 1, 1)))
        return y


class BatchNorm(Module):
    """Batch normalization over all axes except channel (works for 1d/2d/3d data)."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(num_features, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=np.float32), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(num_features, dtype=np.float32))
        self.register_buffer("running_var", np.ones(num_features, dtype=np.float32))
        self.momentum = momentum
        self.eps = eps
        self.num_features = num_features

    def _param_shape(self, x):
        return (1, self.num_features) + (1,) * (x.ndim - 2)

    def __call__(self, x):
        if x.ndim < 2 or x.shape[1] != self.num_features:
            raise ShapeError(f"batch_norm expects channel dim {self.num_features}, got {tuple(x.shape)}")
        axes = (0,) + tuple(range(2, x.ndim))
        shape = self._param_shape(x)
        if self.training:
            mu, xc, var = ops.moments(x, axes)
            xn = ops.mul(xc, ops.pow_const(ops.add_scalar(var, self.eps), -0.5))
            with no_grad():
                n = x.size // self.num_features
                bm = mu.data.reshape(self.num_features)
                bv = var.data.reshape(self.num_features)
                if n > 1:
                    bv = bv * (n / (n - 1.0))
                self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * bm
                self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * bv
        else:
            rm = ops.reshape(Tensor(self.running_mean), shape)
            rv = ops.reshape(Tensor(self.running_var), shape)
            xn = ops.mul(ops.sub(x, rm), ops.pow_const(ops.add_scalar(rv, self.eps), -0.5))
        g = ops.reshape(use(self.gamma), shape)
        b = ops.reshape(use(self.beta), shape)
        return ops.add(ops.mul(xn, g), b)


class InstanceNorm(Module):
    """Per-sample, per-channel normalization; optionally affine."""

    def __init__(self, num_features: int, affine: bool = False, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.num_features = num_features
        if affine:
            self.gamma = Tensor(np.ones(num_features, dtype=np.float32), requires_grad=True)
            self.beta = Tensor(np.zeros(num_features, dtype=np.float32), requires_grad=True)
        else:
            self.gamma = None
            self.beta = None

    def __call__(self, x):
        y = ops.instance_norm(x, self.eps)
        if self.gamma is not None:
            shape = (1, self.num_features) + (1,) * (x.ndim - 2)
            y = ops.add(ops.mul(y, ops.reshape(use(self.gamma), shape)),
                        ops.reshape(use(self.beta), shape))
        return y


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: SeedStream):
        super().__init__()
        self.table = Tensor(rng.normal((count, dim), scale=0.1), requires_grad=True)

    def __call__(self, indices):
        return ops.embedding(use(self.table), indices)
