"""Neural network primitives and parameter containers built on ``autograd``."""
from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from .autograd import Variable, as_variable, make_node, max_, reshape, transpose

BN_MOMENTUM = 0.9
NORM_EPS = 1e-5


# --- functional ops -----------------------------------------------------------
def conv2d_cf(x, weight, bias, padding: int = 0) -> Variable:
    """Stride-1 convolution on channel-first batches (C, B, H, W) -> (O, B, H', W').

    Channel-first keeps every im2col copy and the output matmul free of
    transposes; :func:`conv2d` wraps it for the usual layouts.
    """
    x, weight, bias = as_variable(x), as_variable(weight), as_variable(bias)
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ValueError(f"weight must be (C_out, C_in, k, k), got {weight.shape}")
    if x.ndim != 4:
        raise ValueError(f"conv2d_cf input must be (C,B,H,W), got {x.shape}")
    C, B, H, W = x.shape
    O, C_in, k, _ = weight.shape
    if C != C_in:
        raise ValueError(f"input has {C} channels but weight expects {C_in}")
    if bias.shape != (O,):
        raise ValueError(f"bias must have shape ({O},), got {bias.shape}")
    p = padding
    Ho, Wo = H + 2 * p - k + 1, W + 2 * p - k + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(f"kernel {k} larger than padded input {H}x{W}")

    if p:
        xp = np.zeros((C, B, H + 2 * p, W + 2 * p), dtype=x.dtype)
        xp[:, :, p:p + H, p:p + W] = x.data
    else:
        xp = x.data
    cols = np.empty((C, k, k, B, Ho, Wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + Ho, j:j + Wo]
    cols = cols.reshape(C * k * k, B * Ho * Wo)
    wmat = weight.data.reshape(O, -1)
    out = wmat @ cols
    out += bias.data[:, None]

    def backward(g):
        gmat = g.reshape(O, -1)
        gw = (gmat @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = gmat.sum(axis=1) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gmat).reshape(C, k, k, B, Ho, Wo)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + Ho, j:j + Wo] += gcols[:, i, j]
            gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        return gx, gw, gb

    return make_node(out.reshape(O, B, Ho, Wo), (x, weight, bias), backward, "conv2d")


def conv2d(x, weight, bias, padding: int = 0) -> Variable:
    """Stride-1 2-D convolution (cross-correlation) on (C,H,W) or (B,C,H,W)."""
    x = as_variable(x)
    if x.ndim == 3:
        out = conv2d_cf(reshape(x, (x.shape[0], 1) + x.shape[1:]), weight, bias, padding)
        return reshape(out, (out.shape[0],) + out.shape[2:])
    if x.ndim == 4:
        out = conv2d_cf(transpose(x, (1, 0, 2, 3)), weight, bias, padding)
        return transpose(out, (1, 0, 2, 3))
    raise ValueError(f"conv2d input must be (C,H,W) or (B,C,H,W), got {x.shape}")


def maxpool2d(x, k: int = 2) -> Variable:
    """Non-overlapping k x k max pooling over the last two axes.

    Remainder rows/cols are dropped; ties go to the first cell of the window
    in row-major order.
    """
    x = as_variable(x)
    if k <= 0:
        raise ValueError(f"pool size must be positive, got {k}")
    if x.ndim < 2:
        raise ValueError(f"maxpool2d needs at least 2 dims, got {x.shape}")
    H, W = x.shape[-2:]
    if H < k or W < k:
        raise ValueError(f"input {H}x{W} smaller than pool size {k}")
    Ho, Wo = H // k, W // k
    offsets = [(i, j) for i in range(k) for j in range(k)]

    def cell(a, i, j):
        return a[..., i:Ho * k:k, j:Wo * k:k]

    out = cell(x.data, 0, 0).copy()
    for i, j in offsets[1:]:
        np.maximum(out, cell(x.data, i, j), out=out)

    def backward(g):
        gx = np.zeros_like(x.data)
        taken = np.zeros(out.shape, dtype=bool)
        for i, j in offsets:
            hit = cell(x.data, i, j) == out
            hit &= ~taken
            taken |= hit
            cell(gx, i, j)[...] = g * hit
        return (gx,)

    return make_node(out, (x,), backward, "maxpool2d")


def global_maxpool(x) -> Variable:
    """(..., C, H, W) -> (..., C): per-channel max over every spatial bin."""
    x = as_variable(x)
    if x.ndim < 3 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ValueError(f"global_maxpool expects (..., C, H, W), got {x.shape}")
    flat = reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))
    return max_(flat, axis=-1)


def linear(x, weight, bias) -> Variable:
    """Affine map on (D,) or (B, D) inputs with weight (K, D)."""
    x, weight, bias = as_variable(x), as_variable(weight), as_variable(bias)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input dim {x.shape[-1]} does not match weight {weight.shape}")
    out = x.data @ weight.data.T + bias.data

    def backward(g):
        g2 = np.atleast_2d(g)
        x2 = np.atleast_2d(x.data)
        gx = (g @ weight.data) if x.requires_grad else None
        return gx, g2.T @ x2, g2.sum(axis=0)

    return make_node(out, (x, weight, bias), backward, "linear")


def _normalize(xd: np.ndarray, axes, eps: float):
    mu = xd.mean(axis=axes, keepdims=True)
    d = xd - mu
    var = (d * d).mean(axis=axes, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    d *= invstd
    return d, mu, var, invstd


def _normalize_backward(gh: np.ndarray, xhat: np.ndarray, invstd: np.ndarray, axes) -> np.ndarray:
    n = int(np.prod([xhat.shape[a] for a in axes]))
    s1 = gh.sum(axis=axes, keepdims=True)
    s2 = (gh * xhat).sum(axis=axes, keepdims=True)
    return invstd / n * (n * gh - s1 - xhat * s2)


def batchnorm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
              training: bool, momentum: float = BN_MOMENTUM, eps: float = NORM_EPS,
              channel_axis: int = 1) -> Variable:
    """Batch normalisation per channel over every other axis.

    Inputs are (B, C) or (B, C, H, W) with the default ``channel_axis=1``;
    channel-first encoder activations use ``channel_axis=0``.  In training
    mode the batch statistics are used and the running buffers are updated in
    place as ``r = momentum * r + (1 - momentum) * batch``.
    """
    x, gamma, beta = as_variable(x), as_variable(gamma), as_variable(beta)
    if x.ndim not in (2, 4):
        raise ValueError(f"batchnorm expects (B,C) or (B,C,H,W), got {x.shape}")
    axes = tuple(a for a in range(x.ndim) if a != channel_axis)
    bshape = tuple(-1 if a == channel_axis else 1 for a in range(x.ndim))
    n = int(np.prod([x.shape[a] for a in axes]))
    if n == 0:
        raise ValueError("batchnorm over an empty batch")
    g_ = gamma.data.reshape(bshape)

    if training:
        xhat, mu, var, invstd = _normalize(x.data, axes, eps)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= momentum
        running_mean += (1 - momentum) * mu.reshape(-1)
        running_var *= momentum
        running_var += (1 - momentum) * unbiased.reshape(-1)
    else:
        invstd = (1.0 / np.sqrt(running_var + eps)).reshape(bshape).astype(x.dtype)
        xhat = (x.data - running_mean.reshape(bshape).astype(x.dtype)) * invstd
    out = g_ * xhat + beta.data.reshape(bshape)

    def backward(g):
        gh = g * g_
        if training:
            gx = _normalize_backward(gh, xhat, invstd, axes)
        else:
            gx = gh * invstd
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_node(out, (x, gamma, beta), backward, "batchnorm")


def layernorm(x, gamma, beta, eps: float = NORM_EPS) -> Variable:
    """Normalise over the last axis, then apply learnable scale and shift."""
    x, gamma, beta = as_variable(x), as_variable(gamma), as_variable(beta)
    if x.shape[-1] == 0:
        raise ValueError("layernorm over a zero-length axis")
    axes = (x.ndim - 1,)
    xhat, _, _, invstd = _normalize(x.data, axes, eps)
    out = gamma.data * xhat + beta.data

    def backward(g):
        gx = _normalize_backward(g * gamma.data, xhat, invstd, axes)
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_node(out, (x, gamma, beta), backward, "layernorm")


# --- parameter containers -----------------------------------------------------
def parameter(data, name: str = "") -> Variable:
    return Variable(data, requires_grad=True, name=name)


class Module:
    """Minimal container: discovers parameters, buffers and child modules."""

    training = True

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Variable, Module, np.ndarray)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Dict[str, Variable]:
        out: Dict[str, Variable] = {}
        for name, value in self._children():
            if isinstance(value, Variable) and value.requires_grad:
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(prefix + name + "."))
        return out

    def named_buffers(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for name, value in self._children():
            if isinstance(value, np.ndarray):
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_buffers(prefix + name + "."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True):
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        """Cast every parameter and buffer in place (used by gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.zero_grad()
        for buf in self._buffer_owners():
            owner, attr = buf
            setattr(owner, attr, getattr(owner, attr).astype(dtype))
        return self

    def _buffer_owners(self):
        for name, value in list(vars(self).items()):
            if isinstance(value, np.ndarray):
                yield self, name
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value._buffer_owners()


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, padding: int,
                 rng: np.random.Generator, channel_first: bool = False):
        self.channel_first = channel_first
        fan_in = in_channels * kernel * kernel
        w = rng.standard_normal((out_channels, in_channels, kernel, kernel)) * np.sqrt(2.0 / fan_in)
        self.weight = parameter(w.astype(np.float32))
        self.bias = parameter(np.zeros(out_channels, dtype=np.float32))
        self.padding = padding

    def __call__(self, x):
        op = conv2d_cf if self.channel_first else conv2d
        return op(x, self.weight, self.bias, self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_features)
        w = rng.uniform(-bound, bound, (out_features, in_features))
        self.weight = parameter(w.astype(np.float32))
        self.bias = parameter(np.zeros(out_features, dtype=np.float32))

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, channel_axis: int = 1):
        self.channel_axis = channel_axis
        self.gamma = parameter(np.ones(channels, dtype=np.float32))
        self.beta = parameter(np.zeros(channels, dtype=np.float32))
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def __call__(self, x):
        return batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                         self.training, channel_axis=self.channel_axis)


class LayerNorm(Module):
    def __init__(self, features: int):
        self.gamma = parameter(np.ones(features, dtype=np.float32))
        self.beta = parameter(np.zeros(features, dtype=np.float32))

    def __call__(self, x):
        return layernorm(x, self.gamma, self.beta)
