"""Classical network kernels with hand-wired backprop, plus Adam.

Every kernel accepts either a single sample (``C,H,W`` / ``d``) or a batch
with a leading batch axis. Arithmetic is float64 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, InputError


def _as_batch(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim:
        return x[None], True
    if x.ndim == ndim + 1:
        return x, False
    raise ConfigurationError(f"expected {ndim}-d sample or {ndim + 1}-d batch, got shape {x.shape}")


# ---------------------------------------------------------------- convolution

def _conv_windows(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if x.shape[2] < k or x.shape[3] < k:
        raise ConfigurationError(
            f"kernel size {k} exceeds padded input spatial size {x.shape[2]}x{x.shape[3]}"
        )
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, kernel, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation ``out[o,i,j] = sum_{c,m,n} x[c,i*s+m,j*s+n] * K[o,c,m,n] + b[o]``."""
    xb, single = _as_batch(x, 3)
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ConfigurationError(f"kernel must be [C_out, C_in, k, k], got {kernel.shape}")
    if kernel.shape[1] != xb.shape[1]:
        raise ConfigurationError(
            f"input channels {xb.shape[1]} do not match kernel in_channels {kernel.shape[1]}"
        )
    if bias.shape != (kernel.shape[0],):
        raise ConfigurationError(f"bias shape {bias.shape} does not match C_out={kernel.shape[0]}")
    win = _conv_windows(xb, kernel.shape[2], stride, padding)
    out = np.einsum("bchwij,ocij->bohw", win, kernel, optimize=True) + bias[None, :, None, None]
    return out[0] if single else out


def conv2d_backward(grad_out, x, kernel, stride: int = 1, padding: int = 0):
    """Return ``(grad_input, grad_kernel, grad_bias)`` for :func:`conv2d_forward`."""
    xb, single = _as_batch(x, 3)
    gb, _ = _as_batch(grad_out, 3)
    kernel = np.asarray(kernel, dtype=np.float64)
    k = kernel.shape[2]
    win = _conv_windows(xb, k, stride, padding)
    grad_kernel = np.einsum("bchwij,bohw->ocij", win, gb, optimize=True)
    grad_bias = gb.sum(axis=(0, 2, 3))

    B, C, H, W = xb.shape
    Ho, Wo = gb.shape[2], gb.shape[3]
    dxp = np.zeros((B, C, H + 2 * padding, W + 2 * padding))
    dwin = np.einsum("bohw,ocij->bchwij", gb, kernel, optimize=True)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dwin[..., i, j]
    dx = dxp[:, :, padding : padding + H, padding : padding + W]
    return (dx[0] if single else dx), grad_kernel, grad_bias


# ---------------------------------------------------------------- activations

def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out, x) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.asarray(grad_out, dtype=np.float64) * (np.asarray(x) > 0)


def _pool_view(xb: np.ndarray, window: int) -> np.ndarray:
    B, C, H, W = xb.shape
    if window < 1 or H % window or W % window:
        raise ConfigurationError(f"pool window {window} does not divide spatial size {H}x{W}")
    return xb.reshape(B, C, H // window, window, W // window, window)


def maxpool2d(x, window: int) -> np.ndarray:
    xb, single = _as_batch(x, 3)
    out = _pool_view(xb, window).max(axis=(3, 5))
    return out[0] if single else out


def maxpool2d_backward(grad_out, x, window: int) -> np.ndarray:
    """Route each upstream gradient to the first argmax of its window."""
    xb, single = _as_batch(x, 3)
    gb, _ = _as_batch(grad_out, 3)
    B, C, H, W = xb.shape
    Ho, Wo = H // window, W // window
    v = _pool_view(xb, window).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, window * window)
    idx = v.argmax(axis=-1)
    mask = np.zeros_like(v)
    np.put_along_axis(mask, idx[..., None], 1.0, axis=-1)
    routed = mask * gb[..., None]
    dx = routed.reshape(B, C, Ho, Wo, window, window).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
    return dx[0] if single else dx


# ---------------------------------------------------------------- dense

def dense_forward(x, W, b) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ConfigurationError(
            f"dense shapes disagree: x {x.shape}, W {W.shape}, b {b.shape}"
        )
    return x @ W.T + b


def dense_backward(grad_out, x, W):
    """Return ``(grad_x, grad_W, grad_b)``; batch gradients are summed."""
    g = np.asarray(grad_out, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    gx = g @ W
    if g.ndim == 1:
        return gx, np.outer(g, x), g.copy()
    return gx, g.T @ x, g.sum(axis=0)


def softmax_cross_entropy(logits, label):
    """Cross-entropy of ``softmax(logits)`` against integer ``label``.

    Accepts a single logit vector with an int label, or a ``[B, m]`` batch with a
    label array; batched calls return per-sample losses and gradients.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None] if single else z
    labels = np.atleast_1d(np.asarray(label))
    m = zb.shape[1]
    if labels.shape[0] != zb.shape[0]:
        raise InputError(f"{labels.shape[0]} labels for {zb.shape[0]} logit rows")
    if np.any(labels < 0) or np.any(labels >= m):
        raise InputError(f"label out of range [0, {m})")
    labels = labels.astype(np.int64)
    shifted = zb - zb.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(zb.shape[0])
    loss = logsum - shifted[rows, labels]
    grad = np.exp(shifted - logsum[:, None])
    grad[rows, labels] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stabilizer: float = 1e-8

    @classmethod
    def zeros_like(cls, params: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(params, dtype=np.float64), np.zeros_like(params, dtype=np.float64), **kw)


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update. Inputs are not mutated."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.first_moment.shape != params.shape:
        raise ConfigurationError(
            f"Adam shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.first_moment.shape}"
        )
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1 - state.beta2) * grads * grads
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon_stabilizer)
    return new, AdamState(m, v, t, state.beta1, state.beta2, state.epsilon_stabilizer)


# ---------------------------------------------------------------- CNN

@dataclass(frozen=True)
class ConvBlockSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    pool_window: int = 2

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_size", "stride", "pool_window"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"ConvBlockSpec.{name} must be positive")
        if self.padding < 0:
            raise ConfigurationError("ConvBlockSpec.padding must be non-negative")


@dataclass(frozen=True)
class CNNSpec:
    """Architecture of the classical feature extractor.

    ``convs_per_block`` convolutions (each followed by ReLU) precede the
    block's max-pool. Dense layers follow the flatten; the last has no ReLU.
    """

    input_shape: tuple[int, int, int]
    block_channels: tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    pool_window: int = 2
    convs_per_block: int = 1
    hidden_units: tuple[int, ...] = (64,)
    output_dim: int = 16

    def conv_layers(self) -> list[tuple[str, ConvBlockSpec, bool]]:
        """``(name, spec, pool_after)`` for every convolution in order."""
        layers = []
        c = self.input_shape[0]
        for b, out_c in enumerate(self.block_channels):
            for j in range(self.convs_per_block):
                last = j == self.convs_per_block - 1
                spec = ConvBlockSpec(c, out_c, self.kernel_size, self.stride, self.padding,
                                     self.pool_window)
                layers.append((f"conv{b + 1}_{j + 1}", spec, last))
                c = out_c
        return layers

    def flat_dim(self) -> int:
        c, h, w = self.input_shape
        for _, s, pool in self.conv_layers():
            h = (h + 2 * s.padding - s.kernel_size) // s.stride + 1
            w = (w + 2 * s.padding - s.kernel_size) // s.stride + 1
            if h < 1 or w < 1:
                raise ConfigurationError(f"spatial size collapsed to {h}x{w}; input too small")
            c = s.out_channels
            if pool:
                if h % s.pool_window or w % s.pool_window:
                    raise ConfigurationError(
                        f"pool window {s.pool_window} does not divide post-conv size {h}x{w}"
                    )
                h //= s.pool_window
                w //= s.pool_window
        return c * h * w

    def dense_layers(self) -> list[tuple[str, int, int]]:
        dims = [self.flat_dim(), *self.hidden_units, self.output_dim]
        return [(f"fc{i + 1}", dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_cnn(spec: CNNSpec, rng: np.random.Generator) -> dict[str, dict[str, np.ndarray]]:
    params = {}
    for name, s, _ in spec.conv_layers():
        k = s.kernel_size
        shape = (s.out_channels, s.in_channels, k, k)
        params[name] = {
            "weight": glorot_uniform(rng, shape, s.in_channels * k * k, s.out_channels * k * k),
            "bias": np.zeros(s.out_channels),
        }
    for name, d_in, d_out in spec.dense_layers():
        params[name] = {
            "weight": glorot_uniform(rng, (d_out, d_in), d_in, d_out),
            "bias": np.zeros(d_out),
        }
    return params


def cnn_forward(x, params, spec: CNNSpec):
    """Run the CNN on a ``[B,C,H,W]`` batch (or a single image).

    Returns ``(features, cache)``; ``cache`` feeds :func:`cnn_backward`.
    """
    xb, single = _as_batch(x, 3)
    if tuple(xb.shape[1:]) != tuple(spec.input_shape):
        raise ConfigurationError(
            f"input shape {tuple(xb.shape[1:])} does not match configured {tuple(spec.input_shape)}"
        )
    cache = []
    h = xb
    for name, s, pool in spec.conv_layers():
        p = params[name]
        pre = conv2d_forward(h, p["weight"], p["bias"], s.stride, s.padding)
        act = relu(pre)
        out = maxpool2d(act, s.pool_window) if pool else act
        cache.append(("conv", name, s, pool, h, pre, act))
        h = out
    flat_shape = h.shape
    h = h.reshape(h.shape[0], -1)
    dense = spec.dense_layers()
    for i, (name, _, _) in enumerate(dense):
        p = params[name]
        pre = dense_forward(h, p["weight"], p["bias"])
        last = i == len(dense) - 1
        cache.append(("dense", name, last, h, pre))
        h = pre if last else relu(pre)
    cache.append(("flat", flat_shape))
    return (h[0] if single else h), cache


def cnn_backward(grad_out, cache, params, spec: CNNSpec):
    """Backprop ``grad_out`` (d loss / d features) into per-layer parameter grads."""
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None]
    flat_shape = cache[-1][1]
    grads: dict[str, dict[str, np.ndarray]] = {}
    for entry in reversed(cache[:-1]):
        if entry[0] == "dense":
            _, name, last, x_in, pre = entry
            if not last:
                g = relu_backward(g, pre)
            g, gw, gb = dense_backward(g, x_in, params[name]["weight"])
            grads[name] = {"weight": gw, "bias": gb}
        else:
            if g.ndim == 2:
                g = g.reshape(flat_shape)
            _, name, s, pool, x_in, pre, act = entry
            if pool:
                g = maxpool2d_backward(g, act, s.pool_window)
            g = relu_backward(g, pre)
            g, gk, gb = conv2d_backward(g, x_in, params[name]["weight"], s.stride, s.padding)
            grads[name] = {"weight": gk, "bias": gb}
    return grads
