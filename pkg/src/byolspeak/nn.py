"""Minimal dense/conv network core with exact reverse-mode gradients.

Networks are flat sequences of layers; parameters live in plain dicts keyed
by "<layer_index>.weight" / "<layer_index>.bias". Spectrogram inputs use a
channels-last (batch, time, freq, channels) layout, chosen so the 3x3
convolution reduces to one GEMM per batch (the windowed columns over the
flattened (freq, channels) axis are gathered nearly contiguously).

Training runs in float32; grad_check promotes everything to float64 so the
central-difference comparison is meaningful.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Params = dict[str, np.ndarray]

_tls = threading.local()


def _scratch(shape: tuple, dtype, zeroed: bool = False) -> np.ndarray:
    """Reusable per-thread buffer; avoids refaulting large pages every call.

    Buffers handed out here must stay private to one forward/backward call.
    zeroed=True guarantees an all-zero buffer on first allocation only; the
    caller owns keeping the zero regions zero across reuses.
    """
    pool = getattr(_tls, "pool", None)
    if pool is None:
        pool = _tls.pool = {}
    key = (shape, np.dtype(dtype).str)
    buf = pool.get(key)
    if buf is None:
        buf = np.zeros(shape, dtype) if zeroed else np.empty(shape, dtype)
        pool[key] = buf
    return buf


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0
    out_dim: int = 0


def conv2d(out_channels: int) -> LayerSpec:
    """3x3 convolution, stride 1, zero padding 1 (shape-preserving)."""
    return LayerSpec("conv2d", out_channels=out_channels)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool() -> LayerSpec:
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""
    return LayerSpec("maxpool")


def global_time_mean() -> LayerSpec:
    """Mean over the time axis of a (batch, time, freq, channels) tensor."""
    return LayerSpec("global_time_mean")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def linear(out_dim: int) -> LayerSpec:
    return LayerSpec("linear", out_dim=out_dim)


NetworkSpec = tuple[LayerSpec, ...]

KIND_CODES = {"conv2d": 0, "relu": 1, "maxpool": 2, "global_time_mean": 3, "flatten": 4, "linear": 5}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


def default_encoder(embedding_dim: int = 512, widths: Sequence[int] = (32, 64, 64)) -> NetworkSpec:
    """Conv stack pooling a (100, 64) segment down to a single vector."""
    layers: list[LayerSpec] = []
    for w in widths:
        layers += [conv2d(w), relu(), maxpool()]
    layers += [global_time_mean(), flatten(), linear(embedding_dim)]
    return tuple(layers)


def default_projector(hidden: int = 1024, out_dim: int = 128) -> NetworkSpec:
    return (linear(hidden), relu(), linear(out_dim))


def default_predictor(hidden: int = 1024, out_dim: int = 128) -> NetworkSpec:
    return (linear(hidden), relu(), linear(out_dim))


class ShapeError(ValueError):
    """Input/parameter shape inconsistency; the message names the layer."""


def infer_shapes(spec: NetworkSpec, input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Per-layer output shapes (batch dimension excluded)."""
    shape = tuple(input_shape)
    out = []
    for i, layer in enumerate(spec):
        k = layer.kind
        if k == "conv2d":
            if len(shape) != 3:
                raise ShapeError(f"layer {i} (conv2d): needs (T, F, C) input, got {shape}")
            shape = (shape[0], shape[1], layer.out_channels)
        elif k == "maxpool":
            if len(shape) != 3:
                raise ShapeError(f"layer {i} (maxpool): needs (T, F, C) input, got {shape}")
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
            if shape[0] < 1 or shape[1] < 1:
                raise ShapeError(f"layer {i} (maxpool): pooled away all cells")
        elif k == "global_time_mean":
            if len(shape) != 3:
                raise ShapeError(f"layer {i} (global_time_mean): needs (T, F, C) input, got {shape}")
            shape = (shape[1], shape[2])
        elif k == "flatten":
            shape = (int(np.prod(shape)),)
        elif k == "linear":
            if len(shape) != 1:
                raise ShapeError(f"layer {i} (linear): needs flat input, got {shape}")
            shape = (layer.out_dim,)
        elif k != "relu":
            raise ShapeError(f"layer {i}: unknown kind {k!r}")
        out.append(shape)
    return out


def output_dim(spec: NetworkSpec, input_shape: tuple[int, ...]) -> int:
    final = infer_shapes(spec, input_shape)[-1]
    if len(final) != 1:
        raise ShapeError(f"network output is not a vector: {final}")
    return final[0]


def init_params(
    spec: NetworkSpec,
    input_shape: tuple[int, ...],
    rng: np.random.Generator,
    dtype=np.float32,
) -> Params:
    """Kaiming-uniform weights, zero biases."""
    shapes = [tuple(input_shape)] + infer_shapes(spec, input_shape)
    params: Params = {}
    for i, layer in enumerate(spec):
        if layer.kind == "conv2d":
            c_in = shapes[i][-1]
            fan_in = 9 * c_in
            bound = np.sqrt(6.0 / fan_in)
            params[f"{i}.weight"] = rng.uniform(-bound, bound, (3, 3, c_in, layer.out_channels)).astype(dtype)
            params[f"{i}.bias"] = np.zeros(layer.out_channels, dtype=dtype)
        elif layer.kind == "linear":
            d_in = shapes[i][0]
            bound = np.sqrt(6.0 / d_in)
            params[f"{i}.weight"] = rng.uniform(-bound, bound, (d_in, layer.out_dim)).astype(dtype)
            params[f"{i}.bias"] = np.zeros(layer.out_dim, dtype=dtype)
    return params


def _conv_cols(x: np.ndarray, cols_buf: np.ndarray | None) -> np.ndarray:
    """Gather 3x3 windows of a zero-padded (N, T, F, C) tensor into (N*T*F, 9C)."""
    n, t, f, c = x.shape
    # the pad border is written only at first allocation and stays zero
    xp = _scratch((n, t + 2, f + 2, c), x.dtype, zeroed=True)
    xp[:, 1:-1, 1:-1, :] = x
    flat = xp.reshape(n, t + 2, (f + 2) * c)
    cols = np.empty((n, t, f, 3, 3 * c), dtype=x.dtype) if cols_buf is None else cols_buf
    for u in range(3):
        cols[:, :, :, u, :] = sliding_window_view(flat[:, u : u + t, :], 3 * c, axis=2)[:, :, ::c, :]
    return cols.reshape(n * t * f, 9 * c)


def _conv_forward(x, weight, bias, cols_buf=None):
    n, t, f, _ = x.shape
    cols = _conv_cols(x, cols_buf)
    out = cols @ weight.reshape(-1, weight.shape[-1])
    out += bias
    return out.reshape(n, t, f, weight.shape[-1]), cols


def _conv_input_grad(dy, weight):
    # gradient wrt input is the shape-preserving conv of dy with the
    # spatially flipped, channel-transposed kernel
    w_rot = weight[::-1, ::-1].transpose(0, 1, 3, 2)
    n, t, f, c = dy.shape
    buf = _scratch((n, t, f, 3, 3 * c), dy.dtype)
    out, _ = _conv_forward(dy, np.ascontiguousarray(w_rot), np.zeros(w_rot.shape[-1], dtype=dy.dtype), buf)
    return out


_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _pool_windows(x, t2, f2):
    """The four strided 2x2-window views of a (N, T, F, C) tensor."""
    return [x[:, dt : dt + 2 * t2 : 2, df : df + 2 * f2 : 2, :] for dt, df in _POOL_OFFSETS]


def network_forward(
    spec: NetworkSpec,
    params: Params,
    x: np.ndarray,
    want_trace: bool = True,
    arena: dict | None = None,
):
    """Run the layer stack; the trace carries what backward needs.

    Returns (output, trace). With want_trace=False the trace is None and the
    pass skips all caching (used for the gradient-free target network). An
    arena dict recycles the large traced column buffers across calls; pass
    one only when each trace is consumed before the next arena-backed call.
    """
    trace: list | None = [] if want_trace else None
    for i, layer in enumerate(spec):
        k = layer.kind
        if k == "conv2d":
            w = params[f"{i}.weight"]
            if x.ndim != 4 or x.shape[-1] != w.shape[2]:
                raise ShapeError(f"layer {i} (conv2d): input {x.shape} vs kernel {w.shape}")
            n, t, f, c = x.shape
            cols_shape = (n, t, f, 3, 3 * c)
            if trace is None:
                buf = _scratch(cols_shape, x.dtype)
            elif arena is not None:
                key = (i, cols_shape, np.dtype(x.dtype).str)
                buf = arena.get(key)
                if buf is None:
                    buf = arena[key] = np.empty(cols_shape, dtype=x.dtype)
            else:
                buf = None
            x, cols = _conv_forward(x, w, params[f"{i}.bias"], buf)
            if trace is not None:
                trace.append(cols)
        elif k == "relu":
            if trace is None:
                x = np.maximum(x, 0.0)
            else:
                mask = x > 0
                x = np.where(mask, x, x.dtype.type(0))
                trace.append(mask)
        elif k == "maxpool":
            if x.ndim != 4:
                raise ShapeError(f"layer {i} (maxpool): needs 4-D input, got {x.shape}")
            n, t, f, c = x.shape
            t2, f2 = t // 2, f // 2
            if t2 < 1 or f2 < 1:
                raise ShapeError(f"layer {i} (maxpool): input {x.shape} too small")
            w00, w01, w10, w11 = _pool_windows(x, t2, f2)
            if trace is None:
                x = np.maximum(np.maximum(w00, w01), np.maximum(w10, w11))
            else:
                # strict comparisons route ties to the earliest window slot
                right_top = w01 > w00
                right_bot = w11 > w10
                top = np.where(right_top, w01, w00)
                bot = np.where(right_bot, w11, w10)
                bot_wins = bot > top
                x = np.where(bot_wins, bot, top)
                trace.append((right_top, right_bot, bot_wins, (n, t, f, c)))
        elif k == "global_time_mean":
            if x.ndim != 4:
                raise ShapeError(f"layer {i} (global_time_mean): needs 4-D input, got {x.shape}")
            n_t = x.shape[1]
            x = x.mean(axis=1)
            if trace is not None:
                trace.append(n_t)
        elif k == "flatten":
            shape = x.shape
            x = x.reshape(shape[0], -1)
            if trace is not None:
                trace.append(shape)
        elif k == "linear":
            w = params[f"{i}.weight"]
            if x.ndim != 2 or x.shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} (linear): input {x.shape} vs weight {w.shape}")
            xin = x
            x = x @ w + params[f"{i}.bias"]
            if trace is not None:
                trace.append(xin)
        else:
            raise ShapeError(f"layer {i}: unknown kind {k!r}")
    return x, trace


def network_backward(
    spec: NetworkSpec,
    params: Params,
    trace: list,
    grad_output: np.ndarray,
    need_input_grad: bool = True,
):
    """Exact gradients of the traced forward pass.

    Returns (param_grads, grad_input); param_grads is congruent to params.
    With need_input_grad=False the gradient through the first layer's input
    is skipped (grad_input is None), which saves the largest convolution.
    """
    if trace is None or len(trace) != len(spec):
        raise ValueError("trace does not match network spec (stale or truncated)")
    grads: Params = {}
    dy = grad_output
    for i in range(len(spec) - 1, -1, -1):
        layer, cache = spec[i], trace[i]
        k = layer.kind
        last = i == 0 and not need_input_grad
        if k == "conv2d":
            w = params[f"{i}.weight"]
            cols = cache
            dy_flat = np.ascontiguousarray(dy).reshape(-1, w.shape[-1])
            grads[f"{i}.weight"] = (cols.T @ dy_flat).reshape(w.shape)
            grads[f"{i}.bias"] = dy_flat.sum(axis=0)
            dy = None if last else _conv_input_grad(dy, w)
        elif k == "relu":
            dy = None if last else dy * cache
        elif k == "maxpool":
            if last:
                dy = None
                continue
            right_top, right_bot, bot_wins, (n, t, f, c) = cache
            t2, f2 = t // 2, f // 2
            zero = dy.dtype.type(0)
            top_g = np.where(bot_wins, zero, dy)
            bot_g = np.where(bot_wins, dy, zero)
            dx = np.zeros((n, t, f, c), dtype=dy.dtype)
            d00, d01, d10, d11 = _pool_windows(dx, t2, f2)
            d00[...] = np.where(right_top, zero, top_g)
            d01[...] = np.where(right_top, top_g, zero)
            d10[...] = np.where(right_bot, zero, bot_g)
            d11[...] = np.where(right_bot, bot_g, zero)
            dy = dx
        elif k == "global_time_mean":
            n_t = cache
            dy = None if last else np.broadcast_to((dy / n_t)[:, None, :, :], (dy.shape[0], n_t) + dy.shape[1:])
        elif k == "flatten":
            dy = None if last else dy.reshape(cache)
        elif k == "linear":
            xin = cache
            grads[f"{i}.weight"] = xin.T @ dy
            grads[f"{i}.bias"] = dy.sum(axis=0)
            dy = None if last else dy @ params[f"{i}.weight"].T
    return grads, dy


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates plus hyperparameters; functional updates."""

    m: Params
    v: Params
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: Params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = lambda: {k: np.zeros_like(v) for k, v in params.items()}
    return AdamState(m=zeros(), v=zeros(), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: Params, grads: Params, state: AdamState) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update; halts loudly on non-finite gradients."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")
    t = state.t + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_p[k] = p - step.astype(p.dtype)
        new_m[k], new_v[k] = m, v
    return new_p, replace(state, m=new_m, v=new_v, t=t)


def grad_check(
    spec: NetworkSpec,
    params: Params,
    x: np.ndarray,
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    step: float = 1e-4,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error of analytic vs central-difference parameter gradients.

    loss_fn maps the network output to (scalar loss, d loss / d output).
    Checks every parameter unless `sample` caps the per-tensor count. Runs in
    float64 regardless of the incoming dtype.
    """
    params = {k: v.astype(np.float64) for k, v in params.items()}
    x = x.astype(np.float64)
    n_params = sum(v.size for v in params.values())
    if sample is None and n_params > 10_000:
        raise ValueError(f"{n_params} parameters; pass sample= to spot-check large networks")

    out, trace = network_forward(spec, params, x)
    _, grad_out = loss_fn(out)
    analytic, _ = network_backward(spec, params, trace, grad_out)

    def loss_at(p: Params) -> float:
        o, _ = network_forward(spec, p, x, want_trace=False)
        return loss_fn(o)[0]

    worst = 0.0
    for name, tensor in params.items():
        flat_indices = np.arange(tensor.size)
        if sample is not None and tensor.size > sample:
            gen = rng or np.random.default_rng(0)
            flat_indices = gen.choice(tensor.size, size=sample, replace=False)
        for j in flat_indices:
            idx = np.unravel_index(j, tensor.shape)
            orig = tensor[idx]
            tensor[idx] = orig + step
            up = loss_at(params)
            tensor[idx] = orig - step
            down = loss_at(params)
            tensor[idx] = orig
            numeric = (up - down) / (2 * step)
            a = analytic[name][idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, err)
    return worst
