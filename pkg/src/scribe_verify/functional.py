"""Differentiable network ops built on :mod:`scribe_verify.tensor`."""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError, Tensor, _make


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def hardswish(x: Tensor) -> Tensor:
    """``x * relu6(x + 3) / 6``."""
    v = x.data
    out = v * np.clip(v + 3.0, 0.0, 6.0) / 6.0

    def backward(g):
        d = np.where(v <= -3.0, 0.0, np.where(v >= 3.0, 1.0, (2.0 * v + 3.0) / 6.0))
        return (g * d.astype(v.dtype),)

    return _make(out.astype(v.dtype), (x,), backward, "hardswish")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation, evaluated as ``x * sigmoid(2u)`` to avoid cancellation in the tail."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    s = 0.5 * (1.0 + np.tanh(inner))  # = sigmoid(2 * inner), fine for inner > 0
    neg = inner < 0
    e = np.exp(2.0 * inner[neg])
    s[neg] = e / (1.0 + e)
    out = v * s

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        d = s + v * 2.0 * s * (1.0 - s) * dinner
        return (g * d,)

    return _make(out.astype(v.dtype), (x,), backward, "gelu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward, "softmax")


def _standardize(x: Tensor, axes: tuple[int, ...], eps: float, op: str):
    v = x.data
    mu = v.mean(axis=axes, keepdims=True)
    centered = v - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gym = (g * y).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _make(y.astype(v.dtype), (x,), backward, op), mu, var


def layer_norm(x: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance along ``axis`` (affine handled by the caller)."""
    out, _, _ = _standardize(x, (axis % x.ndim,), eps, "layer_norm")
    return out


def batch_stat_norm(x: Tensor, eps: float = 1e-5, return_stats: bool = False):
    """Per-channel standardization using statistics of the current batch.

    Reduces over every axis except 1 (channels), i.e. ``(N, H, W)`` for 4-D
    input and ``N`` for 2-D input.  With ``return_stats`` the batch mean and
    (biased) variance per channel are returned as plain arrays as well.
    """
    if x.ndim < 2:
        raise ShapeError(f"batch_stat_norm needs rank >= 2, got {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    out, mu, var = _standardize(x, axes, eps, "batch_stat_norm")
    if return_stats:
        return out, mu.reshape(-1), var.reshape(-1)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: ``[N, C, H, W] -> [N, C]``."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool needs [N, C, H, W], got {x.shape}")
    return x.mean(axis=(2, 3))


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation over ``[N, C, H, W]`` with weights ``[K, C/groups, kh, kw]``.

    ``groups == C`` with ``K == C`` is the depthwise case.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d needs 4-D input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    k, cg, kh, kw = w.shape
    if groups < 1 or c % groups or k % groups:
        raise ShapeError(f"channels in={c} out={k} not divisible by groups={groups}")
    if cg != c // groups:
        raise ShapeError(f"weight expects {cg * groups} input channels, input has {c}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit padded input {h + 2 * padding}x{wd + 2 * padding}")

    xd, wdat = x.data, w.data
    p, s = padding, stride
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    offsets = [(i, j) for i in range(kh) for j in range(kw)]

    def window(arr, i, j):
        return arr[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]

    depthwise = groups == c and k == c

    if depthwise:
        out = np.zeros((n, c, ho, wo), dtype=xd.dtype)
        for i, j in offsets:
            out += window(xp, i, j) * wdat[:, 0, i, j][None, :, None, None]
        cols = None
    elif groups == 1:
        if kh == kw == 1 and s == 1 and p == 0:
            cols = xd.reshape(n, c, h * wd)
        else:
            cols = np.empty((n, c, kh, kw, ho, wo), dtype=xd.dtype)
            for i, j in offsets:
                cols[:, :, i, j] = window(xp, i, j)
            cols = cols.reshape(n, c * kh * kw, ho * wo)
        out = (wdat.reshape(k, -1) @ cols).reshape(n, k, ho, wo)
    else:
        parts = []
        kg = k // groups
        for gi in range(groups):
            xs = Tensor(xd[:, gi * cg : (gi + 1) * cg])
            ws = Tensor(wdat[gi * kg : (gi + 1) * kg])
            parts.append(conv2d(xs, ws, None, stride, padding, 1).data)
        out = np.concatenate(parts, axis=1)
        cols = None

    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if depthwise:
            if w.requires_grad:
                gw = np.zeros_like(wdat)
                for i, j in offsets:
                    gw[:, 0, i, j] = (g * window(xp, i, j)).sum(axis=(0, 2, 3))
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for i, j in offsets:
                    window(gxp, i, j)[...] += g * wdat[:, 0, i, j][None, :, None, None]
                gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        elif groups == 1:
            g2 = g.reshape(n, k, ho * wo)
            if w.requires_grad:
                gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(wdat.shape)
            if x.requires_grad:
                gcols = wdat.reshape(k, -1).T @ g2
                if kh == kw == 1 and s == 1 and p == 0:
                    gx = gcols.reshape(xd.shape)
                else:
                    gcols = gcols.reshape(n, c, kh, kw, ho, wo)
                    gxp = np.zeros_like(xp)
                    for i, j in offsets:
                        window(gxp, i, j)[...] += gcols[:, :, i, j]
                    gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        else:
            kg = k // groups
            gw = np.zeros_like(wdat) if w.requires_grad else None
            gx = np.zeros_like(xd) if x.requires_grad else None
            for gi in range(groups):
                xs = Tensor(xd[:, gi * cg : (gi + 1) * cg], requires_grad=x.requires_grad)
                ws = Tensor(wdat[gi * kg : (gi + 1) * kg], requires_grad=w.requires_grad)
                part = conv2d(xs, ws, None, stride, padding, 1)
                part.backward(np.ascontiguousarray(g[:, gi * kg : (gi + 1) * kg]))
                if gw is not None:
                    gw[gi * kg : (gi + 1) * kg] = ws.grad
                if gx is not None:
                    gx[:, gi * cg : (gi + 1) * cg] = xs.grad
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, backward, "conv2d")
