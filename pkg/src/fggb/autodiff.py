"""Reverse-mode differentiation through small convolutional embedders.

Images and activations are float64 numpy arrays in HWC layout. A forward
pass records one :class:`Node` per layer into an immutable :class:`Trace`;
:func:`backward` pulls an arbitrary output cotangent back to the input image.

Supported primitives: ``conv`` (zero padding, stride >= 1), ``avgpool``
(non-overlapping windows), ``relu``, ``flatten`` and ``dense``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import FGGBError, ShapeError

__all__ = [
    "Node",
    "Trace",
    "forward",
    "backward",
    "backward_channel",
    "grad_check",
    "conv2d",
    "conv2d_backward",
    "avgpool2d",
    "avgpool2d_backward",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


# -- primitives ---------------------------------------------------------------


def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, w, b, stride: int = 1, padding: int = 0) -> np.ndarray:
    """2-D cross-correlation. ``x`` is (H, W, Cin), ``w`` is (kh, kw, Cin, Cout)."""
    kh, kw, cin, cout = w.shape
    h, wd, _ = x.shape
    ho = _conv_out(h, kh, stride, padding)
    wo = _conv_out(wd, kw, stride, padding)
    xp = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    cols = np.empty((ho, wo, kh, kw, cin))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j, :] = xp[i:i + stride * (ho - 1) + 1:stride,
                                     j:j + stride * (wo - 1) + 1:stride, :]
    y = (cols.reshape(ho * wo, -1) @ w.reshape(-1, cout)).reshape(ho, wo, cout)
    if b is not None:
        y = y + b
    return y


def conv2d_backward(dy, x_shape, w, stride: int = 1, padding: int = 0) -> np.ndarray:
    kh, kw, cin, cout = w.shape
    h, wd, _ = x_shape
    ho, wo, _ = dy.shape
    dcols = (dy.reshape(-1, cout) @ w.reshape(-1, cout).T).reshape(ho, wo, kh, kw, cin)
    dxp = np.zeros((h + 2 * padding, wd + 2 * padding, cin))
    # fixed (i, j) order keeps the scatter-add bit-deterministic
    for i in range(kh):
        for j in range(kw):
            dxp[i:i + stride * (ho - 1) + 1:stride,
                j:j + stride * (wo - 1) + 1:stride, :] += dcols[:, :, i, j, :]
    return dxp[padding:padding + h, padding:padding + wd, :]


def avgpool2d(x, size: tuple[int, int]) -> np.ndarray:
    ph, pw = size
    h, w, c = x.shape
    return x.reshape(h // ph, ph, w // pw, pw, c).mean(axis=(1, 3))


def avgpool2d_backward(dy, size: tuple[int, int]) -> np.ndarray:
    ph, pw = size
    return np.repeat(np.repeat(dy, ph, axis=0), pw, axis=1) / (ph * pw)


# -- trace --------------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    """One executed layer: its description, weights, input and output."""

    layer: Any
    params: tuple
    x: np.ndarray
    y: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return _apply(self.layer, self.params, x)

    def vjp(self, dy: np.ndarray) -> np.ndarray:
        layer, kind = self.layer, self.layer.kind
        if kind == "conv":
            return conv2d_backward(dy, self.x.shape, self.params[0],
                                   layer.stride, layer.padding)
        if kind == "avgpool":
            return avgpool2d_backward(dy, layer.kernel)
        if kind == "relu":
            # subgradient 0 at exactly 0
            return np.where(self.x > 0, dy, 0.0)
        if kind == "flatten":
            return dy.reshape(self.x.shape)
        if kind == "dense":
            return self.params[0].T @ dy
        raise FGGBError(f"no adjoint for layer kind {kind!r}")


def _apply(layer, params: tuple, x: np.ndarray) -> np.ndarray:
    kind = layer.kind
    if kind == "conv":
        b = params[1] if len(params) > 1 else None
        return conv2d(x, params[0], b, layer.stride, layer.padding)
    if kind == "avgpool":
        return avgpool2d(x, layer.kernel)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "flatten":
        return x.reshape(-1)
    if kind == "dense":
        y = params[0] @ x
        if len(params) > 1:
            y = y + params[1]
        return y
    raise FGGBError(f"unsupported layer kind {kind!r}")


@dataclass(frozen=True)
class Trace:
    """Immutable record of a forward pass.

    ``nodes[i].y`` is ``nodes[i + 1].x``; the last output is the embedding.
    """

    image: np.ndarray
    nodes: tuple[Node, ...]

    @property
    def output(self) -> np.ndarray:
        return self.nodes[-1].y if self.nodes else self.image

    @property
    def dim(self) -> int:
        return self.output.shape[0]

    def replay(self) -> list[np.ndarray]:
        """Re-execute every node from its recorded input."""
        return [node.apply(node.x) for node in self.nodes]


def forward(params, image) -> tuple[np.ndarray, Trace]:
    """Run ``params`` on ``image`` and return ``(embedding, trace)``.

    ``params`` must expose ``spec.input_shape``, ``spec.layers`` and
    ``weights`` (one tuple of arrays per layer).
    """
    image = np.asarray(image, dtype=np.float64)
    expected = tuple(params.spec.input_shape)
    if image.shape != expected:
        raise ShapeError(f"image shape {image.shape} does not match model input {expected}")
    if not np.all(np.isfinite(image)):
        raise ShapeError("image contains non-finite values")
    x = _frozen(image)
    img = x
    nodes = []
    for layer, ws in zip(params.spec.layers, params.weights):
        y = _frozen(_apply(layer, ws, x))
        nodes.append(Node(layer, ws, x, y))
        x = y
    if x.ndim != 1:
        raise ShapeError(f"model output has shape {x.shape}, expected a vector")
    if not np.all(np.isfinite(x)):
        raise FGGBError("forward pass produced non-finite values")
    return x, Trace(img, tuple(nodes))


def backward(trace: Trace, cotangent) -> np.ndarray:
    """Vector-Jacobian product: d(cotangent . F) / d image."""
    adj = np.asarray(cotangent, dtype=np.float64)
    if adj.shape != trace.output.shape:
        raise ShapeError(f"cotangent shape {adj.shape} != output shape {trace.output.shape}")
    for node in reversed(trace.nodes):
        adj = node.vjp(adj)
    return adj


def backward_channel(trace: Trace, k: int) -> np.ndarray:
    """Gradient map of embedding channel ``k`` (0-based) w.r.t. the input image."""
    n = trace.dim
    if not 0 <= k < n:
        raise IndexError(f"channel index {k} out of range; valid range is 0..{n - 1}")
    seed = np.zeros(n)
    seed[k] = 1.0
    return backward(trace, seed)


def grad_check(params, image, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|a - f| / max(|a|, |f|, 1e-8)``, taken over every
    channel and every input entry.
    """
    if not step > 0:
        raise ValueError(f"step must be > 0, got {step}")
    image = np.asarray(image, dtype=np.float64)
    _, trace = forward(params, image)
    n = trace.dim
    analytic = np.stack([backward_channel(trace, k) for k in range(n)])
    numeric = np.empty_like(analytic)
    for idx in np.ndindex(*image.shape):
        xp = image.copy()
        xm = image.copy()
        xp[idx] += step
        xm[idx] -= step
        fp, _ = forward(params, xp)
        fm, _ = forward(params, xm)
        numeric[(slice(None),) + idx] = (fp - fm) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
