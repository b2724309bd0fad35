"""Comparator explainers: cosine-score backprop and random-mask occlusion.

Both are deliberately simple. ``masked_saliency`` is a plain
occlusion/score-drop correlation, not a faithful reimplementation of any
published perturbation method, and its numbers must not be compared with
published ones.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import backward, forward
from .core import split
from .embedder import ModelParams, cosine, embed, l2_norm
from .errors import ConfigError, ShapeError


def cosine_grad(fa, fb) -> np.ndarray:
    """d cos(fa, fb) / d fa."""
    na, nb = l2_norm(fa), l2_norm(fb)
    return fb / (na * nb) - (np.dot(fa, fb) / (na * nb)) * fa / (na * na)


def score_backprop(params: ModelParams, ia, ib) -> tuple[np.ndarray, np.ndarray]:
    """Signed maps ``mean_C(d cos / d I_A)`` and ``mean_C(d cos / d I_B)``."""
    fa, trace_a = forward(params, ia)
    fb, trace_b = forward(params, ib)
    ga = backward(trace_a, cosine_grad(fa, fb))
    gb = backward(trace_b, cosine_grad(fb, fa))
    return ga.mean(axis=-1), gb.mean(axis=-1)


@dataclass(frozen=True)
class MaskSet:
    """``masks[m, y, x]`` is the occlusion amount in [0, 1] (1 = fully occluded)."""

    masks: np.ndarray
    seed: int | None
    p: float

    @property
    def count(self) -> int:
        return self.masks.shape[0]

    def permuted(self, order) -> "MaskSet":
        return MaskSet(self.masks[np.asarray(order)], self.seed, self.p)


def make_masks(count: int, shape: tuple[int, int], p: float = 0.5, seed: int = 0, cell: int = 1) -> MaskSet:
    """Binary occlusion masks on a ``cell``-sized grid, upsampled by repetition."""
    if count < 1 or cell < 1:
        raise ConfigError("mask count and cell size must be positive")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"occlusion probability must be in [0, 1], got {p}")
    h, w = shape
    gh, gw = -(-h // cell), -(-w // cell)
    rng = np.random.default_rng(seed)
    grid = (rng.random((count, gh, gw)) < p).astype(np.float64)
    masks = np.repeat(np.repeat(grid, cell, axis=1), cell, axis=2)[:, :h, :w]
    masks.setflags(write=False)
    return MaskSet(masks, seed, p)


def occlude(image, mask) -> np.ndarray:
    """Blend each pixel toward the per-channel image mean by ``mask``."""
    image = np.asarray(image, dtype=np.float64)
    fill = image.mean(axis=(0, 1))
    m = np.asarray(mask)[:, :, None]
    return image * (1.0 - m) + fill * m


def _correlate(masks: np.ndarray, drops: np.ndarray) -> np.ndarray:
    # Pearson correlation per pixel; zero where either side has no variance
    o = masks.reshape(masks.shape[0], -1)
    oc = o - o.mean(axis=0)
    dc = drops - drops.mean()
    cov = dc @ oc
    denom = np.sqrt((oc * oc).sum(axis=0) * np.dot(dc, dc))
    out = np.zeros_like(cov)
    nz = denom > 0
    out[nz] = cov[nz] / denom[nz]
    return out.reshape(masks.shape[1:])


def masked_saliency(params: ModelParams, ia, ib, masks: MaskSet, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Correlate per-pixel occlusion with the cosine drop it causes.

    Returns ``(sim_a, dissim_a)``: pixels whose occlusion lowers the score get
    positive saliency, pixels whose occlusion raises it get negative.
    """
    if masks.count < 2:
        raise ConfigError("masked saliency needs at least 2 masks")
    ia = np.asarray(ia, dtype=np.float64)
    if masks.masks.shape[1:] != ia.shape[:2]:
        raise ShapeError(f"mask shape {masks.masks.shape[1:]} != image extent {ia.shape[:2]}")
    fa, fb = embed(params, ia), embed(params, ib)
    base = cosine(fa, fb)

    def drop(m: np.ndarray) -> float:
        return base - cosine(embed(params, occlude(ia, m)), fb)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            drops = np.array(list(pool.map(drop, masks.masks)))
    else:
        drops = np.array([drop(m) for m in masks.masks])
    return split(_correlate(masks.masks, drops))
