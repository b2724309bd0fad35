"""Feature-guided gradient backpropagation saliency.

For an image pair (A, B) and an embedding model F with N channels:

1. one gradient map per embedding channel, ``G[k] = dF_A[k] / dI_A``;
2. each map is made non-negative and unit-norm, ``|G[k]| / ||G[k]||_F``;
3. channel weights ``w = F_A * F_B / (||F_A|| ||F_B||)`` (they sum to the cosine);
4. ``S_A = mean_C(sum_k norm[k] * (w[k] - threshold / N))``;
5. ``S_A`` splits into a similarity map (entries >= 0) and a dissimilarity
   map (entries < 0).

Stacks are arrays of shape (N, H, W, C); saliency maps are (H, W).
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Trace, backward_channel, forward
from .embedder import ModelParams, Verdict, l2_norm, verify
from .errors import FormatError, ShapeError

SALIENCY_MAGIC = b"FGGBSAL1"


def stack_from_trace(trace: Trace, workers: int = 1) -> np.ndarray:
    """Gradient maps for every channel of a recorded forward pass."""
    ks = range(trace.dim)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            maps = list(pool.map(lambda k: backward_channel(trace, k), ks))
    else:
        maps = [backward_channel(trace, k) for k in ks]
    return np.stack(maps)


def gradient_stack(params: ModelParams, image, workers: int = 1) -> np.ndarray:
    """``G[k] = dF[k]/dI`` for all k from a single forward pass; shape (N, H, W, C)."""
    _, trace = forward(params, image)
    return stack_from_trace(trace, workers)


def normalize_stack(g) -> np.ndarray:
    """``|G[k]| / ||G[k]||_F`` per map. All-zero maps stay all-zero."""
    g = np.asarray(g, dtype=np.float64)
    out = np.zeros_like(g)
    for k in range(g.shape[0]):
        a = np.abs(g[k])
        peak = a.max()
        if peak > 0:
            # pre-scaling by the peak keeps the squares out of under/overflow
            a = a / peak
            out[k] = a / np.sqrt(np.sum(a * a))
    return out


def channel_weights(fa, fb) -> np.ndarray:
    fa = np.asarray(fa, dtype=np.float64)
    fb = np.asarray(fb, dtype=np.float64)
    if fa.shape != fb.shape:
        raise ShapeError(f"embedding shapes differ: {fa.shape} vs {fb.shape}")
    return fa * fb / (l2_norm(fa) * l2_norm(fb))


def aggregate(norm, w, threshold: float) -> np.ndarray:
    """Threshold-offset weighted sum of normalized maps, averaged over color."""
    norm = np.asarray(norm, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    if norm.shape[0] != n:
        raise ShapeError(f"stack has {norm.shape[0]} maps but weight vector has {n} entries")
    coeffs = w - threshold / n
    acc = np.zeros(norm.shape[1:])
    for k in range(n):
        acc += norm[k] * coeffs[k]
    return acc.mean(axis=-1)


def split(s) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(plus, minus)``; zero entries belong to ``plus``."""
    s = np.asarray(s, dtype=np.float64)
    pos = s >= 0
    return np.where(pos, s, 0.0), np.where(pos, 0.0, s)


@dataclass(frozen=True)
class ExplanationSet:
    sim_a: np.ndarray
    dissim_a: np.ndarray
    sim_b: np.ndarray
    dissim_b: np.ndarray
    verdict: Verdict
    weights: np.ndarray

    @property
    def s_a(self) -> np.ndarray:
        return self.sim_a + self.dissim_a

    @property
    def s_b(self) -> np.ndarray:
        return self.sim_b + self.dissim_b

    def maps(self) -> dict[str, np.ndarray]:
        return {"simA": self.sim_a, "dissimA": self.dissim_a,
                "simB": self.sim_b, "dissimB": self.dissim_b}


def explain_pair(params: ModelParams, ia, ib, threshold: float, workers: int = 1) -> ExplanationSet:
    """Similarity and dissimilarity maps for both images of a pair."""
    fa, trace_a = forward(params, ia)
    fb, trace_b = forward(params, ib)
    verdict = verify(fa, fb, threshold)
    w = channel_weights(fa, fb)
    maps = []
    for trace in (trace_a, trace_b):
        s = aggregate(normalize_stack(stack_from_trace(trace, workers)), w, threshold)
        maps.extend(split(s))
    return ExplanationSet(*maps, verdict=verdict, weights=w)


# -- saliency file format ---------------------------------------------------------


def dump_saliency(s) -> bytes:
    """magic, u32 H, u32 W, then H*W little-endian float32 row-major."""
    s = np.asarray(s)
    if s.ndim != 2:
        raise ShapeError(f"saliency map must be 2-D, got shape {s.shape}")
    h, w = s.shape
    return SALIENCY_MAGIC + struct.pack("<II", h, w) + s.astype("<f4").tobytes()


def parse_saliency(data: bytes) -> np.ndarray:
    if data[:8] != SALIENCY_MAGIC:
        raise FormatError("not a saliency file: bad magic")
    if len(data) < 16:
        raise FormatError(f"saliency header truncated at byte offset {len(data)}")
    h, w = struct.unpack("<II", data[8:16])
    if len(data) != 16 + 4 * h * w:
        raise FormatError(f"expected {16 + 4 * h * w} bytes for a {h}x{w} map, got {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w).astype(np.float64)


def save_saliency(s, path) -> None:
    Path(path).write_bytes(dump_saliency(s))


def load_saliency(path) -> np.ndarray:
    return parse_saliency(Path(path).read_bytes())
