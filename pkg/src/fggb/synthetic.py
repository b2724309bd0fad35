"""Synthetic "block face" pairs for exercising the evaluation pipeline.

An identity is a set of bright grid blocks on a dark background. Genuine
pairs share the identity and differ only by pixel noise; imposter pairs
come from two different identities.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .evaluation import PairRecord
from .images import save_image


def _identity(rng: np.random.Generator, grid: int, active: int) -> np.ndarray:
    blocks = np.zeros(grid * grid, dtype=bool)
    blocks[rng.choice(grid * grid, size=active, replace=False)] = True
    return blocks.reshape(grid, grid)


def _render(rng: np.random.Generator, blocks: np.ndarray, size: int, channels: int,
            noise: float) -> np.ndarray:
    cell = size // blocks.shape[0]
    mask = np.kron(blocks, np.ones((cell, cell)))[:, :, None]
    bright = 0.85 + noise * rng.standard_normal((size, size, channels))
    dark = 0.08 + noise * rng.standard_normal((size, size, channels))
    return np.clip(np.where(mask > 0, bright, dark), 0.0, 1.0)


def block_face_pairs(n_pairs: int = 20, size: int = 16, grid: int = 4, channels: int = 1,
                     active: int = 4, noise: float = 0.05, seed: int = 0) -> list[PairRecord]:
    """Alternating genuine/imposter pairs, genuine first."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        ident = _identity(rng, grid, active)
        if i % 2 == 0:
            other = ident
            label = "genuine"
        else:
            other = _identity(rng, grid, active)
            while np.array_equal(other, ident):
                other = _identity(rng, grid, active)
            label = "imposter"
        a = _render(rng, ident, size, channels, noise)
        b = _render(rng, other, size, channels, noise)
        pairs.append(PairRecord(a, b, label, pair_id=str(i)))
    return pairs


def write_pairs(directory, pairs: list[PairRecord], ext: str = ".ppm") -> Path:
    """Write each pair's images plus a ``pairs.txt`` list; returns the list path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, pair in enumerate(pairs):
        na, nb = f"pair{i:03d}_a{ext}", f"pair{i:03d}_b{ext}"
        save_image(directory / na, pair.image_a)
        save_image(directory / nb, pair.image_b)
        lines.append(f"{na} {nb} {pair.label}")
    path = directory / "pairs.txt"
    path.write_text("# synthetic block-face pairs\n" + "\n".join(lines) + "\n")
    return path
