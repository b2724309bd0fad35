"""Deletion/Insertion faithfulness metrics for pair saliency maps.

Deletion replaces the most salient pixels of image A with a fill value and
tracks the cosine score against image B; Insertion starts from a blurred
copy of A and restores original pixels in the same order. Saliency maps are
blurred with a fixed Gaussian kernel before ranking so sparse gradient maps
and dense perturbation maps are compared on equal footing.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import make_masks, masked_saliency, score_backprop
from .core import explain_pair, split
from .embedder import ModelParams, cosine, embed
from .errors import ConfigError, ShapeError

EXPLAINERS = ("fggb", "scorebp", "masked")
LABELS = ("genuine", "imposter")
CSV_COLUMNS = ("pair_id", "label", "explainer", "deletion_auc", "insertion_auc",
               "deletion_acc", "insertion_acc")


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"blur kernel size must be a positive odd integer, got {size}")
    if not sigma > 0:
        raise ConfigError(f"blur sigma must be > 0, got {sigma}")
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_blur(s, kernel_size: int = 11, sigma: float = 2.0) -> np.ndarray:
    """Gaussian filter with edge replication. 3-D inputs are blurred per channel."""
    s = np.asarray(s, dtype=np.float64)
    k = gaussian_kernel(kernel_size, sigma)
    if s.ndim == 3:
        return np.stack([gaussian_blur(s[:, :, c], kernel_size, sigma)
                         for c in range(s.shape[2])], axis=-1)
    if s.ndim != 2:
        raise ShapeError(f"expected a 2-D map, got shape {s.shape}")
    r = kernel_size // 2
    h, w = s.shape
    p = np.pad(s, r, mode="edge")
    out = np.zeros_like(s)
    for i in range(kernel_size):
        for j in range(kernel_size):
            out += k[i, j] * p[i:i + h, j:j + w]
    return out


@dataclass(frozen=True)
class PairRecord:
    image_a: np.ndarray
    image_b: np.ndarray
    label: str
    pair_id: str | None = None
    path_a: str | None = None
    path_b: str | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ConfigError(f"pair label must be one of {LABELS}, got {self.label!r}")

    @property
    def genuine(self) -> bool:
        return self.label == "genuine"


@dataclass(frozen=True)
class EvalCurve:
    fractions: np.ndarray
    scores: np.ndarray

    @property
    def auc(self) -> float:
        f, s = self.fractions, self.scores
        return float(np.sum((f[1:] - f[:-1]) * (s[1:] + s[:-1]) / 2.0))

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fractions.tolist(), self.scores.tolist()))


def ranking(s) -> np.ndarray:
    """Flat pixel indices by descending saliency; ties keep row-major order."""
    return np.argsort(-np.asarray(s, dtype=np.float64).ravel(), kind="stable")


def step_counts(n_pixels: int, steps: int) -> list[int]:
    if steps < 2:
        raise ConfigError(f"steps must be >= 2, got {steps}")
    return [(i * n_pixels) // steps for i in range(steps + 1)]


def _fill_value(image: np.ndarray, fill) -> np.ndarray:
    if fill == "mean":
        return image.mean(axis=(0, 1))
    if fill == "zero":
        return np.zeros(image.shape[2])
    try:
        return np.full(image.shape[2], float(fill))
    except (TypeError, ValueError):
        raise ConfigError(f"fill must be 'mean', 'zero' or a number, got {fill!r}") from None


def _check_map(s, image) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != image.shape[:2]:
        raise ShapeError(f"saliency shape {s.shape} does not match image extent {image.shape[:2]}")
    return s


def _perturbed(start: np.ndarray, source: np.ndarray, order: np.ndarray, n: int) -> np.ndarray:
    img = start.copy()
    rows, cols = np.divmod(order[:n], start.shape[1])
    img[rows, cols] = source[rows, cols]
    return img


def _curve(params, pair, s, steps, starts, sources, s_b) -> EvalCurve:
    a = np.asarray(pair.image_a, dtype=np.float64)
    b = np.asarray(pair.image_b, dtype=np.float64)
    order_a = ranking(_check_map(s, a))
    fb = embed(params, b)
    if s_b is not None:
        order_b = ranking(_check_map(s_b, b))
    counts = step_counts(s.shape[0] * s.shape[1], steps)
    scores = []
    for n in counts:
        fa = embed(params, _perturbed(starts[0], sources[0], order_a, n))
        if s_b is not None:
            fb = embed(params, _perturbed(starts[1], sources[1], order_b, n))
        scores.append(cosine(fa, fb))
    return EvalCurve(np.arange(steps + 1) / steps, np.array(scores))


def deletion_curve(params: ModelParams, pair: PairRecord, s, steps: int = 20,
                   fill="mean", s_b=None) -> EvalCurve:
    """Replace top-ranked pixels of A with ``fill`` and track the cosine score.

    With ``s_b`` given, image B is perturbed by its own map in lockstep.
    """
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(pair.image_a, dtype=np.float64)
    b = np.asarray(pair.image_b, dtype=np.float64)
    starts = (a, b)
    sources = tuple(np.broadcast_to(_fill_value(x, fill), x.shape) for x in (a, b))
    return _curve(params, pair, s, steps, starts, sources, s_b)


def insertion_curve(params: ModelParams, pair: PairRecord, s, steps: int = 20,
                    blur_kernel: int = 11, blur_sigma: float = 5.0, s_b=None) -> EvalCurve:
    """Restore original pixels of A onto a blurred copy, most salient first."""
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(pair.image_a, dtype=np.float64)
    b = np.asarray(pair.image_b, dtype=np.float64)
    starts = (gaussian_blur(a, blur_kernel, blur_sigma),
              gaussian_blur(b, blur_kernel, blur_sigma) if s_b is not None else b)
    return _curve(params, pair, s, steps, starts, (a, b), s_b)


def accuracy_auc(curve: EvalCurve, genuine: bool, threshold: float) -> float:
    """Area under the per-step correctness indicator, in percent."""
    accept = curve.scores >= threshold
    correct = accept if genuine else ~accept
    return 100.0 * EvalCurve(curve.fractions, correct.astype(np.float64)).auc


@dataclass
class EvalConfig:
    threshold: float = 0.5
    steps: int = 20
    blur_kernel: int = 11
    blur_sigma: float = 2.0
    insertion_kernel: int = 11
    insertion_sigma: float = 5.0
    fill: str = "mean"
    perturb_both: bool = False
    mask_count: int = 256
    mask_prob: float = 0.5
    mask_seed: int = 0
    mask_cell: int = 4
    workers: int = 1

    def validate(self) -> None:
        if not -1.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [-1, 1], got {self.threshold}")
        if self.steps < 2:
            raise ConfigError(f"steps must be >= 2, got {self.steps}")
        gaussian_kernel(self.blur_kernel, self.blur_sigma)
        gaussian_kernel(self.insertion_kernel, self.insertion_sigma)
        if self.mask_count < 2:
            raise ConfigError("mask_count must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class MetricsRow:
    pair_id: str
    label: str
    explainer: str
    deletion_auc: float
    insertion_auc: float
    deletion_acc: float
    insertion_acc: float
    curves: tuple[EvalCurve, EvalCurve] | None = field(default=None, repr=False)


@dataclass
class MetricsTable:
    rows: list[MetricsRow]

    @property
    def deletion_acc(self) -> float:
        return math.fsum(r.deletion_acc for r in self.rows) / len(self.rows)

    @property
    def insertion_acc(self) -> float:
        return math.fsum(r.insertion_acc for r in self.rows) / len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([r.pair_id, r.label, r.explainer, repr(r.deletion_auc),
                             repr(r.insertion_auc), repr(r.deletion_acc), repr(r.insertion_acc)])
        return buf.getvalue()


def explainer_maps(params: ModelParams, pair: PairRecord, explainer: str, cfg: EvalConfig,
                   masks=None) -> tuple[np.ndarray, np.ndarray]:
    """Raw (unblurred) maps for A and B that the metric ranks.

    Genuine pairs use the similarity part, imposter pairs the magnitude of
    the dissimilarity part.
    """
    a, b = pair.image_a, pair.image_b
    if explainer == "fggb":
        ex = explain_pair(params, a, b, cfg.threshold)
        pa, ma, pb, mb = ex.sim_a, ex.dissim_a, ex.sim_b, ex.dissim_b
    elif explainer == "scorebp":
        sa, sb = score_backprop(params, a, b)
        (pa, ma), (pb, mb) = split(sa), split(sb)
    elif explainer == "masked":
        if masks is None:
            masks = make_masks(cfg.mask_count, a.shape[:2], cfg.mask_prob, cfg.mask_seed, cfg.mask_cell)
        pa, ma = masked_saliency(params, a, b, masks)
        pb, mb = masked_saliency(params, b, a, masks) if cfg.perturb_both else (pa, ma)
    else:
        raise ConfigError(f"unknown explainer {explainer!r}; valid ids: {', '.join(EXPLAINERS)}")
    if pair.genuine:
        return pa, pb
    return np.abs(ma), np.abs(mb)


def evaluate_pair(params: ModelParams, pair: PairRecord, explainer: str, cfg: EvalConfig,
                  masks=None, pair_id: str = "0") -> MetricsRow:
    raw_a, raw_b = explainer_maps(params, pair, explainer, cfg, masks)
    sa = gaussian_blur(raw_a, cfg.blur_kernel, cfg.blur_sigma)
    sb = gaussian_blur(raw_b, cfg.blur_kernel, cfg.blur_sigma) if cfg.perturb_both else None
    dc = deletion_curve(params, pair, sa, cfg.steps, cfg.fill, s_b=sb)
    ic = insertion_curve(params, pair, sa, cfg.steps, cfg.insertion_kernel, cfg.insertion_sigma, s_b=sb)
    return MetricsRow(
        pair_id=pair.pair_id if pair.pair_id is not None else pair_id,
        label=pair.label,
        explainer=explainer,
        deletion_auc=dc.auc,
        insertion_auc=ic.auc,
        deletion_acc=accuracy_auc(dc, pair.genuine, cfg.threshold),
        insertion_acc=accuracy_auc(ic, pair.genuine, cfg.threshold),
        curves=(dc, ic),
    )


def dataset_eval(params: ModelParams, pairs: Sequence[PairRecord], explainer: str,
                 cfg: EvalConfig | None = None) -> MetricsTable:
    cfg = cfg or EvalConfig()
    cfg.validate()
    if not pairs:
        raise ConfigError("pair list is empty")
    if explainer not in EXPLAINERS:
        raise ConfigError(f"unknown explainer {explainer!r}; valid ids: {', '.join(EXPLAINERS)}")
    masks = None
    if explainer == "masked":
        shape = np.asarray(pairs[0].image_a).shape[:2]
        masks = make_masks(cfg.mask_count, shape, cfg.mask_prob, cfg.mask_seed, cfg.mask_cell)

    def run(item):
        i, pair = item
        return evaluate_pair(params, pair, explainer, cfg, masks, pair_id=str(i))

    items = list(enumerate(pairs))
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(run, items))
    else:
        rows = [run(item) for item in items]
    return MetricsTable(rows)


def read_pairs(path, loader=None) -> list[PairRecord]:
    """Parse ``pathA pathB genuine|imposter`` lines; relative paths resolve
    against the pair file's directory. Blank lines and ``#`` comments are
    skipped."""
    if loader is None:
        from .images import load_image as loader
    path = Path(path)
    root = path.parent
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 3 or parts[2] not in LABELS:
            raise ConfigError(f"{path}:{lineno}: expected 'pathA pathB genuine|imposter', got {line!r}")
        pa, pb = (root / p for p in parts[:2])
        pairs.append(PairRecord(loader(pa), loader(pb), parts[2], pair_id=str(len(pairs)),
                                path_a=str(parts[0]), path_b=str(parts[1])))
    return pairs
