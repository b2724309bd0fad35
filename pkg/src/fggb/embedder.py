"""Toy embedding networks, cosine scoring and the accept/reject rule."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff
from .errors import DegenerateEmbeddingError, FormatError, SpecError

LAYER_KINDS = ("conv", "avgpool", "relu", "flatten", "dense")
MODEL_MAGIC = b"FGGBMDL1"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out: int = 0
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    bias: bool = True
    in_features: int | None = None

    def __post_init__(self):
        if isinstance(self.kernel, int):
            object.__setattr__(self, "kernel", (self.kernel, self.kernel))
        else:
            object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))


def conv(out: int, kernel: int = 3, stride: int = 1, padding: int = 1, bias: bool = True) -> LayerSpec:
    return LayerSpec("conv", out=out, kernel=kernel, stride=stride, padding=padding, bias=bias)


def avgpool(size) -> LayerSpec:
    return LayerSpec("avgpool", kernel=size)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dense(out: int, bias: bool = True, in_features: int | None = None) -> LayerSpec:
    return LayerSpec("dense", out=out, bias=bias, in_features=in_features)


@dataclass(frozen=True)
class ModelSpec:
    """Input shape (H, W, C), ordered layers and embedding dimension.

    Construction validates that the layer shapes chain from the input to an
    ``embedding_dim`` vector.
    """

    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    embedding_dim: int
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.param_shapes()

    def param_shapes(self) -> list[tuple[tuple[int, ...], ...]]:
        """Weight shapes per layer; raises SpecError naming the first bad layer."""
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise SpecError(f"input shape must be positive (H, W, C), got {self.input_shape}")
        if self.embedding_dim < 2:
            raise SpecError(f"embedding dimension must be >= 2, got {self.embedding_dim}")
        shape: tuple[int, ...] = self.input_shape
        out = []
        for i, layer in enumerate(self.layers):
            where = f"layer {i} ({layer.kind})"
            if layer.kind not in LAYER_KINDS:
                raise SpecError(f"{where}: unknown kind, expected one of {LAYER_KINDS}")
            if layer.kind == "conv":
                if len(shape) != 3:
                    raise SpecError(f"{where}: expects an (H, W, C) input, got {shape}")
                kh, kw = layer.kernel
                if layer.out < 1 or kh < 1 or kw < 1 or layer.stride < 1 or layer.padding < 0:
                    raise SpecError(f"{where}: invalid out/kernel/stride/padding")
                h, w, c = shape
                ho = (h + 2 * layer.padding - kh) // layer.stride + 1
                wo = (w + 2 * layer.padding - kw) // layer.stride + 1
                if ho < 1 or wo < 1:
                    raise SpecError(f"{where}: kernel {layer.kernel} larger than padded input {shape}")
                ps = ((kh, kw, c, layer.out),) + (((layer.out,),) if layer.bias else ())
                shape = (ho, wo, layer.out)
            elif layer.kind == "avgpool":
                if len(shape) != 3:
                    raise SpecError(f"{where}: expects an (H, W, C) input, got {shape}")
                ph, pw = layer.kernel
                if ph < 1 or pw < 1 or shape[0] % ph or shape[1] % pw:
                    raise SpecError(f"{where}: window {layer.kernel} does not tile input {shape}")
                ps = ()
                shape = (shape[0] // ph, shape[1] // pw, shape[2])
            elif layer.kind == "relu":
                ps = ()
            elif layer.kind == "flatten":
                ps = ()
                shape = (int(np.prod(shape)),)
            else:
                if len(shape) != 1:
                    raise SpecError(f"{where}: expects a flat input, got {shape}; add a flatten layer")
                if layer.in_features is not None and layer.in_features != shape[0]:
                    raise SpecError(f"{where}: declared {layer.in_features} inputs but receives {shape[0]}")
                if layer.out < 1:
                    raise SpecError(f"{where}: output width must be positive")
                ps = ((layer.out, shape[0]),) + (((layer.out,),) if layer.bias else ())
                shape = (layer.out,)
            out.append(ps)
        if shape != (self.embedding_dim,):
            raise SpecError(f"model output shape {shape} does not match embedding dimension {self.embedding_dim}")
        return out


@dataclass(frozen=True)
class ModelParams:
    spec: ModelSpec
    weights: tuple[tuple[np.ndarray, ...], ...]
    seed: int | None = None

    @classmethod
    def from_weights(cls, spec: ModelSpec, weights: Sequence[Sequence], seed: int | None = None) -> "ModelParams":
        shapes = spec.param_shapes()
        if len(weights) != len(shapes):
            raise SpecError(f"expected weights for {len(shapes)} layers, got {len(weights)}")
        frozen = []
        for i, (ws, ss) in enumerate(zip(weights, shapes)):
            if len(ws) != len(ss):
                raise SpecError(f"layer {i}: expected {len(ss)} weight arrays, got {len(ws)}")
            layer = []
            for w, s in zip(ws, ss):
                w = np.array(w, dtype=np.float64, copy=True)
                if w.shape != s:
                    raise SpecError(f"layer {i}: weight shape {w.shape} != expected {s}")
                w.setflags(write=False)
                layer.append(w)
            frozen.append(tuple(layer))
        return cls(spec, tuple(frozen), seed)

    @property
    def dim(self) -> int:
        return self.spec.embedding_dim

    def flat_weights(self) -> np.ndarray:
        parts = [w.ravel() for ws in self.weights for w in ws]
        return np.concatenate(parts) if parts else np.zeros(0)


def init_model(spec: ModelSpec, seed: int) -> ModelParams:
    """He-normal initialization: every weight ~ N(0, 2 / fan_in)."""
    rng = np.random.default_rng(seed)
    weights = []
    for ss in spec.param_shapes():
        if not ss:
            weights.append(())
            continue
        wshape = ss[0]
        fan_in = int(np.prod(wshape[:-1])) if len(wshape) == 4 else wshape[1]
        scale = np.sqrt(2.0 / fan_in)
        weights.append(tuple(rng.standard_normal(s) * scale for s in ss))
    return ModelParams.from_weights(spec, weights, seed=seed)


# -- built-in architectures ----------------------------------------------------


def conv_spec(input_shape, dim: int = 128, channels: Sequence[int] = (8, 16, 16)) -> ModelSpec:
    """Three conv blocks and a dense head. H and W must be divisible by 4."""
    c1, c2, c3 = channels
    layers = (
        conv(c1, 3, 1, 1), relu(), avgpool(2),
        conv(c2, 3, 1, 1), relu(), avgpool(2),
        conv(c3, 3, 2, 1), relu(),
        flatten(), dense(dim),
    )
    return ModelSpec(input_shape, layers, dim, name="conv")


def block_pool_spec(input_shape, grid: int = 4) -> ModelSpec:
    """Reference embedder: channel k is the mean of the k-th block of a grid.

    Channels are ordered row-major over blocks, then by color channel.
    """
    h, w, c = input_shape
    if h % grid or w % grid:
        raise SpecError(f"a {grid}x{grid} grid does not tile a {h}x{w} image")
    layers = (avgpool((h // grid, w // grid)), flatten())
    return ModelSpec(input_shape, layers, grid * grid * c, name="blockpool")


def linear_spec(input_shape, dim: int, bias: bool = False) -> ModelSpec:
    return ModelSpec(input_shape, (flatten(), dense(dim, bias=bias)), dim, name="linear")


BUILTIN_MODELS = ("conv", "blockpool", "linear")


def builtin_spec(name: str, input_shape, dim: int = 128, grid: int = 4) -> ModelSpec:
    if name == "conv":
        return conv_spec(input_shape, dim)
    if name == "blockpool":
        return block_pool_spec(input_shape, grid)
    if name == "linear":
        return linear_spec(input_shape, dim)
    raise SpecError(f"unknown model {name!r}; choose from {', '.join(BUILTIN_MODELS)}")


# -- scoring --------------------------------------------------------------------


def embed(params: ModelParams, image) -> np.ndarray:
    return autodiff.forward(params, image)[0]


def l2_norm(v: np.ndarray) -> float:
    n = float(np.sqrt(np.dot(v, v)))
    if not n > 0:
        raise DegenerateEmbeddingError("embedding has zero norm; cosine similarity is undefined")
    return n


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    return float(np.dot(a, b) / (l2_norm(a) * l2_norm(b)))


@dataclass(frozen=True)
class Verdict:
    score: float
    threshold: float
    accept: bool = field(init=False)

    def __post_init__(self):
        # boundary counts as accept
        object.__setattr__(self, "accept", bool(self.score >= self.threshold))


def verify(a, b, threshold: float) -> Verdict:
    if not -1.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [-1, 1], got {threshold}")
    return Verdict(cosine(a, b), float(threshold))


def eer_threshold(scores: Sequence[float], genuine: Sequence[bool]) -> float:
    """Threshold where false-accept and false-reject rates are closest.

    Candidates are the observed scores; ties go to the lowest candidate.
    """
    scores = np.asarray(scores, dtype=np.float64)
    genuine = np.asarray(genuine, dtype=bool)
    if genuine.all() or not genuine.any():
        raise ValueError("need both genuine and imposter scores")
    best, best_gap = None, np.inf
    for t in np.unique(scores):
        far = np.mean(scores[~genuine] >= t)
        frr = np.mean(scores[genuine] < t)
        gap = abs(far - frr)
        if gap < best_gap:
            best, best_gap = float(t), gap
    return best


# -- serialization --------------------------------------------------------------


def _layer_field(layer: LayerSpec) -> str:
    parts = [
        f"layer={layer.kind}",
        f"out={layer.out}",
        f"kernel={layer.kernel[0]},{layer.kernel[1]}",
        f"stride={layer.stride}",
        f"padding={layer.padding}",
        f"bias={int(layer.bias)}",
    ]
    if layer.in_features is not None:
        parts.append(f"in={layer.in_features}")
    return ";".join(parts)


def _parse_layer(text: str) -> LayerSpec:
    kv = dict(p.split("=", 1) for p in text.split(";"))
    kh, kw = (int(v) for v in kv["kernel"].split(","))
    return LayerSpec(
        kv["layer"], out=int(kv["out"]), kernel=(kh, kw), stride=int(kv["stride"]),
        padding=int(kv["padding"]), bias=kv["bias"] == "1",
        in_features=int(kv["in"]) if "in" in kv else None,
    )


def dump_model(params: ModelParams) -> bytes:
    """Serialize to the FGGBMDL1 layout.

    magic, u32 field count, then u32-length-prefixed UTF-8 fields
    (name, input, dim, seed, one per layer), then all weights as
    little-endian float64 in layer order.
    """
    spec = params.spec
    fields = [
        f"name={spec.name}",
        "input=" + ",".join(str(s) for s in spec.input_shape),
        f"dim={spec.embedding_dim}",
        f"seed={'' if params.seed is None else params.seed}",
    ] + [_layer_field(layer) for layer in spec.layers]
    out = bytearray(MODEL_MAGIC)
    out += struct.pack("<I", len(fields))
    for f in fields:
        raw = f.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
    out += params.flat_weights().astype("<f8").tobytes()
    return bytes(out)


def parse_model(data: bytes) -> ModelParams:
    if data[:8] != MODEL_MAGIC:
        raise FormatError("not a model file: bad magic")
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"model file truncated at byte offset {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    fields = []
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        fields.append(take(n).decode("utf-8"))
    try:
        head = dict(f.split("=", 1) for f in fields[:4])
        spec = ModelSpec(
            tuple(int(v) for v in head["input"].split(",")),
            tuple(_parse_layer(f) for f in fields[4:]),
            int(head["dim"]),
            name=head["name"],
        )
        seed = int(head["seed"]) if head["seed"] else None
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed model header: {exc}") from exc
    weights = []
    for ss in spec.param_shapes():
        layer = []
        for s in ss:
            n = int(np.prod(s))
            layer.append(np.frombuffer(take(8 * n), dtype="<f8").reshape(s))
        weights.append(tuple(layer))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after weights")
    return ModelParams.from_weights(spec, weights, seed=seed)


def save_model(params: ModelParams, path) -> None:
    Path(path).write_bytes(dump_model(params))


def load_model(path) -> ModelParams:
    return parse_model(Path(path).read_bytes())
