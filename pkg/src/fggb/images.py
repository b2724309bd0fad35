"""PPM/PNG image I/O and blue-to-red heatmap rendering.

PPM (binary P6, and P5 for grayscale) is handled here byte-for-byte; PNG is
delegated to Pillow. Loaded images are float64 (H, W, C) arrays in [0, 1].
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ImageNotFoundError,
    ImageReadError,
    ShapeError,
    TruncatedFileError,
    UnsupportedBitDepthError,
)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

# blue -> cyan -> green -> yellow -> red
_RAMP = np.array([
    [0, 0, 255],
    [0, 255, 255],
    [0, 255, 0],
    [255, 255, 0],
    [255, 0, 0],
], dtype=np.float64)


def _pnm_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    """Return (magic, width, height, maxval, offset of first pixel byte)."""
    magic = data[:2]
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise TruncatedFileError(f"malformed or truncated PNM header at byte offset {pos}")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise TruncatedFileError(f"malformed or truncated PNM header at byte offset {pos}")
    w, h, maxval = fields
    return magic, w, h, maxval, pos + 1


def decode_pnm(data: bytes) -> np.ndarray:
    if data[:2] not in (b"P6", b"P5"):
        raise BadMagicError(f"bad magic {data[:2]!r}: expected P6/P5 or PNG")
    magic, w, h, maxval, offset = _pnm_header(data)
    if maxval > 255:
        raise UnsupportedBitDepthError(f"maxval {maxval} implies 16-bit samples; only 8-bit is supported")
    if maxval < 1 or w < 1 or h < 1:
        raise ImageReadError(f"invalid PNM header values: width={w} height={h} maxval={maxval}")
    c = 3 if magic == b"P6" else 1
    need = w * h * c
    have = len(data) - offset
    if have < need:
        raise TruncatedFileError(
            f"truncated pixel data at byte offset {len(data)}: expected {need} bytes "
            f"starting at offset {offset}, found {have}")
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    return px.reshape(h, w, c).astype(np.float64) / maxval


def decode_png(data: bytes) -> np.ndarray:
    from PIL import Image

    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:  # Pillow raises assorted types for damaged files
        raise TruncatedFileError(f"cannot decode PNG: {exc}") from exc
    mode = img.mode
    if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
        raise UnsupportedBitDepthError(f"PNG mode {mode} is not 8-bit")
    if mode in ("L", "LA", "1"):
        img = img.convert("L")
    else:
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr[:, :, None] if arr.ndim == 2 else arr


def load_image(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise ImageNotFoundError(f"image file not found: {path}") from None
    if data.startswith(PNG_MAGIC):
        return decode_png(data)
    return decode_pnm(data)


def to_uint8(image) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_pnm(pixels: np.ndarray) -> bytes:
    """Encode an 8-bit (H, W, 1|3) array as P5/P6."""
    h, w, c = pixels.shape
    if c not in (1, 3):
        raise ShapeError(f"PNM needs 1 or 3 channels, got {c}")
    magic = b"P6" if c == 3 else b"P5"
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + pixels.astype(np.uint8).tobytes()


def write_pixels(path, pixels: np.ndarray) -> None:
    """Write 8-bit pixels; ``.png`` goes through Pillow, anything else is PNM."""
    path = Path(path)
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if path.suffix.lower() == ".png":
        from PIL import Image

        arr = pixels[:, :, 0] if pixels.shape[2] == 1 else pixels
        buf = io.BytesIO()
        Image.fromarray(arr).save(buf, format="PNG")
        path.write_bytes(buf.getvalue())
    else:
        path.write_bytes(encode_pnm(pixels))


def save_image(path, image) -> None:
    write_pixels(path, to_uint8(image))


def colorize(t) -> np.ndarray:
    """Map values in [0, 1] onto the blue-to-red ramp; returns float RGB 0..255."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0) * (len(_RAMP) - 1)
    i = np.minimum(np.floor(t).astype(int), len(_RAMP) - 2)
    frac = (t - i)[..., None]
    return _RAMP[i] * (1.0 - frac) + _RAMP[i + 1] * frac


def render_heatmap(s, base=None, alpha: float = 0.5, vmin: float | None = None,
                   vmax: float | None = None) -> np.ndarray:
    """8-bit RGB heatmap of ``s``, optionally alpha-blended over ``base``.

    ``[vmin, vmax]`` defaults to the map's own range. A constant map renders
    uniformly at the middle of the ramp.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2:
        raise ShapeError(f"saliency map must be 2-D, got shape {s.shape}")
    lo = float(s.min()) if vmin is None else vmin
    hi = float(s.max()) if vmax is None else vmax
    if hi > lo:
        t = (s - lo) / (hi - lo)
    else:
        t = np.full(s.shape, 0.5)
    heat = colorize(t)
    if base is None:
        return np.round(heat).astype(np.uint8)
    base = np.asarray(base, dtype=np.float64)
    if base.ndim == 2:
        base = base[:, :, None]
    if base.shape[:2] != s.shape:
        raise ShapeError(f"base image extent {base.shape[:2]} does not match map {s.shape}")
    base8 = to_uint8(base).astype(np.float64)
    if base8.shape[2] == 1:
        base8 = np.repeat(base8, 3, axis=2)
    return np.round((1.0 - alpha) * base8 + alpha * heat).astype(np.uint8)
