"""Images, attention heatmaps, and perturbation-budget arithmetic.

Images are float64 arrays of shape (height, width, 3) holding 8-bit
intensities in [0, 255]. They stay real-valued throughout the search
(mutation and crossover are real-valued); quantization to integers happens
only when a PNG is written. Attention heatmaps are float32 arrays of shape
(height, width) with values in [0, 1].

Heatmap files use the "AAH1" container: 4 magic bytes, width and height as
32-bit little-endian unsigned ints, then width*height little-endian IEEE-754
float32 values in row-major order.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from io import BytesIO

import numpy as np
from PIL import Image

from ._fileio import atomic_write_bytes

HEATMAP_MAGIC = b"AAH1"


class ImageFormatError(ValueError):
    """An image file violates the 8-bit RGB PNG contract."""


class HeatmapFormatError(ValueError):
    """A heatmap file or array violates the heatmap contract."""


def as_image(array) -> np.ndarray:
    """Validate `array` as an image and return it as a float64 (H, W, 3) array.

    Raises ValueError if the shape is not (H, W, 3) or any intensity falls
    outside [0, 255].
    """
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must have shape (height, width, 3), got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("image must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    lo = float(arr.min())
    hi = float(arr.max())
    if lo < 0.0 or hi > 255.0:
        raise ValueError(f"image intensities must lie in [0, 255], got [{lo:g}, {hi:g}]")
    return arr


def as_heatmap(array) -> np.ndarray:
    """Validate `array` as a heatmap and return it as a float32 (H, W) array."""
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim != 2:
        raise HeatmapFormatError(f"heatmap must have shape (height, width), got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise HeatmapFormatError("heatmap must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise HeatmapFormatError("heatmap contains non-finite values")
    lo = float(arr.min())
    hi = float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise HeatmapFormatError(f"heatmap values must lie in [0, 1], got [{lo:g}, {hi:g}]")
    return arr


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes into an image array; rejects anything but 8-bit RGB."""
    try:
        img = Image.open(BytesIO(data))
        img.load()
    except Exception as exc:
        raise ImageFormatError(f"unreadable PNG data: {exc}") from exc
    if img.format != "PNG":
        raise ImageFormatError(f"expected a PNG file, got format {img.format!r}")
    if img.mode != "RGB":
        raise ImageFormatError(
            f"expected an 8-bit RGB image without alpha, got mode {img.mode!r}"
        )
    return np.asarray(img, dtype=np.float64)


def encode_png(image) -> bytes:
    """Encode an image as 8-bit RGB PNG bytes, rounding intensities to integers."""
    arr = as_image(image)
    quantized = np.rint(arr).astype(np.uint8)
    buf = BytesIO()
    Image.fromarray(quantized, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load an 8-bit RGB PNG from `path`."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageFormatError(f"cannot read image file {path}: {exc}") from exc
    return decode_png(data)


def save_image(path: str | os.PathLike, image) -> None:
    """Write `image` to `path` as 8-bit RGB PNG (atomic write)."""
    atomic_write_bytes(path, encode_png(image))


def load_heatmap(path: str | os.PathLike) -> np.ndarray:
    """Load an AAH1 heatmap file."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise HeatmapFormatError(f"cannot read heatmap file {path}: {exc}") from exc
    if len(data) < 12 or data[:4] != HEATMAP_MAGIC:
        raise HeatmapFormatError(f"{path}: missing AAH1 magic bytes")
    width, height = struct.unpack_from("<II", data, 4)
    expected = 12 + 4 * width * height
    if len(data) != expected:
        raise HeatmapFormatError(
            f"{path}: expected {expected} bytes for {width}x{height} map, got {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width)
    return as_heatmap(values)


def save_heatmap(path: str | os.PathLike, heatmap) -> None:
    """Write `heatmap` to `path` in AAH1 format (atomic write, bit-exact round trip)."""
    arr = as_heatmap(heatmap)
    height, width = arr.shape
    payload = HEATMAP_MAGIC + struct.pack("<II", width, height)
    payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    atomic_write_bytes(path, payload)


def resample_heatmap(heatmap, width: int, height: int) -> np.ndarray:
    """Bilinearly resample a heatmap to (height, width).

    Uses edge-aligned coordinate mapping and the lerp form a + t*(b - a), so
    constant maps are preserved exactly and outputs stay inside the input's
    value range. Returns the input unchanged when the size already matches.
    """
    arr = as_heatmap(heatmap)
    in_h, in_w = arr.shape
    if (in_w, in_h) == (width, height):
        return arr
    if width <= 0 or height <= 0:
        raise ValueError("target size must be positive")

    def _axis(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coords = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        coords = np.clip(coords, 0.0, n_in - 1.0)
        lo = np.floor(coords).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (coords - lo).astype(np.float32)
        return lo, hi, frac

    x_lo, x_hi, x_frac = _axis(width, in_w)
    y_lo, y_hi, y_frac = _axis(height, in_h)

    top = arr[np.ix_(y_lo, x_lo)]
    top = top + x_frac[None, :] * (arr[np.ix_(y_lo, x_hi)] - top)
    bot = arr[np.ix_(y_hi, x_lo)]
    bot = bot + x_frac[None, :] * (arr[np.ix_(y_hi, x_hi)] - bot)
    out = top + y_frac[:, None] * (bot - top)
    return as_heatmap(out)


@dataclass(frozen=True)
class PerturbationStats:
    """Mean/max absolute per-element perturbation and changed-element count."""

    mean_abs: float
    max_abs: float
    num_changed: int


def perturbation_stats(adv, clean) -> PerturbationStats:
    """Measure the perturbation between an adversarial and a clean image.

    mean_abs is the mean absolute difference over all width*height*3
    elements: the quantity the epsilon budget constrains.
    """
    adv_arr = as_image(adv)
    clean_arr = as_image(clean)
    if adv_arr.shape != clean_arr.shape:
        raise ValueError(f"dimension mismatch: {adv_arr.shape} vs {clean_arr.shape}")
    diff = np.abs(adv_arr - clean_arr)
    return PerturbationStats(
        mean_abs=float(diff.mean()),
        max_abs=float(diff.max()),
        num_changed=int(np.count_nonzero(diff)),
    )


def project_to_budget(candidate, clean, epsilon: float) -> np.ndarray:
    """Project `candidate` onto the mean-absolute-perturbation budget.

    Scales the perturbation vector by min(1, epsilon / mean_abs) to preserve
    its direction, clamps intensities to [0, 255], and re-scales once if
    clamping somehow re-violated the budget (clamping toward [0, 255] can
    only shrink magnitudes, so this is a belt-and-braces pass). A candidate
    already inside both constraints is returned unchanged. Idempotent.
    """
    cand = np.asarray(candidate, dtype=np.float64)
    clean_arr = as_image(clean)
    if cand.ndim != 3 or cand.shape[2] != 3:
        raise ValueError(f"candidate must have shape (height, width, 3), got {cand.shape}")
    if not np.all(np.isfinite(cand)):
        raise ValueError("candidate contains non-finite values")
    if cand.shape != clean_arr.shape:
        raise ValueError(f"dimension mismatch: {cand.shape} vs {clean_arr.shape}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")

    delta = cand - clean_arr
    mean_abs = float(np.abs(delta).mean())
    in_range = float(cand.min()) >= 0.0 and float(cand.max()) <= 255.0
    if mean_abs <= epsilon and in_range:
        return cand
    if mean_abs > epsilon:
        delta = delta * (epsilon / mean_abs)
    out = np.clip(clean_arr + delta, 0.0, 255.0)
    mean_abs = float(np.abs(out - clean_arr).mean())
    if mean_abs > epsilon:
        out = np.clip(clean_arr + (out - clean_arr) * (epsilon / mean_abs), 0.0, 255.0)
    return out
