"""Image, depth-map, and resampling utilities.

Float images are arrays of shape (H, W, 3) with values in [0, 1]. They are
written to disk as 8-bit RGB PNG with round-to-nearest quantization. Depth
maps are raw little-endian float32 files with a JSON sidecar describing the
layout, so they can be read back without guessing.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError

DEPTH_DTYPE = "<f4"


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] float image to uint8 with round half away from zero."""
    arr = np.asarray(img, dtype=np.float64)
    return np.clip(np.floor(arr * 255.0 + 0.5), 0.0, 255.0).astype(np.uint8)


def to_float(img: np.ndarray) -> np.ndarray:
    """Map a uint8 image to [0, 1] float64."""
    return np.asarray(img, dtype=np.float64) / 255.0


def save_png(path, img: np.ndarray) -> None:
    """Write a [0, 1] float RGB image (or a uint8 one) as PNG."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ConfigError(f"expected (H, W, 3) image, got {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read a PNG as a [0, 1] float64 RGB array."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return to_float(arr)


def save_depth(path, depth: np.ndarray) -> None:
    """Write a float32 depth map as raw bytes plus a JSON sidecar."""
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim != 2:
        raise ConfigError(f"expected (H, W) depth map, got {depth.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    depth.astype(DEPTH_DTYPE).tofile(path)
    sidecar = {
        "width": int(depth.shape[1]),
        "height": int(depth.shape[0]),
        "dtype": DEPTH_DTYPE,
        "layout": "row-major",
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_depth(path) -> np.ndarray:
    """Read a depth map written by :func:`save_depth`."""
    path = Path(path)
    try:
        sidecar = json.loads(Path(str(path) + ".json").read_text())
        w, h = int(sidecar["width"]), int(sidecar["height"])
        dtype = sidecar["dtype"]
    except (OSError, KeyError, ValueError) as e:
        raise FormatError(f"bad or missing depth sidecar for {path}: {e}") from e
    if dtype != DEPTH_DTYPE or sidecar.get("layout") != "row-major":
        raise FormatError(f"unsupported depth layout in sidecar for {path}")
    data = np.fromfile(path, dtype=DEPTH_DTYPE)
    if data.size != w * h:
        raise FormatError(f"depth file {path} has {data.size} values, expected {w * h}")
    return data.reshape(h, w).astype(np.float32)


def central_crop(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Cut the centered window of the given size out of an image."""
    h, w = img.shape[:2]
    dx, dy = w - width, h - height
    if dx < 0 or dy < 0 or dx % 2 or dy % 2:
        raise ConfigError(f"cannot center-crop {w}x{h} to {width}x{height}")
    return img[dy // 2 : dy // 2 + height, dx // 2 : dx // 2 + width]


def paste_center(canvas: np.ndarray, img: np.ndarray) -> np.ndarray:
    """Return a copy of ``canvas`` with ``img`` pasted in its center."""
    out = canvas.copy()
    h, w = img.shape[:2]
    ch, cw = canvas.shape[:2]
    dx, dy = cw - w, ch - h
    if dx < 0 or dy < 0 or dx % 2 or dy % 2:
        raise ConfigError(f"cannot center-paste {w}x{h} into {cw}x{ch}")
    out[dy // 2 : dy // 2 + h, dx // 2 : dx // 2 + w] = img
    return out


def _axis_weights(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Half-pixel-center mapping with edge clamp.
    pos = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    i0 = np.clip(lo, 0, n_src - 1)
    i1 = np.clip(lo + 1, 0, n_src - 1)
    return i0, i1, frac


def bilinear_resize(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Resize with bilinear interpolation at half-pixel sample centers."""
    arr = np.asarray(img, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    y0, y1, fy = _axis_weights(arr.shape[0], height)
    x0, x1, fx = _axis_weights(arr.shape[1], width)
    rows = arr[y0] * (1.0 - fy)[:, None, None] + arr[y1] * fy[:, None, None]
    out = rows[:, x0] * (1.0 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]
    return out[:, :, 0] if squeeze else out


def area_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping ``factor`` x ``factor`` pixel blocks."""
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    if h % factor or w % factor:
        raise ConfigError(f"{h}x{w} image not divisible by block size {factor}")
    shape = (h // factor, factor, w // factor, factor) + arr.shape[2:]
    return arr.reshape(shape).mean(axis=(1, 3))


def to_gray(img: np.ndarray) -> np.ndarray:
    """Collapse RGB to a single channel by averaging."""
    return np.asarray(img, dtype=np.float64).mean(axis=2)
