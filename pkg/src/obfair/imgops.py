"""Image buffers and the two face obfuscation primitives.

Both primitives act on the face region only. Everything outside the box is
copied through untouched, which the tests check bit for bit.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class ObfuscationMethod(str, enum.Enum):
    GAUSSIAN_BLUR = "gaussian_blur"
    PIXELATION = "pixelation"

    @classmethod
    def parse(cls, name: str) -> "ObfuscationMethod":
        aliases = {"blur": cls.GAUSSIAN_BLUR, "pixelate": cls.PIXELATION}
        if name in aliases:
            return aliases[name]
        return cls(name)


@dataclass(frozen=True)
class ImageBuffer:
    """8-bit interleaved pixels, row-major, 1 or 3 channels."""

    width: int
    height: int
    channels: int
    data: bytes

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image must be at least 1x1, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        expected = self.width * self.height * self.channels
        if len(self.data) != expected:
            raise ValueError(f"data length {len(self.data)} != {expected}")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        arr = np.asarray(arr)
        if arr.dtype != np.uint8:
            raise TypeError(f"expected uint8 array, got {arr.dtype}")
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"expected HxW or HxWxC array, got shape {arr.shape}")
        h, w, c = arr.shape
        return cls(w, h, c, np.ascontiguousarray(arr).tobytes())

    def to_array(self) -> np.ndarray:
        """Read-only HxWxC view of the samples."""
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width, self.channels)


@dataclass(frozen=True)
class FaceBox:
    x: int
    y: int
    w: int
    h: int

    @property
    def roi_size(self) -> int:
        return max(self.w, self.h)

    def fits(self, width: int, height: int) -> bool:
        return (
            self.w >= 1
            and self.h >= 1
            and self.x >= 0
            and self.y >= 0
            and self.x + self.w <= width
            and self.y + self.h <= height
        )

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "FaceBox":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]))


def full_box(img: ImageBuffer) -> FaceBox:
    return FaceBox(0, 0, img.width, img.height)


def _check_box(img: ImageBuffer, box: FaceBox) -> None:
    if not box.fits(img.width, img.height):
        raise ValueError(f"face box {box} does not fit a {img.width}x{img.height} image")


def round_half_up(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def _replace_roi(img: ImageBuffer, box: FaceBox, roi: np.ndarray) -> ImageBuffer:
    out = img.to_array().copy()
    out[box.y : box.y + box.h, box.x : box.x + box.w] = roi
    return ImageBuffer.from_array(out)


def _roi_float(img: ImageBuffer, box: FaceBox) -> np.ndarray:
    arr = img.to_array()
    return arr[box.y : box.y + box.h, box.x : box.x + box.w].astype(np.float64)


# --- Gaussian blur -----------------------------------------------------------


def kernel_sigma(k: int) -> float:
    return 0.3 * ((k - 1) / 2 - 1) + 0.8


def gaussian_kernel(k: int) -> np.ndarray:
    """Normalized 1-D Gaussian weights of odd length k >= 3.

    Sigma follows the usual size-to-sigma convention, so blur strength is
    controlled by the kernel size alone.
    """
    if k < 3 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {k}")
    sigma = kernel_sigma(k)
    offsets = np.arange(k, dtype=np.float64) - (k - 1) / 2
    g = np.exp(-(offsets**2) / (2 * sigma**2))
    return g / g.sum()


def _convolve_axis(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = (len(kernel) - 1) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    # half-sample mirror (edge sample repeated): keeps the ROI mean exact before rounding
    padded = np.pad(a, pad, mode="symmetric")
    n = a.shape[axis]
    out = np.zeros_like(a)
    for i, weight in enumerate(kernel):
        out += weight * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def blur_roi(img: ImageBuffer, box: FaceBox, k: int) -> ImageBuffer:
    """Gaussian-blur the face box with a k x k kernel.

    Horizontal pass then vertical pass in float64, borders mirrored at the
    box edges so nothing outside the face bleeds in.
    """
    _check_box(img, box)
    kernel = gaussian_kernel(k)
    roi = _roi_float(img, box)
    roi = _convolve_axis(roi, kernel, axis=1)
    roi = _convolve_axis(roi, kernel, axis=0)
    return _replace_roi(img, box, round_half_up(roi))


# --- Pixelation --------------------------------------------------------------


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) weights averaging source pixels by fractional overlap."""
    scale = n_in / n_out
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                m[i, j] = overlap / scale
    return m


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear interpolation weights, pixel-center aligned, edges clamped."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        j0 = int(np.floor(src))
        j1 = min(j0 + 1, n_in - 1)
        frac = src - j0
        m[i, j0] += 1.0 - frac
        m[i, j1] += frac
    return m


def pixelated_shape(w: int, h: int, s: int) -> tuple[int, int]:
    """Target (width, height) when the longer side is shrunk to s."""
    if w >= h:
        return s, max(1, int(np.floor(h * s / w + 0.5)))
    return max(1, int(np.floor(w * s / h + 0.5))), s


def pixelate_roi(img: ImageBuffer, box: FaceBox, s: int) -> ImageBuffer:
    """Shrink the face box so its longer side is s pixels, then grow it back.

    Area averaging on the way down, bilinear interpolation on the way up.
    """
    _check_box(img, box)
    if not 1 <= s <= box.roi_size:
        raise ValueError(f"pixelation size must lie in [1, {box.roi_size}], got {s}")
    tw, th = pixelated_shape(box.w, box.h, s)
    roi = _roi_float(img, box)
    down_y, down_x = _area_matrix(box.h, th), _area_matrix(box.w, tw)
    up_y, up_x = _bilinear_matrix(th, box.h), _bilinear_matrix(tw, box.w)
    small = np.einsum("ij,jkc,lk->ilc", down_y, roi, down_x)
    big = np.einsum("ij,jkc,lk->ilc", up_y, small, up_x)
    return _replace_roi(img, box, round_half_up(big))


# --- Codec -------------------------------------------------------------------


def _from_pil(im: Image.Image) -> ImageBuffer:
    if im.mode not in ("L", "RGB"):
        im = im.convert("L" if im.mode in ("1", "LA", "I", "I;16", "F") else "RGB")
    return ImageBuffer.from_array(np.asarray(im, dtype=np.uint8))


def decode_image(blob: bytes) -> ImageBuffer:
    with Image.open(io.BytesIO(blob)) as im:
        if im.format not in ("PNG", "JPEG"):
            raise ValueError(f"unsupported image format {im.format!r}")
        im.load()
        return _from_pil(im)


def load_image(path: str | Path) -> ImageBuffer:
    return decode_image(Path(path).read_bytes())


def encode_png(img: ImageBuffer) -> bytes:
    arr = img.to_array()
    im = Image.fromarray(np.ascontiguousarray(arr[:, :, 0]) if img.channels == 1 else np.ascontiguousarray(arr))
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def save_png(img: ImageBuffer, path: str | Path) -> None:
    Path(path).write_bytes(encode_png(img))
