"""Deterministic image primitives shared by the metric and degradation stages.

Images are handled as float32 planes in [0, 1]. All operations are pure
functions; nothing here touches global state, so everything is safe to call
from worker threads.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

# Rec.601 luma weights, the convention of the classic NSS-based metrics.
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

LAPLACIAN_KERNEL = np.array(
    [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]], dtype=np.float64
)


class ImageError(ValueError):
    """Raised for undecodable or structurally invalid image input."""


@dataclass(frozen=True)
class ImagePlane:
    """A float image: (height, width, channels) array of samples in [0, 1]."""

    data: np.ndarray  # float32, shape (h, w, c), c in {1, 3}

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ImageError(f"expected (h, w, 1|3) array, got shape {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ImageError("empty image")
        if not np.isfinite(d).all():
            raise ImageError("non-finite samples")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def plane_from_array(arr: np.ndarray) -> ImagePlane:
    """Wrap an array as an ImagePlane, clamping to [0, 1] and casting to float32."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return ImagePlane(np.clip(arr, 0.0, 1.0))


def decode_image(data: bytes) -> ImagePlane:
    """Decode PNG/JPEG/WebP bytes to a 3-channel plane; 8-bit v maps to v/255."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except Exception as exc:
        raise ImageError(f"cannot decode image: {exc}") from exc
    return ImagePlane(arr)


def encode_png(img: ImagePlane) -> bytes:
    """Lossless PNG encoding of a plane (8-bit)."""
    arr = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    pim = Image.fromarray(arr)
    buf = io.BytesIO()
    pim.save(buf, format="PNG")
    return buf.getvalue()


def to_luma(img: ImagePlane) -> ImagePlane:
    """Rec.601 luma: Y = 0.299 R + 0.587 G + 0.114 B. 1-channel input is copied."""
    if img.channels == 1:
        return ImagePlane(img.data.copy())
    y = img.data.astype(np.float64) @ _LUMA_WEIGHTS
    return ImagePlane(np.clip(y, 0.0, 1.0).astype(np.float32)[:, :, None])


def is_grayscale(img: ImagePlane, tol: float) -> bool:
    """True iff every pixel's max channel difference is within tol."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    if img.channels == 1:
        return True
    d = img.data.astype(np.float64)
    spread = d.max(axis=2) - d.min(axis=2)
    return bool(spread.max() <= tol)


def laplacian_variance(luma: ImagePlane) -> float:
    """Variance of the 4-neighbor Laplacian over interior (valid) positions."""
    if luma.channels != 1:
        raise ImageError("laplacian_variance expects a 1-channel plane")
    if min(luma.height, luma.width) < 3:
        raise ImageError("image too small for a 3x3 Laplacian")
    x = luma.data[:, :, 0].astype(np.float64)
    resp = (
        x[:-2, 1:-1] + x[2:, 1:-1] + x[1:-1, :-2] + x[1:-1, 2:] - 4.0 * x[1:-1, 1:-1]
    )
    return float(resp.var())


def _pad_indices(n: int, r: int, border: str) -> np.ndarray:
    idx = np.arange(-r, n + r)
    if border == "reflect":
        # symmetric half-sample reflection: d c b a | a b c d | d c b a
        period = 2 * n
        idx = np.mod(idx, period)
        idx = np.where(idx >= n, period - 1 - idx, idx)
    elif border == "replicate":
        idx = np.clip(idx, 0, n - 1)
    else:
        raise ValueError(f"unknown border mode {border!r}")
    return idx


def convolve2d(luma: ImagePlane, kernel: np.ndarray, border: str = "reflect") -> ImagePlane:
    """Full 2-D convolution (kernel flipped) with same-size output.

    Kernel must be odd-sized in both dimensions. Border modes: "reflect"
    (half-sample symmetric) or "replicate" (edge clamp).
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError("kernel must be 2-D and odd-sized in both dims")
    if luma.channels != 1:
        raise ImageError("convolve2d expects a 1-channel plane")
    x = luma.data[:, :, 0].astype(np.float64)
    ry, rx = kernel.shape[0] // 2, kernel.shape[1] // 2
    xp = x[np.ix_(_pad_indices(x.shape[0], ry, border), _pad_indices(x.shape[1], rx, border))]
    kf = kernel[::-1, ::-1]
    out = np.zeros_like(x)
    for dy in range(kernel.shape[0]):
        for dx in range(kernel.shape[1]):
            out += kf[dy, dx] * xp[dy : dy + x.shape[0], dx : dx + x.shape[1]]
    return ImagePlane(out.astype(np.float32)[:, :, None])


def convolve_raw(x: np.ndarray, kernel: np.ndarray, border: str = "reflect") -> np.ndarray:
    """convolve2d on a bare 2-D float array, without [0,1] clamping."""
    kernel = np.asarray(kernel, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    ry, rx = kernel.shape[0] // 2, kernel.shape[1] // 2
    xp = x[np.ix_(_pad_indices(x.shape[0], ry, border), _pad_indices(x.shape[1], rx, border))]
    kf = kernel[::-1, ::-1]
    out = np.zeros_like(x)
    for dy in range(kernel.shape[0]):
        for dx in range(kernel.shape[1]):
            out += kf[dy, dx] * xp[dy : dy + x.shape[0], dx : dx + x.shape[1]]
    return out


def gaussian_kernel_1d(sigma: float, radius: int | None = None) -> np.ndarray:
    if radius is None:
        radius = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / max(sigma, 1e-12)) ** 2)
    return k / k.sum()


def gaussian_blur(img: ImagePlane, sigma: float) -> ImagePlane:
    """Separable Gaussian blur with reflect borders; sigma <= 0 is identity."""
    if sigma <= 0:
        return ImagePlane(img.data.copy())
    k = gaussian_kernel_1d(sigma)
    out = np.empty_like(img.data, dtype=np.float64)
    for c in range(img.channels):
        tmp = convolve_raw(img.data[:, :, c], k[:, None])
        out[:, :, c] = convolve_raw(tmp, k[None, :])
    return ImagePlane(np.clip(out, 0.0, 1.0).astype(np.float32))


def _resample_axis(x: np.ndarray, n_out: int, axis: int, interp: str) -> np.ndarray:
    n_in = x.shape[axis]
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5

    x = np.moveaxis(x, axis, 0)
    if interp == "nearest":
        idx = np.clip(np.floor(centers + 0.5).astype(int), 0, n_in - 1)
        out = x[idx]
    elif interp == "bilinear":
        i0 = np.floor(centers).astype(int)
        frac = centers - i0
        a = x[np.clip(i0, 0, n_in - 1)]
        b = x[np.clip(i0 + 1, 0, n_in - 1)]
        w = frac.reshape((-1,) + (1,) * (x.ndim - 1))
        out = a * (1.0 - w) + b * w
    elif interp == "bicubic":
        i0 = np.floor(centers).astype(int)
        frac = centers - i0
        out = np.zeros((n_out,) + x.shape[1:], dtype=np.float64)
        for tap in range(-1, 3):
            w = _cubic_weight(tap - frac).reshape((-1,) + (1,) * (x.ndim - 1))
            out += w * x[np.clip(i0 + tap, 0, n_in - 1)]
    else:
        raise ValueError(f"unknown interpolation {interp!r}")
    return np.moveaxis(out, 0, axis)


def _cubic_weight(t: np.ndarray) -> np.ndarray:
    # Keys cubic with a = -0.5 (Catmull-Rom)
    a = -0.5
    t = np.abs(t)
    w = np.where(
        t <= 1.0,
        (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0,
        np.where(t < 2.0, a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a, 0.0),
    )
    return w


def resize(img: ImagePlane, w: int, h: int, interp: str = "bilinear") -> ImagePlane:
    """Resample to exactly (w, h) with nearest, bilinear, or bicubic filtering."""
    if w < 1 or h < 1:
        raise ValueError("target dims must be >= 1")
    x = img.data.astype(np.float64)
    if h != img.height:
        x = _resample_axis(x, h, axis=0, interp=interp)
    if w != img.width:
        x = _resample_axis(x, w, axis=1, interp=interp)
    return ImagePlane(np.clip(x, 0.0, 1.0).astype(np.float32))


def jpeg_roundtrip(img: ImagePlane, quality: int) -> ImagePlane:
    """Encode to baseline JPEG and decode back; 4:2:0 below quality 95, else 4:4:4."""
    if img.channels != 3:
        raise ImageError("jpeg_roundtrip expects a 3-channel plane")
    if not 1 <= quality <= 100:
        raise ValueError("quality must be in 1..100")
    arr = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    pim = Image.fromarray(arr)
    buf = io.BytesIO()
    subsampling = 0 if quality >= 95 else 2
    pim.save(buf, format="JPEG", quality=quality, subsampling=subsampling)
    buf.seek(0)
    with Image.open(buf) as out:
        dec = np.asarray(out.convert("RGB"), dtype=np.float32) / 255.0
    return ImagePlane(dec)


def psnr(a: ImagePlane, b: ImagePlane) -> float:
    """Peak signal-to-noise ratio in dB between two equal-shape planes."""
    if a.data.shape != b.data.shape:
        raise ValueError("shape mismatch")
    mse = float(np.mean((a.data.astype(np.float64) - b.data.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))
