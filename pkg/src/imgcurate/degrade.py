"""Seeded synthesis of realistic low-quality images.

The chain follows the second-order blur / resize / noise / JPEG design used
for real-world super-resolution data synthesis. Every draw comes from a
seeded generator, so a (pixels, seed, config) triple fully determines the
output; per-image seeds are derived by hashing, which makes parallel corpus
generation reproducible at any worker count.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import j1

from . import __version__
from .corpus import MANIFEST_VERSION, content_id
from .imgproc import (
    ImagePlane,
    convolve_raw,
    decode_image,
    encode_png,
    resize,
    jpeg_roundtrip,
)


@dataclass(frozen=True)
class BlurConfig:
    kernel_size_range: tuple = (7, 21)  # odd sizes sampled inclusive
    sigma_range: tuple = (0.2, 3.0)
    anisotropic_prob: float = 0.5
    sinc_prob: float = 0.1


@dataclass(frozen=True)
class ResizeConfig:
    scale_range: tuple = (0.15, 1.5)
    mode_weights: tuple = (("nearest", 0.2), ("bilinear", 0.6), ("bicubic", 0.2))


@dataclass(frozen=True)
class NoiseConfig:
    gaussian_sigma_range: tuple = (1.0 / 255.0, 30.0 / 255.0)
    poisson_scale_range: tuple = (0.05, 3.0)
    gaussian_prob: float = 0.5


@dataclass(frozen=True)
class JpegConfig:
    quality_range: tuple = (30, 95)


@dataclass(frozen=True)
class DegradationConfig:
    orders: int = 2
    blur: BlurConfig = field(default_factory=BlurConfig)
    resize: ResizeConfig = field(default_factory=ResizeConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    jpeg: JpegConfig = field(default_factory=JpegConfig)
    final_size: tuple | None = None  # (w, h); None keeps input dims
    final_sinc_prob: float = 0.8

    def __post_init__(self):
        for lo, hi in (
            self.blur.sigma_range,
            self.resize.scale_range,
            self.noise.gaussian_sigma_range,
            self.noise.poisson_scale_range,
            self.jpeg.quality_range,
        ):
            if not lo <= hi:
                raise ValueError("config ranges must be ordered")
        for p in (self.blur.anisotropic_prob, self.blur.sinc_prob, self.final_sinc_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.orders not in (1, 2):
            raise ValueError("orders must be 1 or 2")

    def to_json_obj(self) -> dict:
        return asdict(self)


def derive_seed(seed: int, key: str) -> int:
    """Stable per-item seed from a global seed and a string key."""
    h = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.PCG64(seed))


def _sinc_kernel(size: int, cutoff: float) -> np.ndarray:
    """Circular low-pass (windowed jinc) kernel with the given cutoff frequency."""
    r = size // 2
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    dist = np.hypot(x, y)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(
            dist == 0.0,
            cutoff**2 / (4.0 * np.pi),
            cutoff * j1(cutoff * dist) / (2.0 * np.pi * dist),
        )
    return k / k.sum()


def _gaussian_kernel(size: int, sigma_x: float, sigma_y: float, theta: float) -> np.ndarray:
    r = size // 2
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    ct, st = np.cos(theta), np.sin(theta)
    xr = ct * x + st * y
    yr = -st * x + ct * y
    k = np.exp(-0.5 * ((xr / sigma_x) ** 2 + (yr / sigma_y) ** 2))
    return k / k.sum()


def sample_kernel(rng: np.random.Generator, cfg: DegradationConfig) -> np.ndarray:
    """Draw a blur kernel: windowed sinc, or (an)isotropic rotated Gaussian."""
    lo, hi = cfg.blur.kernel_size_range
    size = int(rng.choice(np.arange(lo, hi + 1, 2)))
    if rng.uniform() < cfg.blur.sinc_prob:
        cutoff = rng.uniform(np.pi / 3.0, np.pi)
        return _sinc_kernel(size, cutoff)
    sigma_x = rng.uniform(*cfg.blur.sigma_range)
    if rng.uniform() < cfg.blur.anisotropic_prob:
        sigma_y = rng.uniform(*cfg.blur.sigma_range)
        theta = rng.uniform(0.0, np.pi)
    else:
        sigma_y, theta = sigma_x, 0.0
    return _gaussian_kernel(size, sigma_x, sigma_y, theta)


def _apply_kernel(img: ImagePlane, kernel: np.ndarray) -> ImagePlane:
    if min(img.height, img.width) < kernel.shape[0]:
        raise ValueError(
            f"image {img.width}x{img.height} smaller than kernel {kernel.shape[0]}"
        )
    out = np.empty_like(img.data, dtype=np.float64)
    for c in range(img.channels):
        out[:, :, c] = convolve_raw(img.data[:, :, c], kernel, border="reflect")
    return ImagePlane(np.clip(out, 0.0, 1.0).astype(np.float32))


def _add_noise(img: ImagePlane, rng: np.random.Generator, cfg: NoiseConfig) -> ImagePlane:
    x = img.data.astype(np.float64)
    if rng.uniform() < cfg.gaussian_prob:
        sigma = rng.uniform(*cfg.gaussian_sigma_range)
        noise = rng.normal(0.0, sigma, size=x.shape)
    else:
        # shot noise: signal-dependent sigma, dark regions quieter than bright
        lam = rng.uniform(*cfg.poisson_scale_range)
        sigma = np.sqrt(np.clip(x, 0.0, 1.0) * lam / 255.0)
        noise = rng.normal(0.0, 1.0, size=x.shape) * sigma
    return ImagePlane(np.clip(x + noise, 0.0, 1.0).astype(np.float32))


def degrade_once(
    img: ImagePlane, rng: np.random.Generator, cfg: DegradationConfig
) -> ImagePlane:
    """One order of the chain: blur, random resize, noise, JPEG round-trip."""
    kernel = sample_kernel(rng, cfg)
    out = _apply_kernel(img, kernel)

    scale = rng.uniform(*cfg.resize.scale_range)
    modes, weights = zip(*cfg.resize.mode_weights)
    w = np.array(weights, dtype=np.float64)
    mode = modes[int(rng.choice(len(modes), p=w / w.sum()))]
    # keep enough pixels for the next order's largest kernel
    floor = max(kernel.shape[0], cfg.blur.kernel_size_range[1])
    tw = max(floor, int(round(out.width * scale)))
    th = max(floor, int(round(out.height * scale)))
    out = resize(out, tw, th, mode)

    out = _add_noise(out, rng, cfg.noise)

    qlo, qhi = cfg.jpeg.quality_range
    quality = int(rng.integers(qlo, qhi + 1))
    return jpeg_roundtrip(out, quality)


def degrade(img: ImagePlane, seed: int, cfg: DegradationConfig) -> ImagePlane:
    """Full degradation: `orders` chain passes, then a final filtered resize."""
    rng = make_rng(seed)
    out = img
    for _ in range(cfg.orders):
        out = degrade_once(out, rng, cfg)
    if cfg.final_size is not None:
        fw, fh = cfg.final_size
    else:
        fw, fh = img.width, img.height
    if rng.uniform() < cfg.final_sinc_prob:
        cutoff = rng.uniform(np.pi / 3.0, np.pi)
        size = min(21, (min(out.height, out.width) // 2) * 2 - 1)
        if size >= 3:
            out = _apply_kernel(out, _sinc_kernel(size, cutoff))
    return resize(out, fw, fh, "bicubic")


def build_synthetic_corpus(
    clean_dir: str,
    out_dir: str,
    seed: int,
    cfg: DegradationConfig,
    workers: int = 1,
) -> str:
    """Write originals plus degraded twins, with a labeled manifest.

    Output layout: out_dir/images/<id>.png plus out_dir/manifest.json in the
    corpus manifest format with per-entry label and twin_id fields.
    Deterministic for a fixed (clean_dir contents, seed, cfg).
    """
    names = sorted(
        n
        for n in os.listdir(clean_dir)
        if os.path.splitext(n)[1].lower() in {".png", ".jpg", ".jpeg", ".webp"}
    )
    if not names:
        raise ValueError(f"no images in {clean_dir}")
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)

    def build_pair(name):
        with open(os.path.join(clean_dir, name), "rb") as f:
            data = f.read()
        img = decode_image(data)
        clean_id = content_id(data)
        degraded = degrade(img, derive_seed(seed, clean_id), cfg)
        deg_bytes = encode_png(degraded)
        deg_id = content_id(deg_bytes)
        clean_path = os.path.join(img_dir, f"{clean_id}.png")
        with open(clean_path, "wb") as f:
            f.write(encode_png(img))
        with open(os.path.join(img_dir, f"{deg_id}.png"), "wb") as f:
            f.write(deg_bytes)
        return [
            {
                "id": clean_id,
                "path": f"images/{clean_id}.png",
                "caption": None,
                "scores": {},
                "verdicts": {},
                "label": "clean",
                "twin_id": deg_id,
            },
            {
                "id": deg_id,
                "path": f"images/{deg_id}.png",
                "caption": None,
                "scores": {},
                "verdicts": {},
                "label": "degraded",
                "twin_id": clean_id,
            },
        ]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(build_pair, names))
    else:
        pairs = [build_pair(n) for n in names]
    entries = sorted((e for pair in pairs for e in pair), key=lambda e: e["id"])
    manifest = {
        "version": MANIFEST_VERSION,
        "provenance": {
            "tool_version": __version__,
            "seed": seed,
            "config": cfg.to_json_obj(),
        },
        "entries": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n")
    return path
