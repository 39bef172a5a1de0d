"""Native no-reference quality metrics built on natural scene statistics.

Implements divisive-normalized (MSCN) coefficients, generalized Gaussian
fitting, 36-dimensional NSS feature vectors, and a completely blind quality
score measuring the Mahalanobis-type distance to a pristine-image model.
Neural metrics are supported through an out-of-process scorer contract.
"""

from __future__ import annotations

import base64
import json
import subprocess
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn

from .imgproc import ImagePlane, convolve_raw, resize, to_luma

MSCN_C = 1.0 / 255.0
PATCH_SIZE = 96
FEATURE_DIM = 36

# shape-parameter search grid for moment matching
_ALPHA_GRID = np.arange(0.2, 10.0 + 1e-9, 1e-3)
_R_GRID = (gamma_fn(2.0 / _ALPHA_GRID) ** 2) / (
    gamma_fn(1.0 / _ALPHA_GRID) * gamma_fn(3.0 / _ALPHA_GRID)
)


class FitError(ValueError):
    """Raised when a distribution fit is requested on degenerate samples."""


@dataclass(frozen=True)
class GgdFit:
    shape: float
    scale: float


@dataclass(frozen=True)
class AggdFit:
    shape: float
    scale_left: float
    scale_right: float
    mean: float


@dataclass(frozen=True)
class NiqeModel:
    """Gaussian over NSS features of sharp patches from a pristine image set."""

    mean: np.ndarray  # (F,)
    covariance: np.ndarray  # (F, F)
    patch_size: int = PATCH_SIZE
    feature_dim: int = FEATURE_DIM

    def __post_init__(self):
        if self.mean.shape != (self.feature_dim,):
            raise ValueError("mean length must equal feature_dim")
        if self.covariance.shape != (self.feature_dim, self.feature_dim):
            raise ValueError("covariance must be F x F")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")

    def to_json(self) -> str:
        def pack(a):
            return base64.b64encode(np.ascontiguousarray(a, dtype=np.float64).tobytes()).decode()

        return json.dumps(
            {
                "patch_size": self.patch_size,
                "feature_dim": self.feature_dim,
                "mean": pack(self.mean),
                "covariance": pack(self.covariance),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "NiqeModel":
        obj = json.loads(text)
        f = int(obj["feature_dim"])

        def unpack(s, shape):
            return np.frombuffer(base64.b64decode(s), dtype=np.float64).reshape(shape).copy()

        return cls(
            mean=unpack(obj["mean"], (f,)),
            covariance=unpack(obj["covariance"], (f, f)),
            patch_size=int(obj["patch_size"]),
            feature_dim=f,
        )


def _mscn_window() -> np.ndarray:
    k = np.zeros((7, 7), dtype=np.float64)
    sigma = 7.0 / 6.0
    t = np.arange(-3, 4, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


_MSCN_KERNEL = _mscn_window()


def compute_mscn(luma: ImagePlane, return_sigma: bool = False):
    """Divisive normalization: (I - mu) / (sigma + C) with a 7x7 Gaussian window.

    Returns a raw float64 array (values are signed and unbounded); with
    return_sigma=True also returns the local sigma field.
    """
    if luma.channels != 1:
        luma = to_luma(luma)
    if min(luma.height, luma.width) < 7:
        raise ValueError("image too small for the 7x7 normalization window")
    x = luma.data[:, :, 0].astype(np.float64)
    mu = convolve_raw(x, _MSCN_KERNEL, border="reflect")
    sigma = np.sqrt(np.abs(convolve_raw(x * x, _MSCN_KERNEL, border="reflect") - mu * mu))
    mscn = (x - mu) / (sigma + MSCN_C)
    if return_sigma:
        return mscn, sigma
    return mscn


def _invert_r_ratio(rhat: float) -> float:
    """Solve r(alpha) = rhat over the grid, then refine by local parabolic step."""
    d = (_R_GRID - rhat) ** 2
    i = int(np.argmin(d))
    alpha = _ALPHA_GRID[i]
    if 0 < i < len(_ALPHA_GRID) - 1:
        # parabolic interpolation through the three neighboring grid points
        y0, y1, y2 = d[i - 1], d[i], d[i + 1]
        denom = y0 - 2.0 * y1 + y2
        if denom > 0:
            alpha = alpha + 0.5e-3 * (y0 - y2) / denom
    return float(alpha)


def fit_ggd(samples) -> GgdFit:
    """Moment-matching fit of a zero-mean generalized Gaussian."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 100:
        raise FitError("need at least 100 samples")
    m_abs = np.mean(np.abs(x))
    m_sq = np.mean(x * x)
    if m_sq <= 0 or m_abs <= 0:
        raise FitError("degenerate samples (all zero)")
    rhat = (m_abs * m_abs) / m_sq
    alpha = _invert_r_ratio(rhat)
    scale = float(np.sqrt(m_sq) * np.sqrt(gamma_fn(1.0 / alpha) / gamma_fn(3.0 / alpha)))
    return GgdFit(shape=alpha, scale=scale)


def fit_aggd(samples) -> AggdFit:
    """Asymmetric generalized Gaussian fit (left/right second moments)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 100:
        raise FitError("need at least 100 samples")
    left = x[x < 0]
    right = x[x >= 0]
    if left.size == 0 or right.size == 0 or not np.any(right > 0):
        raise FitError("samples must contain both signs")
    left_std = np.sqrt(np.mean(left * left))
    right_std = np.sqrt(np.mean(right[right > 0] ** 2))
    if left_std <= 0 or right_std <= 0:
        raise FitError("degenerate one-sided samples")
    gammahat = left_std / right_std
    rhat = np.mean(np.abs(x)) ** 2 / np.mean(x * x)
    rhatnorm = (rhat * (gammahat**3 + 1.0) * (gammahat + 1.0)) / ((gammahat**2 + 1.0) ** 2)
    alpha = _invert_r_ratio(rhatnorm)
    conv = np.sqrt(gamma_fn(1.0 / alpha) / gamma_fn(3.0 / alpha))
    beta_l = float(left_std * conv)
    beta_r = float(right_std * conv)
    mean = float((beta_r - beta_l) * (gamma_fn(2.0 / alpha) / gamma_fn(1.0 / alpha)))
    return AggdFit(shape=alpha, scale_left=beta_l, scale_right=beta_r, mean=mean)


def _pair_products(mscn: np.ndarray):
    h = mscn[:, :-1] * mscn[:, 1:]
    v = mscn[:-1, :] * mscn[1:, :]
    d1 = mscn[:-1, :-1] * mscn[1:, 1:]
    d2 = mscn[:-1, 1:] * mscn[1:, :-1]
    return h, v, d1, d2


def _nss_features_from_mscn(mscn: np.ndarray) -> np.ndarray:
    """18 features: GGD(shape, scale) of MSCN + AGGD(4) of each orientation product."""
    feats = []
    g = fit_ggd(mscn)
    feats.extend([g.shape, g.scale])
    for prod in _pair_products(mscn):
        a = fit_aggd(prod)
        feats.extend([a.shape, a.mean, a.scale_left, a.scale_right])
    return np.array(feats, dtype=np.float64)


def brisque_features(img: ImagePlane) -> np.ndarray:
    """36-dim NSS feature vector: 18 per scale at full and half resolution."""
    luma = to_luma(img)
    if min(luma.height, luma.width) < 14:
        raise ValueError("image too small for two-scale NSS features")
    feats = []
    current = luma
    for scale in range(2):
        mscn = compute_mscn(current)
        feats.append(_nss_features_from_mscn(mscn))
        if scale == 0:
            current = resize(current, max(7, luma.width // 2), max(7, luma.height // 2), "bilinear")
    out = np.concatenate(feats)
    if not np.isfinite(out).all():
        raise FitError("non-finite feature vector")
    return out


def brisque_score(features: np.ndarray, weights: np.ndarray, bias: float = 0.0) -> float:
    """Optional linear scoring head over the 36 features with external weights."""
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if features.shape != weights.shape:
        raise ValueError("weights must match feature length")
    return float(features @ weights + bias)


def _patch_features(luma: ImagePlane, patch_size: int, sharpness_percentile: float | None):
    """Per-patch 36-dim features; optionally keep only the sharpest patches."""
    mscn1, sigma1 = compute_mscn(luma, return_sigma=True)
    half = resize(luma, max(7, luma.width // 2), max(7, luma.height // 2), "bilinear")
    mscn2 = compute_mscn(half)
    ny = luma.height // patch_size
    nx = luma.width // patch_size
    if ny == 0 or nx == 0:
        raise ValueError(f"image smaller than one {patch_size}x{patch_size} patch")
    patches = []
    sharpness = []
    for py in range(ny):
        for px in range(nx):
            y0, x0 = py * patch_size, px * patch_size
            sharpness.append(float(sigma1[y0 : y0 + patch_size, x0 : x0 + patch_size].mean()))
            patches.append((y0, x0))
    sharpness = np.array(sharpness)
    if sharpness_percentile is not None and len(patches) > 1:
        cutoff = np.percentile(sharpness, sharpness_percentile)
        keep = [p for p, s in zip(patches, sharpness) if s >= cutoff]
    else:
        keep = patches
    hp = patch_size // 2
    feats = []
    for y0, x0 in keep:
        m1 = mscn1[y0 : y0 + patch_size, x0 : x0 + patch_size]
        m2 = mscn2[y0 // 2 : y0 // 2 + hp, x0 // 2 : x0 // 2 + hp]
        feats.append(np.concatenate([_nss_features_from_mscn(m1), _nss_features_from_mscn(m2)]))
    return feats


def fit_niqe_model(pristine: list[ImagePlane], patch_size: int = PATCH_SIZE) -> NiqeModel:
    """Fit the pristine-set feature Gaussian from sharp patches (top quartile)."""
    if len(pristine) < 10:
        raise ValueError("need at least 10 pristine images")
    all_feats = []
    for img in pristine:
        luma = to_luma(img)
        if min(luma.height, luma.width) < patch_size:
            raise ValueError("pristine image smaller than one patch")
        all_feats.extend(_patch_features(luma, patch_size, sharpness_percentile=75.0))
    if len(all_feats) < 50:
        raise ValueError(f"too few usable patches ({len(all_feats)} < 50)")
    f = np.vstack(all_feats)
    mean = f.mean(axis=0)
    cov = np.cov(f, rowvar=False)
    cov = (cov + cov.T) / 2.0
    return NiqeModel(mean=mean, covariance=cov, patch_size=patch_size)


def niqe_score(img: ImagePlane, model: NiqeModel) -> float:
    """Distance between the image's patch-feature Gaussian and the pristine model."""
    luma = to_luma(img)
    if min(luma.height, luma.width) < model.patch_size:
        raise ValueError("image too small to score")
    feats = np.vstack(_patch_features(luma, model.patch_size, sharpness_percentile=None))
    mean = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False) if feats.shape[0] > 1 else np.zeros_like(model.covariance)
    pooled = (model.covariance + cov) / 2.0
    diff = model.mean - mean
    dist_sq = float(diff @ np.linalg.pinv(pooled) @ diff)
    return float(np.sqrt(max(dist_sq, 0.0)))


class ScorerError(RuntimeError):
    """External scorer failed or produced an invalid scores file."""


def run_external_scorer(
    manifest_path, command: list[str], metric: str, out_path, timeout: float = 600.0
) -> str:
    """Run an out-of-process scorer and validate its External Scores output.

    The scorer is invoked as `<command> --manifest <path> --out <path>` and must
    write JSON Lines of {"id", "metric", "score"} covering only manifest ids.
    """
    manifest_path = str(manifest_path)
    out_path = str(out_path)
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    known_ids = {e["id"] for e in manifest["entries"]}
    argv = list(command) + ["--manifest", manifest_path, "--out", out_path]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        raise ScorerError(f"scorer timed out after {timeout}s: {argv}") from exc
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout or "").strip()[-2000:]
        raise ScorerError(f"scorer exited {proc.returncode}: {tail}")
    with open(out_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScorerError(f"malformed scores line {lineno}: {exc}") from exc
            if obj.get("id") not in known_ids:
                raise ScorerError(f"line {lineno}: unknown id {obj.get('id')!r}")
            score = obj.get("score")
            if not isinstance(score, (int, float)) or not np.isfinite(score):
                raise ScorerError(f"line {lineno}: non-finite score {score!r}")
    return out_path
