"""Diffusion-process math: schedules, forward noising, loss, guidance, sampling.

States are flat float64 vectors; the denoiser is any callable
(state, t, conditioning) -> predicted noise of the same shape. No neural
network or autodiff lives here: this module supplies the numeric substrate a
training loop or sampler composes around an external model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Denoiser = Callable[[np.ndarray, int, object], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray  # (T,), values in (0, 1)
    alpha_bar: np.ndarray  # (T,), cumulative products of (1 - beta)

    def __post_init__(self):
        if self.beta.ndim != 1 or self.beta.shape != self.alpha_bar.shape:
            raise ValueError("beta and alpha_bar must be equal-length vectors")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ValueError("beta values must lie in (0, 1)")

    @property
    def T(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class GuidanceConfig:
    lambda_s: float
    c_pos: object = None
    c_neg: object = None

    def __post_init__(self):
        if not np.isfinite(self.lambda_s) or self.lambda_s < 0:
            raise ValueError("lambda_s must be finite and >= 0")


def make_schedule(kind: str, T: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linear beta ramp, or squared-cosine alpha_bar with back-derived betas."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError("need 0 < beta_min <= beta_max < 1")
    if kind == "linear":
        beta = np.linspace(beta_min, beta_max, T)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos((steps / T + s) / (1.0 + s) * np.pi / 2.0) ** 2
        abar = f / f[0]
        beta = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


def desk_schedule(T: int = 50) -> NoiseSchedule:
    """Short test profile: the standard linear ramp with betas scaled by 1000/T.

    Keeps the terminal signal level near zero so ancestral sampling from a
    unit Gaussian is well-posed at small step counts.
    """
    scale = 1000.0 / T
    return make_schedule("linear", T, 1e-4 * scale, min(0.999, 0.02 * scale))


def forward_noise(x: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) * x + sqrt(1 - abar_t) * eps (t is 1-based)."""
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x.shape != eps.shape:
        raise ValueError("x and eps shapes differ")
    if not 1 <= t <= sched.T:
        raise ValueError(f"t={t} outside 1..{sched.T}")
    abar = sched.alpha_bar[t - 1]
    return np.sqrt(abar) * x + np.sqrt(1.0 - abar) * eps


def training_loss(eps: np.ndarray, eps_hat: np.ndarray) -> float:
    """Squared L2 norm of the prediction error, summed over components."""
    eps = np.asarray(eps, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps.shape != eps_hat.shape:
        raise ValueError("shape mismatch")
    d = eps - eps_hat
    return float(np.sum(d * d))


def cfg_mix(eps_pos: np.ndarray, eps_neg: np.ndarray, lambda_s: float) -> np.ndarray:
    """Guided noise estimate: eps_pos + lambda_s * (eps_pos - eps_neg)."""
    eps_pos = np.asarray(eps_pos, dtype=np.float64)
    eps_neg = np.asarray(eps_neg, dtype=np.float64)
    if eps_pos.shape != eps_neg.shape:
        raise ValueError("shape mismatch")
    return (1.0 + lambda_s) * eps_pos - lambda_s * eps_neg


def guided_prediction(den: Denoiser, z_t: np.ndarray, t: int, g: GuidanceConfig) -> np.ndarray:
    """Two denoiser evaluations (positive / negative conditioning), then mix."""
    try:
        eps_pos = den(z_t, t, g.c_pos)
    except Exception as exc:
        raise RuntimeError(f"denoiser failed on positive branch at t={t}") from exc
    try:
        eps_neg = den(z_t, t, g.c_neg)
    except Exception as exc:
        raise RuntimeError(f"denoiser failed on negative branch at t={t}") from exc
    return cfg_mix(eps_pos, eps_neg, g.lambda_s)


def ddpm_sample(
    den: Denoiser,
    sched: NoiseSchedule,
    g: GuidanceConfig | None,
    rng: np.random.Generator,
    shape: tuple,
) -> np.ndarray:
    """Ancestral DDPM reverse process from unit Gaussian noise.

    Per step: mean = (z_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(1 - beta_t),
    plus sqrt(beta_t) noise for every step but the last.
    """
    z = rng.standard_normal(shape)
    for t in range(sched.T, 0, -1):
        if g is not None:
            eps = guided_prediction(den, z, t, g)
        else:
            eps = den(z, t, None)
        beta = sched.beta[t - 1]
        abar = sched.alpha_bar[t - 1]
        z = (z - (beta / np.sqrt(1.0 - abar)) * eps) / np.sqrt(1.0 - beta)
        if t > 1:
            z = z + np.sqrt(beta) * rng.standard_normal(shape)
        if not np.isfinite(z).all():
            raise FloatingPointError(f"non-finite state at step t={t}")
    return z


def ddim_sample(
    den: Denoiser,
    sched: NoiseSchedule,
    g: GuidanceConfig | None,
    rng: np.random.Generator,
    shape: tuple,
) -> np.ndarray:
    """Deterministic (eta = 0) reverse process; rng seeds only the start state."""
    z = rng.standard_normal(shape)
    for t in range(sched.T, 0, -1):
        eps = guided_prediction(den, z, t, g) if g is not None else den(z, t, None)
        abar = sched.alpha_bar[t - 1]
        abar_prev = sched.alpha_bar[t - 2] if t > 1 else 1.0
        x0 = (z - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)
        z = np.sqrt(abar_prev) * x0 + np.sqrt(1.0 - abar_prev) * eps
        if not np.isfinite(z).all():
            raise FloatingPointError(f"non-finite state at step t={t}")
    return z


def gaussian_analytic_denoiser(mean: float, std: float, sched: NoiseSchedule) -> Denoiser:
    """Optimal noise predictor for data ~ N(mean, std^2), ignoring conditioning.

    With z = sqrt(abar) x + sqrt(1-abar) e, the posterior over x is Gaussian
    and the optimal prediction is (z - sqrt(abar) E[x|z]) / sqrt(1 - abar).
    """

    def den(z, t, _cond):
        abar = sched.alpha_bar[t - 1]
        var_z = abar * std**2 + (1.0 - abar)
        e_x_given_z = mean + (np.sqrt(abar) * std**2 / var_z) * (z - np.sqrt(abar) * mean)
        return (z - np.sqrt(abar) * e_x_given_z) / np.sqrt(1.0 - abar)

    return den
