"""Noise schedules, the forward process, DDIM stepping and guided sampling.

Conventions: timesteps are integers t in [1, T] with the boundary alpha_bar(0) = 1,
so the final reverse step returns the predicted clean latent. The forward process is

    x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps

and the (eta-parameterised) DDIM update first recovers the predicted x0 and then
re-noises it toward t_prev.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

SCHEDULE_KINDS = ("linear", "cosine")

# De-facto defaults of the reference diffusion configs this artifact mirrors.
LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep beta/alpha/alpha_bar tables for a T-step diffusion."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t: int) -> float:
        """alpha_bar_t with the alpha_bar(0) = 1 boundary convention."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bars[t - 1])


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs of the guided DDIM sampling loop."""

    num_steps: int = 50
    guidance_scale: float = 1.75
    eta: float = 0.0
    seed: int = 0

    def validate(self, schedule: NoiseSchedule) -> None:
        if self.num_steps < 1 or self.num_steps > schedule.T:
            raise ValueError(f"num_steps must lie in [1, T={schedule.T}], got {self.num_steps}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.guidance_scale < 0:
            raise ValueError(f"guidance_scale must be nonnegative, got {self.guidance_scale}")


def make_schedule(kind: str, T: int) -> NoiseSchedule:
    """Build a noise schedule of the given family over T steps.

    The linear family interpolates beta from 1e-4 to 2e-2; the cosine family
    derives betas from the squared-cosine alpha_bar curve.
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if kind == "linear":
        betas = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T, dtype=np.float64)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        curve = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
        curve /= curve[0]
        betas = np.clip(1.0 - curve[1:] / curve[:-1], 1e-8, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def _coeff(value, like):
    """Wrap a scalar coefficient so it multiplies `like` without dtype surprises."""
    if torch.is_tensor(like):
        return torch.as_tensor(value, dtype=like.dtype, device=like.device)
    return value


def _per_sample(values: np.ndarray, t, like):
    """Gather per-timestep values for scalar or per-sample integer t."""
    if np.isscalar(t) or getattr(t, "ndim", 0) == 0:
        return _coeff(float(values[int(t)]), like)
    idx = np.asarray(t.cpu() if torch.is_tensor(t) else t, dtype=np.int64)
    gathered = values[idx].reshape((-1,) + (1,) * (like.ndim - 1))
    return _coeff(gathered, like)


def _alpha_bar_table(schedule: NoiseSchedule) -> np.ndarray:
    # index t directly; row 0 is the boundary convention
    return np.concatenate(([1.0], schedule.alpha_bars))


def q_sample(x0, t, eps, schedule: NoiseSchedule):
    """Forward-noise x0 to timestep t using externally supplied eps."""
    if getattr(x0, "shape", None) != getattr(eps, "shape", None):
        raise ValueError(f"x0 and eps shapes differ: {x0.shape} vs {eps.shape}")
    ab = _per_sample(_alpha_bar_table(schedule), t, x0)
    sqrt = torch.sqrt if torch.is_tensor(x0) else np.sqrt
    return sqrt(ab) * x0 + sqrt(1.0 - ab) * eps


def ddim_step(x_t, eps_hat, t: int, t_prev: int, schedule: NoiseSchedule, eta: float = 0.0, noise=None):
    """One DDIM update from timestep t to t_prev given the predicted noise."""
    if t_prev >= t:
        raise ValueError(f"t_prev must be < t, got t_prev={t_prev}, t={t}")
    if eta > 0 and noise is None:
        raise ValueError("eta > 0 requires a noise tensor")
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    x0_pred = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev)
    out = np.sqrt(ab_prev) * x0_pred + np.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps_hat
    if eta > 0:
        out = out + sigma * noise
    return out


def cfg_combine(eps_uncond, eps_cond, scale: float):
    """Classifier-free guidance: eps_uncond + scale * (eps_cond - eps_uncond)."""
    if getattr(eps_uncond, "shape", None) != getattr(eps_cond, "shape", None):
        raise ValueError(
            f"eps_uncond and eps_cond shapes differ: {eps_uncond.shape} vs {eps_cond.shape}"
        )
    return eps_uncond + scale * (eps_cond - eps_uncond)


def ddim_timesteps(T: int, num_steps: int) -> list[int]:
    """Strictly decreasing uniform-stride subsequence of [1, T] used for sampling."""
    if not 1 <= num_steps <= T:
        raise ValueError(f"num_steps must lie in [1, {T}], got {num_steps}")
    stride = T / num_steps
    ts = [int(round(stride * k)) for k in range(num_steps, 0, -1)]
    if len(set(ts)) != len(ts) or any(not 1 <= t <= T for t in ts):
        raise ValueError(f"cannot build {num_steps} distinct timesteps over [1, {T}]")
    return ts


@torch.no_grad()
def sample(
    denoise_fn,
    decode_fn,
    cond,
    null_cond,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    latent_shape: tuple[int, ...],
):
    """Run the guided DDIM loop from seeded Gaussian noise and decode the result.

    `denoise_fn(z, t, cond)` predicts eps; `decode_fn(z)` maps final latents to
    images. With eta=0 the output is a deterministic function of (weights, cond,
    config).
    """
    config.validate(schedule)
    gen = torch.Generator().manual_seed(config.seed)
    z = torch.randn(latent_shape, generator=gen, dtype=torch.float32)
    timesteps = ddim_timesteps(schedule.T, config.num_steps)
    for i, t in enumerate(timesteps):
        t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else 0
        eps_u = denoise_fn(z, t, null_cond)
        if config.guidance_scale == 0.0:
            eps = eps_u
        else:
            eps_c = denoise_fn(z, t, cond)
            eps = cfg_combine(eps_u, eps_c, config.guidance_scale)
        noise = None
        if config.eta > 0:
            noise = torch.randn(latent_shape, generator=gen, dtype=torch.float32)
        z = ddim_step(z, eps, t, t_prev, schedule, eta=config.eta, noise=noise)
    return decode_fn(z)
