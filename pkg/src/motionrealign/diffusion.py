"""Conditional DDPM over VAE latents with classifier-free guidance.

Timesteps are 1-based: ``alpha_bar[t - 1]`` belongs to step ``t``. A denoiser
is any callable ``(z_t, t, cond, drop) -> eps`` where ``cond`` is a (B, E)
array or ``None`` (null condition for every row) and ``drop`` flags rows that
must use the null condition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import DiffusionConfig
from .diffcore import AdamW, Linear, Module, StackConfig, TransformerStack, dropout_rng
from .diffcore import autograd as ag
from .diffcore.autograd import Tensor
from .diffcore.layers import sinusoidal_pe, timestep_embedding

log = logging.getLogger(__name__)

SAMPLERS = ("ddim_deterministic", "ddpm_ancestral")


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    inference_steps: np.ndarray

    def ab(self, t) -> np.ndarray:
        """alpha_bar at 1-based step(s) ``t``; step 0 maps to 1."""
        t = np.asarray(t)
        return np.where(t > 0, self.alpha_bar[np.maximum(t, 1) - 1], 1.0)


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2,
                   kind: str = "linear", inference_steps: int = 50,
                   check_terminal: bool = True) -> NoiseSchedule:
    if kind != "linear":
        raise ValueError(f"unsupported schedule kind {kind!r}")
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if check_terminal and alpha_bar[-1] >= 1e-2:
        raise ValueError(f"terminal alpha_bar {alpha_bar[-1]:.3g} >= 1e-2; noise does not "
                         "reach an approximately Gaussian state")
    n = max(1, min(inference_steps, T))
    steps = np.unique(np.round(np.arange(1, n + 1) * T / n).astype(int))
    return NoiseSchedule(T, beta, alpha, alpha_bar, steps)


def _check_t(t, schedule: NoiseSchedule) -> np.ndarray:
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"timestep outside [1, {schedule.T}]")
    return t


def q_sample(z0, t, eps, schedule: NoiseSchedule):
    """Closed-form forward noising, ``sqrt(ab) z0 + sqrt(1 - ab) eps``."""
    ab = schedule.ab(_check_t(t, schedule))
    ab = np.reshape(ab, np.shape(ab) + (1,) * (np.ndim(z0) - np.ndim(ab))) if np.ndim(ab) else ab
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def recover_x0(z_t, eps_hat, t, schedule: NoiseSchedule):
    """Clean-sample estimate ``(z_t - sqrt(1 - ab) eps_hat) / sqrt(ab)``; tensors pass through."""
    ab = schedule.ab(_check_t(t, schedule))
    if np.any(ab <= 0):
        raise ValueError("alpha_bar is zero; cannot recover the clean sample")
    nd = (z_t.ndim if isinstance(z_t, Tensor) else np.ndim(z_t))
    ab = np.reshape(ab, np.shape(ab) + (1,) * (nd - np.ndim(ab))) if np.ndim(ab) else ab
    return (z_t - eps_hat * np.sqrt(1.0 - ab)) * (1.0 / np.sqrt(ab))


class Denoiser(Module):
    """Two-token transformer: [condition + time, noisy latent] -> predicted noise."""

    def __init__(self, latent_dim: int, text_dim: int, cfg: DiffusionConfig, seed: int = 0):
        rng = np.random.default_rng([seed, 303])
        h = cfg.hidden_dim
        self.cfg = cfg
        self.latent_dim = latent_dim
        self.text_dim = text_dim
        self.latent_in = Linear(latent_dim, h, rng)
        self.cond_in = Linear(text_dim, h, rng)
        self.null_token = ag.parameter(rng.standard_normal(h) * 0.02)
        self.time_proj = Linear(h, h, rng)
        self.stack = TransformerStack(
            StackConfig(cfg.layers, cfg.heads, h, cfg.ff_mult, cfg.dropout, long_skip=True), rng)
        self.out = Linear(h, latent_dim, rng)
        # Linear path from z_t, weighted by sqrt(1 - alpha_bar_t) and starting at
        # the identity (the optimal predictor for unit-Gaussian data). It keeps
        # the prediction proportional to the input scale, which the stack's
        # final layer norm would otherwise discard.
        self.skip = Linear(latent_dim, latent_dim, rng, bias=False)
        self.skip.weight.data = np.eye(latent_dim)
        ab = np.cumprod(1.0 - np.linspace(cfg.beta_start, cfg.beta_end, cfg.timesteps))
        self.c_skip = np.sqrt(1.0 - ab)
        self.pe = sinusoidal_pe(2, h)

    def __call__(self, z_t, t, cond=None, drop=None, rng=None) -> Tensor:
        z_t = ag.as_tensor(z_t)
        b = z_t.shape[0]
        h = self.cfg.hidden_dim
        t = np.broadcast_to(np.asarray(t), (b,))
        temb = self.time_proj(Tensor(timestep_embedding(t, h)))
        null = ag.broadcast_to(self.null_token.reshape(1, h), (b, h))
        if cond is None:
            cond_tok = null
        else:
            keep = np.ones((b, 1)) if drop is None else (~np.asarray(drop, dtype=bool))[:, None] * 1.0
            cond_tok = self.cond_in(ag.as_tensor(cond)) * keep + null * (1.0 - keep)
        tokens = ag.stack([cond_tok + temb, self.latent_in(z_t)], axis=1) + self.pe
        out = self.stack(tokens, None, rng)
        return self.out(out[:, 1]) + self.skip(z_t) * self.c_skip[t - 1][:, None]


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def cfg_epsilon(denoiser, z_t, t, cond, s: float) -> np.ndarray:
    """Guided noise ``s * eps(c) + (1 - s) * eps(null)``."""
    z_t = np.asarray(z_t)
    b = z_t.shape[0]
    t = np.broadcast_to(np.asarray(t), (b,))
    both = _as_array(denoiser(np.concatenate([z_t, z_t]), np.concatenate([t, t]),
                              np.concatenate([cond, cond]),
                              np.concatenate([np.zeros(b, bool), np.ones(b, bool)])))
    eps_c, eps_u = both[:b], both[b:]
    return s * eps_c + (1.0 - s) * eps_u


def diffusion_loss(denoiser, z0, cond, schedule: NoiseSchedule, cond_dropout_p: float,
                   rng: np.random.Generator, drop_rng=None) -> Tensor:
    """Noise-prediction MSE with random timesteps and condition dropout."""
    if not 0.0 <= cond_dropout_p <= 1.0:
        raise ValueError("cond_dropout_p must lie in [0, 1]")
    z0 = np.asarray(z0)
    b = z0.shape[0]
    t = rng.integers(1, schedule.T + 1, size=b)
    eps = rng.standard_normal(z0.shape)
    drop = rng.random(b) < cond_dropout_p
    z_t = q_sample(z0, t, eps, schedule)
    pred = ag.as_tensor(denoiser(z_t, t, cond, drop, drop_rng) if drop_rng is not None
                        else denoiser(z_t, t, cond, drop))
    diff = pred - eps
    return (diff * diff).mean()


def sample_latents(denoiser, cond: np.ndarray, s: float, schedule: NoiseSchedule,
                   rng: np.random.Generator | int, sampler: str = "ddim_deterministic",
                   z_T: np.ndarray | None = None) -> np.ndarray:
    """Reverse diffusion over the inference subsequence for a batch of conditions."""
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    cond = np.atleast_2d(cond)
    b = cond.shape[0]
    latent_dim = getattr(denoiser, "latent_dim", None)
    z = rng.standard_normal((b, latent_dim)) if z_T is None else np.array(z_T, dtype=np.float64)
    steps = schedule.inference_steps
    for i in range(len(steps) - 1, -1, -1):
        t = int(steps[i])
        t_prev = int(steps[i - 1]) if i > 0 else 0
        eps = cfg_epsilon(denoiser, z, np.full(b, t), cond, s)
        x0 = recover_x0(z, eps, t, schedule)
        ab_prev = float(schedule.ab(t_prev))
        if sampler == "ddim_deterministic" or t_prev == 0:
            z = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
        else:
            ab_t = float(schedule.ab(t))
            sigma = np.sqrt((1 - ab_prev) / (1 - ab_t)) * np.sqrt(1 - ab_t / ab_prev)
            direction = np.sqrt(max(1.0 - ab_prev - sigma ** 2, 0.0)) * eps
            z = np.sqrt(ab_prev) * x0 + direction + sigma * rng.standard_normal(z.shape)
    return z


def sample_latent(denoiser, c: np.ndarray, s: float, schedule: NoiseSchedule, seed: int,
                  sampler: str = "ddim_deterministic") -> np.ndarray:
    return sample_latents(denoiser, np.asarray(c)[None], s, schedule, seed, sampler)[0]


@dataclass
class DiffusionTrainResult:
    denoiser: Denoiser
    schedule: NoiseSchedule
    log: list[dict] = field(default_factory=list)


def schedule_from_config(cfg: DiffusionConfig) -> NoiseSchedule:
    return build_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end, "linear",
                          cfg.inference_steps)


def train_diffusion(latents: np.ndarray, conds: np.ndarray, cfg: DiffusionConfig,
                    seed: int = 0) -> DiffusionTrainResult:
    """Fit the denoiser on fixed (latent, condition) pairs."""
    latents = np.asarray(latents)
    schedule = schedule_from_config(cfg)
    model = Denoiser(latents.shape[1], conds.shape[1], cfg, seed)
    model.train()
    opt = AdamW(model.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([seed, 404])
    history = []
    step = 0
    n = len(latents)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for i in range(0, n, cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            loss = diffusion_loss(model, latents[idx], conds[idx], schedule, cfg.cond_dropout,
                                  rng, dropout_rng(seed, step))
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"diffusion loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            total += float(loss.data) * len(idx)
            count += len(idx)
        history.append({"epoch": epoch + 1, "loss": total / count})
        if (epoch + 1) % 50 == 0:
            log.info("diffusion epoch %d loss %.5f", epoch + 1, total / count)
    model.eval()
    return DiffusionTrainResult(model, schedule, history)
