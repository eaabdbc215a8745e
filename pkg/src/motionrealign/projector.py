"""Latent realignment: an autoencoder over VAE latents whose code space is
pulled toward the text-embedding directions of the paired captions.

Training minimises ``la * align + lr * rec + lv * var`` with the upstream VAE,
denoiser and text encoder frozen. At inference ``realign`` is inserted between
latent sampling and VAE decoding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ProjectorConfig
from .diffcore import AdamW, Linear, Module, StackConfig, TransformerStack, dropout_rng
from .diffcore import autograd as ag
from .diffcore.autograd import Tensor
from .diffcore.layers import sinusoidal_pe

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-8


class Projector(Module):
    def __init__(self, latent_dim: int, text_dim: int, cfg: ProjectorConfig, seed: int = 0):
        rng = np.random.default_rng([seed, 505])
        h = cfg.hidden_dim
        self.cfg = cfg
        self.latent_dim = latent_dim
        self.text_dim = text_dim
        stack = StackConfig(cfg.layers, cfg.heads, h, cfg.ff_mult, cfg.dropout)
        self.enc_in = Linear(latent_dim, h, rng)
        self.encoder = TransformerStack(stack, rng)
        self.enc_out = Linear(h, text_dim, rng)
        self.dec_in = Linear(text_dim, h, rng)
        self.decoder = TransformerStack(stack, rng)
        self.dec_out = Linear(h, latent_dim, rng)
        self.pe = sinusoidal_pe(1, h)

    def encode(self, z_vae, rng=None) -> Tensor:
        z = ag.as_tensor(z_vae)
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"projector expects latents of dim {self.latent_dim}, got {z.shape[-1]}")
        b = z.shape[0]
        tok = self.enc_in(z).reshape(b, 1, -1) + self.pe
        return self.enc_out(self.encoder(tok, None, rng)[:, 0])

    def decode(self, z_proj, rng=None) -> Tensor:
        z = ag.as_tensor(z_proj)
        if z.shape[-1] != self.text_dim:
            raise ValueError(f"projector decoder expects dim {self.text_dim}, got {z.shape[-1]}")
        b = z.shape[0]
        tok = self.dec_in(z).reshape(b, 1, -1) + self.pe
        return self.dec_out(self.decoder(tok, None, rng)[:, 0])


def project(p: Projector, z_vae) -> np.ndarray:
    return p.encode(np.atleast_2d(z_vae)).data


def unproject(p: Projector, z_proj) -> np.ndarray:
    return p.decode(np.atleast_2d(z_proj)).data


def realign(p: Projector, z_vae) -> np.ndarray:
    """Round trip through the text-aligned space (eval mode, deterministic)."""
    z = np.asarray(z_vae)
    out = p.decode(p.encode(np.atleast_2d(z))).data
    return out[0] if z.ndim == 1 else out


def alignment_loss(z_proj, c) -> Tensor:
    """Batch mean of ``1 - cos(z_proj, c)``."""
    z = ag.as_tensor(z_proj)
    c = ag.as_tensor(c)
    zn = np.sqrt((z.data * z.data).sum(axis=-1))
    if np.any(zn == 0):
        raise ValueError("alignment loss undefined for a zero-norm projected latent")
    dot = (z * c).sum(axis=-1)
    norms = ag.sqrt((z * z).sum(axis=-1)) * ag.sqrt((c * c).sum(axis=-1))
    return (1.0 - dot / norms).mean()


def reconstruction_loss(z_vae, z_hat) -> Tensor:
    """Batch mean of the squared L2 distance."""
    diff = ag.as_tensor(z_hat) - ag.as_tensor(z_vae)
    if diff.ndim == 1:
        return (diff * diff).sum()
    return (diff * diff).sum(axis=-1).mean()


def _moments(x: Tensor) -> tuple[Tensor, Tensor]:
    mu = x.mean(axis=0)
    xc = x - mu
    var = (xc * xc).mean(axis=0)
    low = var.data < VAR_FLOOR
    if np.any(low):
        keep = (~low).astype(np.float64)
        var = var * keep + VAR_FLOOR * (1.0 - keep)
    return mu, var


def variance_loss(gt_batch, pred_batch) -> Tensor:
    """Sum over dimensions of KL(P_d || Q_d) between moment-matched Gaussians.

    P is fitted to the ground-truth batch, Q to the predictions.
    """
    gt = ag.as_tensor(gt_batch)
    pred = ag.as_tensor(pred_batch)
    if gt.shape[0] < 2 or pred.shape[0] < 2:
        raise ValueError("variance loss needs a batch of at least 2")
    mu_p, var_p = _moments(gt)
    mu_q, var_q = _moments(pred)
    d = mu_p - mu_q
    kl = ag.log(var_q / var_p) * 0.5 + (var_p + d * d) / (var_q * 2.0) - 0.5
    return kl.sum()


def loss_weights(cfg: ProjectorConfig) -> tuple[float, float, float]:
    return (0.0 if cfg.no_align else cfg.lambda_align,
            0.0 if cfg.no_rec else cfg.lambda_rec,
            0.0 if cfg.no_kl else cfg.lambda_var)


def projector_objective(model: Projector, z_vae: np.ndarray, cond: np.ndarray,
                        cfg: ProjectorConfig, rng=None) -> tuple[Tensor, dict[str, float]]:
    """Weighted objective and its unweighted components for one batch."""
    z_proj = model.encode(z_vae, rng)
    z_hat = model.decode(z_proj, rng)
    w_align, w_rec, w_var = loss_weights(cfg)
    l_align = alignment_loss(z_proj, cond)
    l_rec = reconstruction_loss(z_vae, z_hat)
    l_var = variance_loss(z_vae, z_hat)
    total = l_align * w_align + l_rec * w_rec + l_var * w_var
    parts = {"align": float(l_align.data), "rec": float(l_rec.data), "var": float(l_var.data)}
    return total, parts


@dataclass
class ProjectorTrainResult:
    projector: Projector
    log: list[dict] = field(default_factory=list)


def train_projector(latents: np.ndarray, conds: np.ndarray, cfg: ProjectorConfig,
                    seed: int = 0) -> ProjectorTrainResult:
    """Fit the projector on frozen mean-mode VAE latents and paired text embeddings."""
    latents = np.asarray(latents)
    conds = np.asarray(conds)
    model = Projector(latents.shape[1], conds.shape[1], cfg, seed)
    model.train()
    params = model.named_parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([seed, 606])
    n = len(latents)
    bs = min(cfg.batch_size, n)
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        sums = {"loss": 0.0, "align": 0.0, "rec": 0.0, "var": 0.0}
        batches = 0
        for i in range(0, n - bs + 1, bs):
            idx = perm[i:i + bs]
            total, parts = projector_objective(model, latents[idx], conds[idx], cfg,
                                               dropout_rng(seed, step))
            if not np.isfinite(total.data):
                raise FloatingPointError(
                    f"projector loss non-finite at epoch {epoch}: components {parts}")
            opt.zero_grad()
            if total.requires_grad:
                total.backward()
                opt.step()
            step += 1
            batches += 1
            sums["loss"] += float(total.data)
            for k, v in parts.items():
                sums[k] += v
        history.append({"epoch": epoch + 1, **{k: v / batches for k, v in sums.items()}})
        if (epoch + 1) % 50 == 0:
            log.info("projector epoch %d %s", epoch + 1, history[-1])
    model.eval()
    return ProjectorTrainResult(model, history)


def _cos(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a * b).sum(-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))


def alignment_margin(p: Projector, latents: np.ndarray, conds: np.ndarray,
                     captions: list[str], seed: int = 0) -> tuple[float, float]:
    """Mean cosine to the paired caption embedding and to a mismatched one."""
    zp = project(p, latents)
    rng = np.random.default_rng([seed, 707])
    n = len(captions)
    mismatch = np.empty(n, dtype=int)
    for i in range(n):
        choices = [j for j in range(n) if captions[j] != captions[i]]
        mismatch[i] = choices[rng.integers(len(choices))]
    return float(_cos(zp, conds).mean()), float(_cos(zp, conds[mismatch]).mean())


def relative_reconstruction_error(p: Projector, latents: np.ndarray) -> float:
    """Mean over items of ``||realign(z) - z|| / ||z||``."""
    rec = realign(p, latents)
    return float((np.linalg.norm(rec - latents, axis=-1) / np.linalg.norm(latents, axis=-1)).mean())


def class_cluster_gap(p: Projector, latents: np.ndarray, labels: list) -> float:
    """Within-class minus across-class mean pairwise cosine of projected latents."""
    zp = project(p, latents)
    zn = zp / np.linalg.norm(zp, axis=-1, keepdims=True)
    sim = zn @ zn.T
    lab = np.asarray([str(x) for x in labels])
    same = lab[:, None] == lab[None, :]
    off = ~np.eye(len(lab), dtype=bool)
    return float(sim[same & off].mean() - sim[~same].mean())
