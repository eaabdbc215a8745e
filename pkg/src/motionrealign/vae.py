"""Transformer motion VAE: variable-length feature sequence <-> single latent vector."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import VaeConfig
from .diffcore import AdamW, Linear, Module, StackConfig, TransformerStack, dropout_rng
from .diffcore import autograd as ag
from .diffcore.autograd import Tensor
from .diffcore.layers import sinusoidal_pe
from .motion import MotionFeatures, NormStats, encode_features, fit_normalizer

log = logging.getLogger(__name__)


class MotionVAE(Module):
    def __init__(self, feature_dim: int, cfg: VaeConfig, seed: int = 0):
        rng = np.random.default_rng([seed, 101])
        h = cfg.hidden_dim
        self.cfg = cfg
        self.feature_dim = feature_dim
        stack = StackConfig(cfg.layers, cfg.heads, h, cfg.ff_mult, cfg.dropout, long_skip=True)
        self.in_proj = Linear(feature_dim, h, rng)
        self.mu_token = ag.parameter(rng.standard_normal(h) * 0.02)
        self.sigma_token = ag.parameter(rng.standard_normal(h) * 0.02)
        self.encoder = TransformerStack(stack, rng)
        self.mu_head = Linear(h, cfg.latent_dim, rng)
        self.logvar_head = Linear(h, cfg.latent_dim, rng)
        self.latent_in = Linear(cfg.latent_dim, h, rng)
        self.decoder = TransformerStack(stack, rng)
        self.out_proj = Linear(h, feature_dim, rng)
        self.pe = sinusoidal_pe(cfg.max_len + 2, h)

    @property
    def latent_dim(self) -> int:
        return self.cfg.latent_dim

    def encode(self, x, mask: np.ndarray, rng=None) -> tuple[Tensor, Tensor]:
        """``x``: (B, N, D) padded normalised features, ``mask``: (B, N) valid frames."""
        x = ag.as_tensor(x)
        b, n, _ = x.shape
        if n > self.cfg.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.cfg.max_len}")
        h = self.cfg.hidden_dim
        dist = ag.concat([ag.broadcast_to(self.mu_token.reshape(1, 1, h), (b, 1, h)),
                          ag.broadcast_to(self.sigma_token.reshape(1, 1, h), (b, 1, h))], axis=1)
        tokens = ag.concat([dist, self.in_proj(x)], axis=1) + self.pe[: n + 2]
        key_mask = np.concatenate([np.ones((b, 2), dtype=bool), mask], axis=1)
        out = self.encoder(tokens, key_mask, rng)
        return self.mu_head(out[:, 0]), self.logvar_head(out[:, 1])

    def decode(self, z, mask: np.ndarray, rng=None) -> Tensor:
        """Latents (B, M) -> (B, N, D); ``mask`` fixes each output length."""
        z = ag.as_tensor(z)
        b, n = mask.shape
        if n > self.cfg.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.cfg.max_len}")
        h = self.cfg.hidden_dim
        lat = self.latent_in(z).reshape(b, 1, h)
        queries = Tensor(np.zeros((b, n, h)))
        tokens = ag.concat([lat, queries], axis=1) + self.pe[: n + 1]
        key_mask = np.concatenate([np.ones((b, 1), dtype=bool), mask], axis=1)
        out = self.decoder(tokens, key_mask, rng)
        return self.out_proj(out[:, 1:])


def pad_batch(seqs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    n = max(s.shape[0] for s in seqs)
    d = seqs[0].shape[1]
    x = np.zeros((len(seqs), n, d))
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        x[i, : len(s)] = s
        mask[i, : len(s)] = True
    return x, mask


def length_mask(lengths) -> np.ndarray:
    lengths = np.asarray(lengths)
    return np.arange(lengths.max())[None, :] < lengths[:, None]


def reparameterize(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
    return mu + ag.exp(logvar * 0.5) * eps


def vae_loss(x, x_hat: Tensor, mu: Tensor, logvar: Tensor, kl_weight: float,
             mask: np.ndarray | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """``(total, mse, kl)``: masked feature MSE plus closed-form KL to N(0, I), batch-averaged."""
    x = ag.as_tensor(x)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    diff = x_hat - x
    if mask is None:
        mse = (diff * diff).mean()
    else:
        w = mask[..., None].astype(np.float64)
        mse = (diff * diff * w).sum() * (1.0 / (w.sum() * x.shape[-1]))
    kl_per = (mu * mu + ag.exp(logvar) - logvar - 1.0).sum(axis=-1) * 0.5
    kl = kl_per.mean()
    return mse + kl * kl_weight, mse, kl


def vae_encode(model: MotionVAE, features: np.ndarray, mode: str = "mean",
               seed: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Encode one normalised (N, D) feature matrix; returns ``(mu, logvar, z)``."""
    data = features.data if isinstance(features, MotionFeatures) else np.asarray(features)
    if np.abs(data.mean()) > 10:
        warnings.warn("vae_encode input looks unnormalised (|mean| > 10)", RuntimeWarning)
    mu, logvar = model.encode(data[None], np.ones((1, len(data)), dtype=bool))
    mu, logvar = mu.data[0], logvar.data[0]
    if mode == "mean":
        return mu, logvar, mu.copy()
    if mode != "sample":
        raise ValueError(f"unknown encode mode {mode!r}")
    eps = np.random.default_rng(seed).standard_normal(mu.shape)
    return mu, logvar, mu + np.exp(0.5 * logvar) * eps


def vae_decode(model: MotionVAE, z: np.ndarray, length: int) -> np.ndarray:
    if not model.cfg.min_len <= length <= model.cfg.max_len:
        raise ValueError(f"length {length} outside [{model.cfg.min_len}, {model.cfg.max_len}]")
    out = model.decode(np.asarray(z)[None], np.ones((1, length), dtype=bool))
    return out.data[0]


def encode_means(model: MotionVAE, seqs: list[np.ndarray], batch_size: int = 64) -> np.ndarray:
    """Mean latents for many normalised sequences, batched by similar length."""
    order = np.argsort([len(s) for s in seqs], kind="stable")
    out = np.zeros((len(seqs), model.latent_dim))
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        x, mask = pad_batch([seqs[j] for j in idx])
        mu, _ = model.encode(x, mask)
        out[idx] = mu.data
    return out


def decode_many(model: MotionVAE, z: np.ndarray, lengths, batch_size: int = 64) -> list[np.ndarray]:
    lengths = np.asarray(lengths)
    order = np.argsort(lengths, kind="stable")
    out: list[np.ndarray | None] = [None] * len(lengths)
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        mask = length_mask(lengths[idx])
        x = model.decode(z[idx], mask).data
        for k, j in enumerate(idx):
            out[j] = x[k, : lengths[j]]
    return out


def featurize(motions, skeleton) -> list[MotionFeatures]:
    return [encode_features(m, skeleton) for m in motions]


def length_batches(lengths, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle, then group into batches of similar length to limit padding."""
    lengths = np.asarray(lengths)
    perm = rng.permutation(len(lengths))
    chunk = batch_size * 8
    batches = []
    for i in range(0, len(perm), chunk):
        block = perm[i:i + chunk]
        block = block[np.argsort(lengths[block], kind="stable")]
        batches += [block[j:j + batch_size] for j in range(0, len(block), batch_size)]
    order = rng.permutation(len(batches))
    return [batches[k] for k in order]


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: dict | None):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class VaeTrainResult:
    model: MotionVAE
    norm: NormStats
    log: list[dict] = field(default_factory=list)


def train_vae(train_features: list[MotionFeatures], cfg: VaeConfig, seed: int = 0,
              norm: NormStats | None = None) -> VaeTrainResult:
    if not train_features:
        raise ValueError("VAE training needs a non-empty train split")
    norm = norm or fit_normalizer(train_features)
    seqs = [norm.apply(f.data) for f in train_features]
    model = MotionVAE(train_features[0].data.shape[1], cfg, seed)
    model.train()
    opt = AdamW(model.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([seed, 202])
    lengths = [len(s) for s in seqs]
    history = []
    last_good = model.state_dict()
    step = 0
    for epoch in range(cfg.epochs):
        tot = {"loss": 0.0, "mse": 0.0, "kl": 0.0}
        n_batches = 0
        for idx in length_batches(lengths, cfg.batch_size, rng):
            x, mask = pad_batch([seqs[i] for i in idx])
            drop = dropout_rng(seed, step)
            mu, logvar = model.encode(x, mask, drop)
            z = reparameterize(mu, logvar, rng.standard_normal(mu.shape))
            x_hat = model.decode(z, mask, drop)
            total, mse, kl = vae_loss(x, x_hat, mu, logvar, cfg.kl_weight, mask)
            if not np.isfinite(total.data):
                model.load_state_dict(last_good)
                raise TrainingDiverged(f"VAE loss became non-finite at epoch {epoch}", last_good)
            opt.zero_grad()
            total.backward()
            opt.step()
            step += 1
            n_batches += 1
            tot["loss"] += float(total.data)
            tot["mse"] += float(mse.data)
            tot["kl"] += float(kl.data)
        last_good = model.state_dict()
        row = {"epoch": epoch + 1, **{k: v / n_batches for k, v in tot.items()}}
        history.append(row)
        log.info("vae epoch %d mse %.5f kl %.3f", row["epoch"], row["mse"], row["kl"])
    model.eval()
    return VaeTrainResult(model, norm, history)


def reconstruction_mse(model: MotionVAE, seqs: list[np.ndarray]) -> float:
    z = encode_means(model, seqs)
    rec = decode_many(model, z, [len(s) for s in seqs])
    num = sum(float(((r - s) ** 2).sum()) for r, s in zip(rec, seqs))
    den = sum(s.size for s in seqs)
    return num / den
