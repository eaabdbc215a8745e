"""Contrastive text-motion feature extractor used by every metric.

Motion side: non-overlapping 4-frame patches -> CLS-token transformer -> F.
Text side: a linear map of the frozen text embedding -> F. Both outputs are
unit-normalised so paired features can be compared with Euclidean distance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..config import ExtractorConfig
from ..diffcore import AdamW, Linear, Module, StackConfig, TransformerStack
from ..diffcore import autograd as ag
from ..diffcore.autograd import Tensor
from ..diffcore.layers import sinusoidal_pe
from ..motion import NormStats, fit_normalizer

log = logging.getLogger(__name__)

MAX_FRAMES = 512


class FeatureExtractor(Module):
    def __init__(self, motion_dim: int, text_dim: int, cfg: ExtractorConfig, seed: int = 0):
        rng = np.random.default_rng([seed, 808])
        h = cfg.hidden_dim
        self.cfg = cfg
        self.motion_dim = motion_dim
        self.patch_in = Linear(motion_dim * cfg.patch, h, rng)
        self.cls = ag.parameter(rng.standard_normal(h) * 0.02)
        self.stack = TransformerStack(StackConfig(cfg.layers, cfg.heads, h, 2, 0.0), rng)
        self.motion_out = Linear(h, cfg.feature_dim, rng)
        self.text_out = Linear(text_dim, cfg.feature_dim, rng)
        self.pe = sinusoidal_pe(MAX_FRAMES // cfg.patch + 1, h)
        # normalisation statistics are fitted on the train split, not learned
        self.norm: NormStats | None = None

    def _patches(self, seqs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        p = self.cfg.patch
        n_tok = max(-(-len(s) // p) for s in seqs)
        x = np.zeros((len(seqs), n_tok * p, self.motion_dim))
        frame_ok = np.zeros((len(seqs), n_tok * p), dtype=bool)
        for i, s in enumerate(seqs):
            x[i, : len(s)] = s
            frame_ok[i, : len(s)] = True
        return x.reshape(len(seqs), n_tok, p * self.motion_dim), frame_ok.reshape(len(seqs), n_tok, p).any(-1)

    def motion_features(self, seqs: list[np.ndarray], normalised: bool = False) -> Tensor:
        """Unit-norm features for raw (N, D) feature matrices."""
        if not normalised:
            if self.norm is None:
                raise RuntimeError("extractor has no normalisation statistics")
            seqs = [self.norm.apply(np.asarray(s)) for s in seqs]
        patches, tok_mask = self._patches(seqs)
        b, n, _ = patches.shape
        h = self.cfg.hidden_dim
        cls = ag.broadcast_to(self.cls.reshape(1, 1, h), (b, 1, h))
        tokens = ag.concat([cls, self.patch_in(patches)], axis=1) + self.pe[: n + 1]
        mask = np.concatenate([np.ones((b, 1), dtype=bool), tok_mask], axis=1)
        out = self.stack(tokens, mask)
        return ag.l2_normalize(self.motion_out(out[:, 0]), eps=1e-12)

    def text_features(self, text_emb) -> Tensor:
        return ag.l2_normalize(self.text_out(ag.as_tensor(np.atleast_2d(text_emb))), eps=1e-12)

    def embed_motions(self, seqs: list[np.ndarray], batch_size: int = 64) -> np.ndarray:
        order = np.argsort([len(s) for s in seqs], kind="stable")
        out = np.zeros((len(seqs), self.cfg.feature_dim))
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            out[idx] = self.motion_features([seqs[j] for j in idx]).data
        return out

    def embed_texts(self, text_emb: np.ndarray) -> np.ndarray:
        return self.text_features(text_emb).data


def contrastive_loss(motion_f: Tensor, text_f: Tensor, temperature: float) -> Tensor:
    """Symmetric in-batch cross-entropy over cosine logits."""
    logits = (motion_f @ text_f.transpose(1, 0)) * (1.0 / temperature)
    b = logits.shape[0]
    diag = (np.arange(b), np.arange(b))
    l_mt = -ag.log_softmax(logits, axis=1)[diag].mean()
    l_tm = -ag.log_softmax(logits, axis=0)[diag].mean()
    return (l_mt + l_tm) * 0.5


@dataclass
class ExtractorTrainResult:
    extractor: FeatureExtractor
    log: list[dict] = field(default_factory=list)


def train_extractor(features: list[np.ndarray], text_emb: np.ndarray, cfg: ExtractorConfig,
                    seed: int = 0, captions: list[str] | None = None) -> ExtractorTrainResult:
    """Fit on paired (raw feature matrix, caption embedding) training pairs.

    When ``captions`` is given, batches avoid duplicate captions so that no
    in-batch negative is an exact positive.
    """
    from ..motion import MotionFeatures

    norm = fit_normalizer([MotionFeatures(np.asarray(f), (np.asarray(f).shape[1] - 8) // 12)
                           for f in features])
    seqs = [norm.apply(np.asarray(f)) for f in features]
    model = FeatureExtractor(seqs[0].shape[1], text_emb.shape[1], cfg, seed)
    model.norm = norm
    opt = AdamW(model.named_parameters(), lr=cfg.lr)
    rng = np.random.default_rng([seed, 909])
    n = len(seqs)
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for i in range(0, n - 1, cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            if captions is not None:
                seen, keep = set(), []
                for j in idx:
                    if captions[j] not in seen:
                        seen.add(captions[j])
                        keep.append(j)
                idx = np.asarray(keep)
            if len(idx) < 2:
                continue
            loss = contrastive_loss(model.motion_features([seqs[j] for j in idx], normalised=True),
                                    model.text_features(text_emb[idx]), cfg.temperature)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"extractor loss non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        history.append({"epoch": epoch + 1, "loss": total / max(count, 1)})
    log.info("extractor final loss %.4f", history[-1]["loss"] if history else float("nan"))
    return ExtractorTrainResult(model, history)


def paired_margin(model: FeatureExtractor, features: list[np.ndarray], text_emb: np.ndarray,
                  captions: list[str], seed: int = 0) -> tuple[float, float]:
    """Mean paired cosine and mean cosine to a random different caption."""
    mf = model.embed_motions(features)
    tf = model.embed_texts(text_emb)
    rng = np.random.default_rng([seed, 111])
    n = len(captions)
    other = np.array([rng.choice([j for j in range(n) if captions[j] != captions[i]])
                      for i in range(n)])
    return float((mf * tf).sum(-1).mean()), float((mf * tf[other]).sum(-1).mean())
