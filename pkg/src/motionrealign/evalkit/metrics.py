"""Generation metrics over extractor features: FID, R-precision, MMdist,
diversity and multimodality, plus mean / 95% CI aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray


def fit_gaussian(features: np.ndarray) -> GaussianStats:
    """Mean and unbiased covariance; needs at least ``F + 1`` samples."""
    features = np.asarray(features, dtype=np.float64)
    n, f = features.shape
    if n < f + 1:
        raise ValueError(f"need >= {f + 1} samples for a {f}-dim covariance, got {n}")
    return GaussianStats(features.mean(axis=0), np.cov(features, rowvar=False, ddof=1))


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """Tr((A B)^{1/2}) computed as Tr((A^{1/2} B A^{1/2})^{1/2})."""
    root_a = _sym_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def fid(real: GaussianStats, gen: GaussianStats) -> float:
    mu_r, mu_g = np.atleast_1d(real.mean), np.atleast_1d(gen.mean)
    cov_r, cov_g = np.atleast_2d(real.cov), np.atleast_2d(gen.cov)
    if mu_r.shape != mu_g.shape or cov_r.shape != cov_g.shape:
        raise ValueError("feature dimensions of the two Gaussians differ")
    for arr in (mu_r, mu_g, cov_r, cov_g):
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite Gaussian statistics")
    diff = mu_r - mu_g
    val = diff @ diff + np.trace(cov_r) + np.trace(cov_g) - 2.0 * trace_sqrt_product(cov_r, cov_g)
    return max(float(val), 0.0)


def r_precision(motion_feats: np.ndarray, text_feats: np.ndarray, captions: list[str],
                pool: int = 32, seed: int = 0, top_k: int = 3) -> np.ndarray:
    """Top-1..k retrieval rates of the true caption among ``pool - 1`` mismatched ones.

    Distances are Euclidean; mismatched captions are distinct caption strings.
    """
    motion_feats = np.asarray(motion_feats)
    text_feats = np.asarray(text_feats)
    uniq: dict[str, int] = {}
    for i, c in enumerate(captions):
        uniq.setdefault(c, i)
    if len(uniq) < pool:
        raise ValueError(f"R-precision needs >= {pool} distinct captions, got {len(uniq)}")
    names = list(uniq)
    uniq_feats = text_feats[[uniq[c] for c in names]]
    pos = {c: k for k, c in enumerate(names)}
    rng = np.random.default_rng(seed)
    hits = np.zeros(top_k)
    for i, cap in enumerate(captions):
        k = pos[cap]
        others = rng.choice(len(names) - 1, pool - 1, replace=False)
        others = others + (others >= k)  # skip the true caption
        cands = np.concatenate([[k], others])
        dist = np.linalg.norm(uniq_feats[cands] - motion_feats[i], axis=-1)
        # rank of the true text = number of candidates strictly closer
        rank = int(np.sum(dist[1:] < dist[0]))
        hits += rank < np.arange(1, top_k + 1)
    return hits / len(captions)


def mm_dist(motion_feats: np.ndarray, text_feats: np.ndarray, literal: bool = False) -> float:
    """Mean paired Euclidean distance; ``literal`` gives ``sqrt(sum d) / N`` instead."""
    motion_feats = np.asarray(motion_feats)
    text_feats = np.asarray(text_feats)
    if motion_feats.shape != text_feats.shape:
        raise ValueError("motion and text feature sets must be paired")
    d = np.linalg.norm(motion_feats - text_feats, axis=-1)
    if literal:
        return float(np.sqrt(d.sum()) / len(d))
    return float(d.mean())


def diversity(features: np.ndarray, p: int, seed: int = 0) -> float:
    """Mean distance between two disjoint random subsets of size ``p``."""
    features = np.asarray(features)
    if len(features) < 2 * p:
        raise ValueError(f"diversity needs >= {2 * p} features, got {len(features)}")
    idx = np.random.default_rng(seed).permutation(len(features))
    a, b = features[idx[:p]], features[idx[p:2 * p]]
    return float(np.linalg.norm(a - b, axis=-1).mean())


def multimodality(per_caption: list[np.ndarray], m: int, d: int, seed: int = 0) -> float:
    """Within-caption diversity averaged over ``m`` sampled captions."""
    if len(per_caption) < m:
        raise ValueError(f"need >= {m} captions, got {len(per_caption)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(per_caption), m, replace=False)
    total = 0.0
    for j in chosen:
        feats = np.asarray(per_caption[j])
        if len(feats) < 2 * d:
            raise ValueError(f"caption {j} has {len(feats)} generations, need >= {2 * d}")
        idx = rng.permutation(len(feats))
        total += np.linalg.norm(feats[idx[:d]] - feats[idx[d:2 * d]], axis=-1).sum()
    return float(total / (m * d))


def chi_mean(k: int, scale: float = 1.0) -> float:
    """Mean norm of a ``k``-dim isotropic Gaussian with per-axis std ``scale``."""
    from scipy.special import gammaln

    return float(scale * np.sqrt(2.0) * np.exp(gammaln((k + 1) / 2) - gammaln(k / 2)))


METRIC_COLUMNS = ("fid", "top1", "top2", "top3", "mm_dist", "diversity", "multimodality")


@dataclass
class MetricSummary:
    mean: float
    ci95: float | None


def summarize(values) -> MetricSummary:
    """Mean and normal-approximation 95% half-width; ``ci95`` is None for one run."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return MetricSummary(float(v.mean()), None)
    return MetricSummary(float(v.mean()), float(1.96 * v.std(ddof=1) / np.sqrt(len(v))))
