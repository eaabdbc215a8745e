"""Repeated generation + metric evaluation producing a MetricReport."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .metrics import (METRIC_COLUMNS, MetricSummary, diversity, fid, fit_gaussian, mm_dist,
                      multimodality, r_precision, summarize)

TABLE_HEADERS = ("FID", "R-top1", "R-top2", "R-top3", "MMdist", "Diversity", "MModality")


@dataclass
class MetricReport:
    label: str
    runs: list[dict] = field(default_factory=list)
    seconds_per_sample: float = float("nan")

    @property
    def run_count(self) -> int:
        return len(self.runs)

    def summary(self, key: str) -> MetricSummary:
        return summarize([r[key] for r in self.runs])

    def values(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.runs])

    def median(self, key: str) -> float:
        return float(np.median(self.values(key)))


def _fmt(s: MetricSummary) -> str:
    return f"{s.mean:.4f}" if s.ci95 is None else f"{s.mean:.4f}±{s.ci95:.4f}"


def reports_csv(reports: list[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["label", "runs"]
    for k in METRIC_COLUMNS:
        header += [k, f"{k}_ci95"]
    w.writerow(header)
    for rep in reports:
        row = [rep.label, rep.run_count]
        for k in METRIC_COLUMNS:
            s = rep.summary(k)
            row += [repr(s.mean), "" if s.ci95 is None else repr(s.ci95)]
        w.writerow(row)
    return buf.getvalue()


def reports_table(reports: list[MetricReport]) -> str:
    width = max([len(r.label) for r in reports] + [6])
    lines = [" ".join([f"{'Method':<{width}}"] + [f"{h:>17}" for h in TABLE_HEADERS])]
    for rep in reports:
        cells = [f"{_fmt(rep.summary(k)):>17}" for k in METRIC_COLUMNS]
        lines.append(" ".join([f"{rep.label:<{width}}"] + cells))
    if any(r.run_count < 2 for r in reports):
        lines.append("(single run: no confidence interval)")
    return "\n".join(lines) + "\n"


def _metrics(mf: np.ndarray, tf: np.ndarray, captions: list[str], real_stats, per_caption,
             cfg, seed: int) -> dict:
    top = r_precision(mf, tf, captions, cfg.rprec_pool, seed)
    p = min(cfg.diversity_p, len(mf) // 2)
    return {
        "fid": fid(real_stats, fit_gaussian(mf)),
        "top1": float(top[0]), "top2": float(top[1]), "top3": float(top[2]),
        "mm_dist": mm_dist(mf, tf, cfg.mmdist_literal),
        "diversity": diversity(mf, p, seed),
        "multimodality": multimodality(per_caption, len(per_caption), cfg.mm_d, seed)
        if per_caption else float("nan"),
    }


def _mm_captions(captions: list[str], m: int, seed: int) -> list[str]:
    uniq = sorted(set(captions))
    rng = np.random.default_rng([seed, 55])
    return [uniq[i] for i in sorted(rng.choice(len(uniq), min(m, len(uniq)), replace=False))]


def evaluate(pipe, realign_modes=(True, False), repeats: int | None = None,
             guidance: float | None = None, seed: int = 0, labels=None,
             multimodality_on: bool = True) -> list[MetricReport]:
    """One report per realign mode; the modes share every sampled latent."""
    from ..pipeline import decode_latents, sample_vae_latents

    pipe.require("vae", "diffusion", "extractor")
    if any(realign_modes):
        pipe.require("projector")
    cfg = pipe.config.eval
    repeats = cfg.repeats if repeats is None else repeats
    guidance = cfg.guidance_scale if guidance is None else guidance
    ext = pipe.extractor
    feats = pipe.features("test")
    captions = pipe.captions("test")
    lengths = np.array([len(f) for f in feats])
    tf = ext.embed_texts(pipe.text_embeddings(captions))
    real = fit_gaussian(ext.embed_motions(feats))
    mm_caps = _mm_captions(captions, cfg.mm_captions, seed) if multimodality_on else []
    mm_len = {c: int(lengths[captions.index(c)]) for c in mm_caps}
    labels = labels or ["realign" if r else "no-realign" for r in realign_modes]
    reports = [MetricReport(lbl) for lbl in labels]
    n = len(captions)
    for r in range(repeats):
        run_seed = int(np.random.default_rng([seed, r]).integers(2**31))
        seeds = run_seed + np.arange(n)
        t0 = time.perf_counter()
        z = sample_vae_latents(pipe, pipe.text_embeddings(captions), seeds, guidance)
        mm_z = None
        if mm_caps:
            k = cfg.mm_per_caption
            mm_c = [c for c in mm_caps for _ in range(k)]
            mm_z = sample_vae_latents(pipe, pipe.text_embeddings(mm_c),
                                      run_seed + n + np.arange(len(mm_c)), guidance)
        t_sample = time.perf_counter() - t0
        for rep, mode in zip(reports, realign_modes):
            t1 = time.perf_counter()
            gen = decode_latents(pipe, z, lengths, mode)
            mf = ext.embed_motions(gen)
            elapsed = t_sample + time.perf_counter() - t1
            per_caption = []
            if mm_z is not None:
                k = cfg.mm_per_caption
                mm_lengths = [mm_len[c] for c in mm_caps for _ in range(k)]
                mm_f = ext.embed_motions(decode_latents(pipe, mm_z, mm_lengths, mode))
                per_caption = [mm_f[j * k:(j + 1) * k] for j in range(len(mm_caps))]
            row = _metrics(mf, tf, captions, real, per_caption, cfg, run_seed)
            row["repeat"] = r
            rep.runs.append(row)
            rep.seconds_per_sample = elapsed / n
    return reports


def evaluate_real(pipe, seed: int = 0) -> MetricReport:
    """Self-evaluation: real test motions scored as if they were generated."""
    pipe.require("extractor")
    cfg = pipe.config.eval
    ext = pipe.extractor
    feats = pipe.features("test")
    captions = pipe.captions("test")
    tf = ext.embed_texts(pipe.text_embeddings(captions))
    mf = ext.embed_motions(feats)
    rep = MetricReport("real")
    row = _metrics(mf, tf, captions, fit_gaussian(mf), [], cfg, seed)
    row["repeat"] = 0
    rep.runs.append(row)
    return rep


def export_features(pipe, which: str = "test", generated: dict | None = None) -> str:
    """CSV of extractor features: source, caption, f0..f{F-1}."""
    pipe.require("extractor")
    ext = pipe.extractor
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "caption"] + [f"f{i}" for i in range(ext.cfg.feature_dim)])
    feats = ext.embed_motions(pipe.features(which))
    for cap, f in zip(pipe.captions(which), feats):
        w.writerow([which, cap] + [repr(float(x)) for x in f])
    for label, (caps, seqs) in (generated or {}).items():
        for cap, f in zip(caps, ext.embed_motions(seqs)):
            w.writerow([label, cap] + [repr(float(x)) for x in f])
    return buf.getvalue()
