"""Motion textual inversion: learn one placeholder-word embedding from an exemplar.

Only ``v*`` receives gradients; the VAE, denoiser, projector and text table
are frozen for the whole run. Three loss spaces are available:

* ``lead``: squared distance between projector codes of the clean-sample
  estimates built from the true and the predicted noise
* ``mld``: squared noise-prediction error in VAE latent space
* ``feat``: squared error between VAE-decoded clean-sample estimates
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import InversionConfig
from .corpus import SUBJECTS
from .diffcore import AdamW, frozen
from .diffcore import autograd as ag
from .diffcore.autograd import Tensor
from .diffusion import q_sample, recover_x0
from .textenc import PLACEHOLDER, UNK, Vocabulary, embed_tokens
from .vae import encode_means, length_mask

log = logging.getLogger(__name__)

TEMPLATES = tuple(f"{s} {PLACEHOLDER}." for s in SUBJECTS)
TARGET_TOL = 1e-8
# the mld and feat variants run on the stack without the projector at generation
GENERATION_REALIGN = {"lead": True, "mld": False, "feat": False}


@dataclass
class PlaceholderToken:
    word: str
    embedding: np.ndarray
    init_word: str

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({"word": self.word, "init_word": self.init_word,
                                          "embedding": [float(x) for x in self.embedding]},
                                         indent=1))

    @classmethod
    def load(cls, path) -> "PlaceholderToken":
        d = json.loads(Path(path).read_text())
        return cls(d["word"], np.asarray(d["embedding"], dtype=np.float64), d["init_word"])


def init_placeholder(init_word: str, vocab: Vocabulary, slot: int = 0) -> PlaceholderToken:
    row = vocab.index.get(init_word.lower(), vocab.index[UNK])
    return PlaceholderToken(vocab.placeholder_word(slot), vocab.table[row].copy(), init_word)


def _condition(vocab: Vocabulary, template_ids, v: Tensor) -> Tensor:
    rows = [embed_tokens(vocab.tokenize(TEMPLATES[k]), vocab, v) for k in template_ids]
    return ag.stack(rows, axis=0)


def mti_loss(pipe, z0: np.ndarray, t: np.ndarray, eps: np.ndarray, template_ids, v,
             loss_space: str = "lead", lengths=None, verify_target: bool = True) -> Tensor:
    """Batch-mean inversion loss for VAE latents ``z0`` (unscaled).

    ``pipe`` supplies the frozen modules; the denoiser works on latents scaled
    by ``pipe.latent_scale``.
    """
    v = ag.as_tensor(v)
    sched = pipe.schedule
    scale = pipe.latent_scale
    zs = np.asarray(z0) * scale
    z_t = q_sample(zs, t, eps, sched)
    cond = _condition(pipe.vocab, template_ids, v)
    eps_hat = pipe.denoiser(z_t, t, cond)
    b = zs.shape[0]
    if loss_space == "mld":
        d = eps_hat - eps
        return (d * d).sum() * (1.0 / b)
    # identical op order in both branches, so a perfect denoiser gives exactly zero
    pred = recover_x0(z_t, eps_hat, t, sched) * (1.0 / scale)
    target = recover_x0(z_t, eps, t, sched) * (1.0 / scale)
    if verify_target:
        err = np.max(np.abs(target - np.asarray(z0)))
        if err > TARGET_TOL * max(1.0, np.max(np.abs(z0))):
            raise AssertionError(f"clean-sample recovery identity violated by {err:.3g}")
    if loss_space == "lead":
        d = pipe.projector.encode(pred) - pipe.projector.encode(target)
        return (d * d).sum() * (1.0 / b)
    if loss_space == "feat":
        if lengths is None:
            raise ValueError("feat loss needs the crop lengths")
        mask = length_mask(lengths)
        w = mask[..., None].astype(np.float64)
        d = pipe.vae.decode(pred, mask) - pipe.vae.decode(target, mask).data
        return (d * d * w).sum() * (1.0 / w.sum())
    raise ValueError(f"unknown loss space {loss_space!r}")


def _crops(x: np.ndarray, n: int, lo: int, hi: int, rng: np.random.Generator) -> list[np.ndarray]:
    out = []
    for _ in range(n):
        length = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, len(x) - length + 1))
        out.append(x[start:start + length])
    return out


@dataclass
class _Batch:
    z0: np.ndarray
    lengths: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    templates: np.ndarray


def _draw(pipe, seqs: list[np.ndarray], cfg: InversionConfig, lo: int, hi: int,
          rng: np.random.Generator) -> _Batch:
    src = seqs[int(rng.integers(len(seqs)))]
    crops = _crops(src, cfg.batch, lo, hi, rng)
    z0 = encode_means(pipe.vae, crops)
    t = rng.integers(1, pipe.schedule.T + 1, size=cfg.batch)
    eps = rng.standard_normal(z0.shape)
    tmpl = rng.integers(len(TEMPLATES), size=cfg.batch)
    return _Batch(z0, np.array([len(c) for c in crops]), t, eps, tmpl)


@dataclass
class InversionResult:
    token: PlaceholderToken
    losses: list[float] = field(default_factory=list)
    probe_before: float = float("nan")
    probe_after: float = float("nan")


def invert_motion(pipe, exemplars: list[np.ndarray], cfg: InversionConfig,
                  seed: int = 0) -> InversionResult:
    """Optimise ``v*`` on random crops of raw exemplar feature matrices.

    ``probe_before`` / ``probe_after`` evaluate the loss on one fixed batch so
    progress is comparable despite the per-step sampling noise.
    """
    pipe.require("vae", "diffusion")
    if cfg.loss_space == "lead":
        pipe.require("projector")
    if not exemplars:
        raise ValueError("inversion needs at least one exemplar")
    vcfg = pipe.vae.cfg
    lo = max(cfg.crop_min, vcfg.min_len)
    seqs = [pipe.norm.apply(np.asarray(e)) for e in exemplars]
    if any(len(s) < lo for s in seqs):
        raise ValueError(f"exemplar shorter than the minimum crop length {lo}")
    hi = min(vcfg.max_len, min(len(s) for s in seqs))
    token = init_placeholder(cfg.init_word, pipe.vocab)
    v = ag.parameter(token.embedding)
    opt = AdamW({"v": v}, lr=cfg.lr, weight_decay=0.0)
    rng = np.random.default_rng([seed, 1234])
    probe = _draw(pipe, seqs, cfg, lo, hi, np.random.default_rng([seed, 4321]))

    def loss_on(b: _Batch) -> Tensor:
        return mti_loss(pipe, b.z0, b.t, b.eps, b.templates, v, cfg.loss_space, b.lengths)

    modules = [m for m in (pipe.vae, pipe.denoiser, pipe.projector) if m is not None]
    losses = []
    with frozen(*modules):
        before = float(loss_on(probe).data)
        for step in range(cfg.steps):
            loss = loss_on(_draw(pipe, seqs, cfg, lo, hi, rng))
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"inversion loss non-finite at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        after = float(loss_on(probe).data)
    token.embedding = v.data.copy()
    return InversionResult(token, losses, before, after)


def generate_with_token(pipe, token: PlaceholderToken, template_id: int, length: int,
                        guidance: float | None = None, seed: int = 0,
                        apply_realign: bool = True) -> np.ndarray:
    """Raw feature matrix generated from ``TEMPLATES[template_id]`` with ``v*`` substituted."""
    from .pipeline import decode_latents, sample_vae_latents

    tokens = pipe.vocab.tokenize(TEMPLATES[template_id])
    c = embed_tokens(tokens, pipe.vocab, token.embedding).data[None]
    z = sample_vae_latents(pipe, c, [seed], guidance)
    return decode_latents(pipe, z, [length], apply_realign)[0]


def style_distances(pipe, token: PlaceholderToken, exemplar: np.ndarray, seeds,
                    apply_realign: bool = True, guidance: float | None = None,
                    reference: np.ndarray | None = None) -> np.ndarray:
    """Extractor-feature L2 distance from token generations to ``exemplar``, one per seed.

    Generation ``k`` uses template ``seeds[k] % len(TEMPLATES)`` and the
    exemplar's length (capped at the VAE maximum). With ``reference`` given,
    a second row holds the distances to that motion.
    """
    pipe.require("extractor")
    length = min(len(exemplar), pipe.vae.cfg.max_len)
    gens = [generate_with_token(pipe, token, int(s) % len(TEMPLATES), length, guidance, int(s),
                                apply_realign) for s in seeds]
    feats = pipe.extractor.embed_motions(gens)
    targets = [exemplar] + ([reference] if reference is not None else [])
    ref = pipe.extractor.embed_motions([np.asarray(t) for t in targets])
    d = np.linalg.norm(feats[None] - ref[:, None], axis=-1)
    return d if reference is not None else d[0]

