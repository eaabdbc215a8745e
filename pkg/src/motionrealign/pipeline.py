"""Staged training and inference over one shared checkpoint.

Stages run in order vae -> diffusion -> projector; the extractor only needs
the corpus. After a stage is trained its parameters are rounded to float32,
so a pipeline held in memory behaves exactly like one reloaded from disk.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig, config_dict, config_from_dict
from .corpus import Corpus, generate_corpus
from .diffcore import Module
from .diffusion import Denoiser, NoiseSchedule, sample_latents, schedule_from_config, train_diffusion
from .evalkit.extractor import FeatureExtractor, train_extractor
from .motion import NormStats, Skeleton, default_skeleton, encode_features
from .projector import Projector, realign, train_projector
from .textenc import Vocabulary, all_captions_vocabulary, embed_batch
from .vae import MotionVAE, decode_many, encode_means, train_vae

log = logging.getLogger(__name__)

STAGES = ("vae", "diffusion", "projector", "extractor")
PREREQUISITES = {"vae": (), "diffusion": ("vae",), "projector": ("vae", "diffusion"),
                 "extractor": ()}


class MissingStageError(RuntimeError):
    pass


class FrozenWeightsChanged(RuntimeError):
    pass


def _quantize(module: Module) -> None:
    for p in module.named_parameters().values():
        p.data = ckpt.to_float32(p.data)


@dataclass
class Pipeline:
    config: RunConfig
    corpus: Corpus
    vocab: Vocabulary
    skeleton: Skeleton = field(default_factory=default_skeleton)
    vae: MotionVAE | None = None
    norm: NormStats | None = None
    latent_scale: float = 1.0
    denoiser: Denoiser | None = None
    projector: Projector | None = None
    extractor: FeatureExtractor | None = None
    logs: dict = field(default_factory=dict)
    _features: dict = field(default_factory=dict, repr=False)

    @property
    def schedule(self) -> NoiseSchedule:
        return schedule_from_config(self.config.diffusion)

    def has(self, stage: str) -> bool:
        return getattr(self, stage if stage != "diffusion" else "denoiser") is not None

    def require(self, *stages: str) -> None:
        for s in stages:
            if not self.has(s):
                raise MissingStageError(f"stage {s!r} has not been trained")

    def features(self, which: str) -> list[np.ndarray]:
        """Raw (unnormalised) feature matrices of a split, cached."""
        if which not in self._features:
            items = self.corpus.split_items(which)
            self._features[which] = [encode_features(it.motion, self.skeleton).data for it in items]
        return self._features[which]

    def captions(self, which: str) -> list[str]:
        return [it.caption for it in self.corpus.split_items(which)]

    def text_embeddings(self, captions: list[str]) -> np.ndarray:
        return embed_batch(captions, self.vocab)

    def latents(self, which: str) -> np.ndarray:
        """VAE mean-mode latents (unscaled) of a split."""
        self.require("vae")
        return encode_means(self.vae, [self.norm.apply(f) for f in self.features(which)])

    def digests(self) -> dict[str, str]:
        out = {"text": self.vocab.frozen_digest()}
        for name in ("vae", "denoiser", "projector", "extractor"):
            m = getattr(self, name)
            if m is not None:
                out[name] = m.digest()
        return out


def new_pipeline(config: RunConfig) -> Pipeline:
    corpus = generate_corpus(config.corpus, config.corpus_seed)
    vocab = all_captions_vocabulary(config.text_dim, config.seed)
    vocab.table = ckpt.to_float32(vocab.table)
    return Pipeline(config, corpus, vocab)


def train_stage(pipe: Pipeline, stage: str) -> None:
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; choose from {STAGES}")
    for pre in PREREQUISITES[stage]:
        if not pipe.has(pre):
            raise MissingStageError(f"cannot train {stage}: missing prerequisite stage {pre!r}")
    cfg = pipe.config
    before = pipe.digests()
    if stage == "vae":
        from .motion import MotionFeatures

        feats = [MotionFeatures(f, pipe.skeleton.n_joints) for f in pipe.features("train")]
        res = train_vae(feats, cfg.vae, cfg.seed)
        _quantize(res.model)
        pipe.vae = res.model
        pipe.norm = NormStats(ckpt.to_float32(res.norm.mean), ckpt.to_float32(res.norm.std),
                              res.norm.floor)
        z = pipe.latents("train")
        pipe.latent_scale = float(ckpt.to_float32(1.0 / z.std()))
        pipe.logs["vae"] = res.log
        # downstream stages are invalid once the VAE changes
        pipe.denoiser = pipe.projector = None
    elif stage == "diffusion":
        z = pipe.latents("train") * pipe.latent_scale
        c = pipe.text_embeddings(pipe.captions("train"))
        res = train_diffusion(z, c, cfg.diffusion, cfg.seed)
        _quantize(res.denoiser)
        pipe.denoiser = res.denoiser
        pipe.logs["diffusion"] = res.log
        pipe.projector = None
    elif stage == "projector":
        z = pipe.latents("train")
        c = pipe.text_embeddings(pipe.captions("train"))
        res = train_projector(z, c, cfg.projector, cfg.seed)
        _quantize(res.projector)
        pipe.projector = res.projector
        pipe.logs["projector"] = res.log
    else:
        caps = pipe.captions("train")
        res = train_extractor(pipe.features("train"), pipe.text_embeddings(caps), cfg.extractor,
                              cfg.seed, captions=caps)
        _quantize(res.extractor)
        res.extractor.norm = NormStats(ckpt.to_float32(res.extractor.norm.mean),
                                       ckpt.to_float32(res.extractor.norm.std))
        pipe.extractor = res.extractor
        pipe.logs["extractor"] = res.log
    after = pipe.digests()
    # every upstream component must be untouched by the stage just trained
    for name in PREREQUISITES[stage]:
        key = "denoiser" if name == "diffusion" else name
        if before.get(key) != after.get(key):
            raise FrozenWeightsChanged(f"{key} weights changed while training {stage}")
    if before["text"] != after["text"]:
        raise FrozenWeightsChanged(f"text encoder changed while training {stage}")
    pipe.logs.setdefault("frozen_digests", {})[stage] = {
        k: after[k] for k in after if k in ("text",) + tuple(
            "denoiser" if p == "diffusion" else p for p in PREREQUISITES[stage])}


def train_all(config: RunConfig, stages=STAGES) -> Pipeline:
    pipe = new_pipeline(config)
    for s in stages:
        train_stage(pipe, s)
    return pipe


# inference

def sample_vae_latents(pipe: Pipeline, conds: np.ndarray, seeds, guidance: float | None = None,
                       sampler: str | None = None) -> np.ndarray:
    """One latent per condition row; row ``i`` starts from noise seeded by ``seeds[i]``."""
    pipe.require("vae", "diffusion")
    cfg = pipe.config.diffusion
    m = pipe.vae.latent_dim
    z_T = np.stack([np.random.default_rng(int(s)).standard_normal(m) for s in seeds])
    s = cfg.guidance_scale if guidance is None else guidance
    z = sample_latents(pipe.denoiser, conds, s, pipe.schedule, 0, sampler or cfg.sampler, z_T)
    return z / pipe.latent_scale


def decode_latents(pipe: Pipeline, z_vae: np.ndarray, lengths, apply_realign: bool) -> list[np.ndarray]:
    """Optionally realign, then VAE-decode and denormalise to raw features."""
    if apply_realign:
        pipe.require("projector")
        z_vae = realign(pipe.projector, z_vae)
    out = decode_many(pipe.vae, np.atleast_2d(z_vae), lengths)
    return [pipe.norm.invert(x) for x in out]


def generate(pipe: Pipeline, captions: list[str], lengths, seeds, apply_realign: bool = True,
             guidance: float | None = None) -> list[np.ndarray]:
    z = sample_vae_latents(pipe, pipe.text_embeddings(captions), seeds, guidance)
    return decode_latents(pipe, z, lengths, apply_realign)


# persistence

_MODULES = {"vae": "vae", "diffusion": "denoiser", "projector": "projector",
            "extractor": "extractor"}


def pipeline_blocks(pipe: Pipeline) -> tuple[dict[str, np.ndarray], dict]:
    blocks = {"text/table": pipe.vocab.table}
    stages = {}
    for stage, attr in _MODULES.items():
        m = getattr(pipe, attr)
        stages[stage] = m is not None
        if m is None:
            continue
        for k, v in m.state_dict().items():
            blocks[f"{stage}/{k}"] = v
    if pipe.vae is not None:
        blocks["vae.norm/mean"] = pipe.norm.mean
        blocks["vae.norm/std"] = pipe.norm.std
        blocks["vae.latent_scale"] = np.array([pipe.latent_scale])
    if pipe.extractor is not None:
        blocks["extractor.norm/mean"] = pipe.extractor.norm.mean
        blocks["extractor.norm/std"] = pipe.extractor.norm.std
    meta = {"format": "motionrealign-pipeline", "stages": stages,
            "config": config_dict(pipe.config), "corpus_seed": pipe.config.corpus_seed,
            "vocab_words": pipe.vocab.words, "n_placeholders": pipe.vocab.n_placeholders,
            "logs": pipe.logs}
    return blocks, meta


def save_pipeline(pipe: Pipeline, path) -> str:
    blocks, meta = pipeline_blocks(pipe)
    return ckpt.write_checkpoint(path, blocks, meta)


def _sub(blocks: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in blocks.items() if k.startswith(prefix + "/")}


def load_pipeline(path, require: tuple[str, ...] = ()) -> Pipeline:
    blocks, meta = ckpt.read_checkpoint(path)
    config = config_from_dict(meta["config"])
    corpus = generate_corpus(config.corpus, config.corpus_seed)
    vocab = Vocabulary(list(meta["vocab_words"]), blocks["text/table"], meta["n_placeholders"])
    pipe = Pipeline(config, corpus, vocab, logs=meta["logs"])
    stages = meta["stages"]
    for i, stage in enumerate(("vae", "diffusion", "projector")):
        if stages.get(stage):
            missing = [p for p in PREREQUISITES[stage] if not stages.get(p)]
            if missing:
                raise ckpt.CheckpointError(f"stage {stage!r} present without {missing}")
    d = pipe.skeleton.feature_dim
    if stages.get("vae"):
        pipe.vae = MotionVAE(d, config.vae, config.seed)
        pipe.vae.load_state_dict(_sub(blocks, "vae"))
        pipe.vae.eval()
        pipe.norm = NormStats(blocks["vae.norm/mean"], blocks["vae.norm/std"])
        pipe.latent_scale = float(blocks["vae.latent_scale"][0])
    if stages.get("diffusion"):
        pipe.denoiser = Denoiser(config.vae.latent_dim, config.text_dim, config.diffusion, config.seed)
        pipe.denoiser.load_state_dict(_sub(blocks, "diffusion"))
        pipe.denoiser.eval()
    if stages.get("projector"):
        pipe.projector = Projector(config.vae.latent_dim, config.text_dim, config.projector,
                                   config.seed)
        pipe.projector.load_state_dict(_sub(blocks, "projector"))
        pipe.projector.eval()
    if stages.get("extractor"):
        pipe.extractor = FeatureExtractor(d, config.text_dim, config.extractor, config.seed)
        pipe.extractor.load_state_dict(_sub(blocks, "extractor"))
        pipe.extractor.norm = NormStats(blocks["extractor.norm/mean"], blocks["extractor.norm/std"])
        pipe.extractor.eval()
    for s in require:
        if not stages.get(s):
            raise MissingStageError(f"checkpoint {path} lacks stage {s!r}")
    return pipe


# ablations

ABLATIONS = {"full": {}, "noALIGN": {"no_align": True}, "noREC": {"no_rec": True},
             "noKL": {"no_kl": True}}


def ablation_projector(pipe: Pipeline, name: str) -> Projector:
    """Projector retrained with one loss term removed (``full`` reuses the stored one)."""
    import dataclasses

    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation {name!r}; choose from {list(ABLATIONS)}")
    pipe.require("vae", "diffusion")
    if name == "full" and pipe.projector is not None:
        return pipe.projector
    cfg = dataclasses.replace(pipe.config.projector, **ABLATIONS[name])
    res = train_projector(pipe.latents("train"), pipe.text_embeddings(pipe.captions("train")),
                          cfg, pipe.config.seed)
    _quantize(res.projector)
    return res.projector


def run_ablation(pipe: Pipeline, names=tuple(ABLATIONS), repeats: int | None = None,
                 seed: int = 0) -> list[dict]:
    """One row per ablation: realigned-generation metrics plus alignment diagnostics."""
    from .evalkit.evaluate import evaluate
    from .projector import alignment_margin, relative_reconstruction_error

    original = pipe.projector
    zt = pipe.latents("test")
    caps = pipe.captions("test")
    ct = pipe.text_embeddings(caps)
    rows = []
    try:
        for name in names:
            pipe.projector = ablation_projector(pipe, name)
            rep = evaluate(pipe, (True,), repeats, seed=seed, labels=[name])[0]
            paired, mismatched = alignment_margin(pipe.projector, zt, ct, caps, seed)
            rows.append({"ablation": name, "report": rep, "align_margin": paired - mismatched,
                         "rel_rec_error": relative_reconstruction_error(pipe.projector, zt)})
    finally:
        pipe.projector = original
    return rows
