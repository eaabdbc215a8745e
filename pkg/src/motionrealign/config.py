"""Run configuration: dataclass defaults plus a flat ``key=value`` file format.

Keys are ``section.field`` (for example ``vae.epochs=40``). Environment
variables named ``MOTIONREALIGN_<SECTION>__<FIELD>`` override both the
defaults and the config file.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import CorpusConfig

ENV_PREFIX = "MOTIONREALIGN_"


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 64
    hidden_dim: int = 64
    layers: int = 3
    heads: int = 4
    ff_mult: int = 2
    dropout: float = 0.0
    kl_weight: float = 1e-4
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 16
    epochs: int = 40
    min_len: int = 16
    max_len: int = 119


@dataclass(frozen=True)
class DiffusionConfig:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    inference_steps: int = 50
    hidden_dim: int = 128
    layers: int = 4
    heads: int = 4
    ff_mult: int = 2
    dropout: float = 0.0
    cond_dropout: float = 0.1
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 64
    epochs: int = 400
    guidance_scale: float = 7.5
    sampler: str = "ddim_deterministic"


@dataclass(frozen=True)
class ProjectorConfig:
    hidden_dim: int = 128
    layers: int = 4
    heads: int = 4
    ff_mult: int = 2
    dropout: float = 0.1
    lambda_align: float = 2.1591
    lambda_rec: float = 4.7036
    lambda_var: float = 0.05960
    lr: float = 5e-4
    weight_decay: float = 0.0
    batch_size: int = 64
    epochs: int = 400
    no_align: bool = False
    no_rec: bool = False
    no_kl: bool = False


@dataclass(frozen=True)
class ExtractorConfig:
    feature_dim: int = 32
    hidden_dim: int = 64
    layers: int = 2
    heads: int = 4
    patch: int = 4
    temperature: float = 0.07
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 40


@dataclass(frozen=True)
class InversionConfig:
    steps: int = 20
    batch: int = 4
    lr: float = 5e-3
    loss_space: str = "lead"
    apply_realign: bool = True
    crop_min: int = 40
    init_word: str = "walks"

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ValueError("inversion needs steps >= 1 and batch >= 1")
        if self.loss_space not in ("lead", "mld", "feat"):
            raise ValueError(f"unknown loss space {self.loss_space!r}")


@dataclass(frozen=True)
class EvalConfig:
    repeats: int = 5
    guidance_scale: float = 7.5
    rprec_pool: int = 32
    diversity_p: int = 300
    mm_captions: int = 16
    mm_per_caption: int = 20
    mm_d: int = 10
    mmdist_literal: bool = False


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    corpus_seed: int = 0
    text_dim: int = 64
    seed: int = 0


_SECTIONS = ("corpus", "vae", "diffusion", "projector", "extractor", "inversion", "eval")


def _coerce(value: str, typ):
    typ = {"int": int, "float": float, "bool": bool, "str": str}.get(typ, typ)
    if typ is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return typ(value.strip())


def _apply(cfg: RunConfig, key: str, value: str) -> RunConfig:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise KeyError(f"unknown config section {section!r}")
        sub = getattr(cfg, section)
        fields = {f.name: f for f in dataclasses.fields(sub)}
        if name not in fields:
            raise KeyError(f"unknown config key {key!r}")
        sub = dataclasses.replace(sub, **{name: _coerce(value, fields[name].type)})
        return dataclasses.replace(cfg, **{section: sub})
    fields = {f.name: f for f in dataclasses.fields(cfg) if f.name not in _SECTIONS}
    if key not in fields:
        raise KeyError(f"unknown config key {key!r}")
    return dataclasses.replace(cfg, **{key: _coerce(value, fields[key].type)})


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        cfg = _apply(cfg, key.strip(), value)
    return cfg


def env_overrides(cfg: RunConfig, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        cfg = _apply(cfg, key, environ[name])
    return cfg


def load_config(path=None, environ=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = parse_config(Path(path).read_text(), cfg)
    return env_overrides(cfg, environ)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for sf in dataclasses.fields(value):
                lines.append(f"{f.name}.{sf.name}={getattr(value, sf.name)}")
        else:
            lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict) -> RunConfig:
    """Inverse of :func:`config_dict`; unknown keys are rejected."""
    kwargs = {}
    for f in dataclasses.fields(RunConfig):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.name in _SECTIONS:
            sub_cls = type(getattr(RunConfig(), f.name))
            value = sub_cls(**value)
        kwargs[f.name] = value
    extra = set(data) - {f.name for f in dataclasses.fields(RunConfig)}
    if extra:
        raise KeyError(f"unknown config keys {sorted(extra)}")
    return RunConfig(**kwargs)
