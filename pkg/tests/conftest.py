import dataclasses

import pytest

from motionrealign.config import (DiffusionConfig, EvalConfig, ExtractorConfig, InversionConfig,
                                  ProjectorConfig, RunConfig, VaeConfig)


def tiny_config(**overrides) -> RunConfig:
    """Full-size corpus, very small models and one or two epochs per stage."""
    cfg = RunConfig(
        vae=VaeConfig(latent_dim=8, hidden_dim=16, layers=1, heads=2, epochs=1, batch_size=32),
        diffusion=DiffusionConfig(hidden_dim=16, layers=2, heads=2, epochs=2, inference_steps=5),
        projector=ProjectorConfig(hidden_dim=16, layers=1, heads=2, epochs=2, dropout=0.0),
        extractor=ExtractorConfig(feature_dim=8, hidden_dim=16, layers=1, heads=2, epochs=1),
        inversion=InversionConfig(steps=2, batch=2),
        eval=EvalConfig(repeats=1, diversity_p=20, mm_captions=2, mm_per_caption=4, mm_d=2),
        text_dim=16,
    )
    return dataclasses.replace(cfg, **overrides)


@pytest.fixture(scope="session")
def tiny_pipe():
    from motionrealign.pipeline import train_all

    return train_all(tiny_config())


@pytest.fixture(scope="session")
def tiny_ckpt(tiny_pipe, tmp_path_factory):
    from motionrealign.pipeline import save_pipeline

    path = tmp_path_factory.mktemp("ckpt") / "tiny.ckpt"
    save_pipeline(tiny_pipe, path)
    return path
