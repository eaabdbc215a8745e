"""Train a quick pipeline, then generate one caption with and without realignment.

    python3 demos/train_and_generate.py [--config demos/quick.cfg] [--out runs/quick]
"""

import argparse
from pathlib import Path

import numpy as np

from motionrealign.config import load_config
from motionrealign.evalkit.metrics import fid, fit_gaussian
from motionrealign.motion import binarize_contacts, MotionFeatures, decode_features
from motionrealign.pipeline import generate, save_pipeline, train_all
from motionrealign.svg import motion_svg


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(Path(__file__).with_name("quick.cfg")))
    ap.add_argument("--out", default="runs/quick")
    ap.add_argument("--caption", default="the man walks forward quickly.")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipe = train_all(load_config(args.config))
    print("checkpoint sha256", save_pipeline(pipe, out / "pipeline.ckpt"))

    nj = pipe.skeleton.n_joints
    for realign in (False, True):
        feats = generate(pipe, [args.caption], [80], [0], apply_realign=realign)[0]
        mf = MotionFeatures(binarize_contacts(feats, nj), nj)
        motion = decode_features(mf, pipe.skeleton, fps=pipe.config.corpus.fps)
        name = "realign" if realign else "raw"
        (out / f"{name}.svg").write_text(motion_svg(motion, f"{args.caption} ({name})"))
        speed = np.linalg.norm(np.diff(motion.root_position[:, [0, 2]], axis=0), axis=1).mean()
        print(f"{name}: mean root speed {speed * pipe.config.corpus.fps:.2f} m/s")

    # test-split FID of both modes on one shared set of samples
    caps = pipe.captions("test")
    lengths = [len(f) for f in pipe.features("test")]
    real = pipe.extractor.embed_motions(pipe.features("test"))
    for realign in (False, True):
        gen = generate(pipe, caps, lengths, np.arange(len(caps)), apply_realign=realign)
        score = fid(fit_gaussian(real), fit_gaussian(pipe.extractor.embed_motions(gen)))
        print(f"FID realign={realign}: {score:.4f}")


if __name__ == "__main__":
    main()
