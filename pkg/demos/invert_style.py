"""Learn a placeholder token from one styled exemplar under each loss space.

    python3 demos/invert_style.py runs/quick/pipeline.ckpt [--style bouncy]
"""

import argparse
import dataclasses

import numpy as np

from motionrealign.corpus import unstyled_twin
from motionrealign.motion import encode_features
from motionrealign.mti import GENERATION_REALIGN, invert_motion, style_distances
from motionrealign.pipeline import load_pipeline


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("checkpoint")
    ap.add_argument("--style", default="bouncy")
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    pipe = load_pipeline(args.checkpoint, require=("vae", "diffusion", "projector", "extractor"))
    ex = next(e for e in pipe.corpus.exemplars if e.spec.style == args.style)
    x = encode_features(ex.motion, pipe.skeleton).data
    twin = encode_features(unstyled_twin(ex, pipe.config.corpus), pipe.skeleton).data
    print(f"exemplar {ex.id}: {len(x)} frames")
    for space in ("lead", "mld", "feat"):
        cfg = dataclasses.replace(pipe.config.inversion, loss_space=space)
        rows = []
        for s in range(args.seeds):
            res = invert_motion(pipe, [x], cfg, s)
            d = style_distances(pipe, res.token, x, [s], GENERATION_REALIGN[space], reference=twin)
            rows.append((res.probe_before, res.probe_after, d[0, 0], d[1, 0]))
        r = np.median(np.array(rows), axis=0)
        print(f"{space:5s} probe loss {r[0]:.4g} -> {r[1]:.4g}; distance to exemplar {r[2]:.3f}, "
              f"to unstyled twin {r[3]:.3f}")


if __name__ == "__main__":
    main()
