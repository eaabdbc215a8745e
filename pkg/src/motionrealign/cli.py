"""Command-line entry point: ``motionrealign <command> ...``.

Every command is reproducible from the config file, the environment
overrides and the explicit seeds.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import dump_config, load_config

log = logging.getLogger("motionrealign")


def _load(path, require=()):
    from .pipeline import load_pipeline

    return load_pipeline(path, require)


def cmd_train(args) -> int:
    from .pipeline import STAGES, load_pipeline, new_pipeline, save_pipeline, train_stage

    out = Path(args.out)
    if out.exists() and not args.fresh:
        pipe = load_pipeline(out)
    else:
        pipe = new_pipeline(load_config(args.config))
    stages = STAGES if args.stage == "all" else (args.stage,)
    for stage in stages:
        log.info("training stage %s", stage)
        train_stage(pipe, stage)
        digest = save_pipeline(pipe, out)
        print(f"{stage}: saved {out} sha256={digest}")
    return 0


def _features_to_motion(pipe, feats: np.ndarray):
    from .motion import MotionFeatures, binarize_contacts, decode_features

    data = binarize_contacts(feats, pipe.skeleton.n_joints)
    return MotionFeatures(data, pipe.skeleton.n_joints), decode_features(
        MotionFeatures(data, pipe.skeleton.n_joints), pipe.skeleton, fps=pipe.config.corpus.fps)


def cmd_generate(args) -> int:
    from .motion import write_features_csv, write_motion_csv
    from .pipeline import generate
    from .svg import motion_svg
    from .textenc import UNK

    pipe = _load(args.checkpoint, ("vae", "diffusion") + (() if args.no_realign else ("projector",)))
    words = pipe.vocab.tokenize(args.caption)
    if not words or all(w == pipe.vocab.index[UNK] for w in words):
        warnings.warn(f"caption {args.caption!r} has no known words; using the UNK embedding")
        if not words:
            args.caption = UNK
    feats = generate(pipe, [args.caption], [args.length], [args.seed], not args.no_realign,
                     args.guidance)[0]
    mf, motion = _features_to_motion(pipe, feats)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_features_csv(out / "features.csv", mf)
    write_motion_csv(out / "motion.csv", motion)
    tag = "" if not args.no_realign else " (no realign)"
    (out / "motion.svg").write_text(motion_svg(motion, args.caption + tag))
    speed = np.linalg.norm(np.diff(motion.root_position[:, [0, 2]], axis=0), axis=1).mean()
    print(f"wrote {out}/features.csv, motion.csv, motion.svg; mean root speed "
          f"{speed * pipe.config.corpus.fps:.3f} m/s")
    return 0


def _read_exemplar(pipe, args) -> np.ndarray:
    from .motion import encode_features, read_features_csv, read_motion_csv

    if args.exemplar_style:
        lookup = {it.id: it for it in pipe.corpus.exemplars}
        key = f"style_{args.exemplar_style}"
        if key not in lookup:
            raise SystemExit(f"unknown style exemplar {args.exemplar_style!r}")
        return encode_features(lookup[key].motion, pipe.skeleton).data
    path = Path(args.exemplar)
    if path.read_text().startswith("# fps="):
        return encode_features(read_motion_csv(path), pipe.skeleton).data
    return read_features_csv(path).data


def cmd_invert(args) -> int:
    import dataclasses

    from .mti import invert_motion

    pipe = _load(args.checkpoint, ("vae", "diffusion"))
    if args.exemplar is None and args.exemplar_style is None:
        raise SystemExit("give --exemplar FILE or --exemplar-style NAME")
    cfg = pipe.config.inversion
    overrides = {"loss_space": args.loss_space, "steps": args.steps, "init_word": args.init_word}
    cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    res = invert_motion(pipe, [_read_exemplar(pipe, args)], cfg, args.seed)
    res.token.save(args.out)
    print(f"saved token {res.token.word!r} to {args.out}; probe loss "
          f"{res.probe_before:.5f} -> {res.probe_after:.5f}")
    return 0


def cmd_evaluate(args) -> int:
    from .evalkit.evaluate import evaluate, reports_csv, reports_table

    pipe = _load(args.checkpoint, ("vae", "diffusion", "extractor"))
    modes = {"both": (True, False), "on": (True,), "off": (False,)}[args.realign]
    reports = evaluate(pipe, modes, args.repeats, args.guidance, args.seed)
    sys.stdout.write(reports_table(reports))
    if args.out_csv:
        Path(args.out_csv).write_text(reports_csv(reports))
    return 0


def cmd_ablate(args) -> int:
    from .evalkit.evaluate import reports_table
    from .evalkit.metrics import METRIC_COLUMNS
    from .pipeline import run_ablation

    pipe = _load(args.checkpoint, ("vae", "diffusion", "extractor"))
    rows = run_ablation(pipe, repeats=args.repeats, seed=args.seed)
    sys.stdout.write(reports_table([r["report"] for r in rows]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ablation"] + [f"{k}_median" for k in METRIC_COLUMNS]
               + ["align_margin", "rel_rec_error"])
    for r in rows:
        w.writerow([r["ablation"]] + [repr(r["report"].median(k)) for k in METRIC_COLUMNS]
                   + [repr(r["align_margin"]), repr(r["rel_rec_error"])])
    if args.out_csv:
        Path(args.out_csv).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_export_features(args) -> int:
    from .evalkit.evaluate import export_features
    from .pipeline import generate

    pipe = _load(args.checkpoint, ("extractor",))
    generated = {}
    if args.with_generated:
        pipe.require("vae", "diffusion", "projector")
        caps = pipe.captions(args.split)
        lengths = [len(f) for f in pipe.features(args.split)]
        seeds = args.seed + np.arange(len(caps))
        for flag, label in ((True, "realign"), (False, "no-realign")):
            generated[label] = (caps, generate(pipe, caps, lengths, seeds, flag))
    Path(args.out).write_text(export_features(pipe, args.split, generated))
    print(f"wrote {args.out}")
    return 0


def cmd_show_config(args) -> int:
    sys.stdout.write(dump_config(load_config(args.config)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="motionrealign", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one stage (or all) into a checkpoint")
    t.add_argument("stage", choices=("vae", "diffusion", "projector", "extractor", "all"))
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--out", required=True, help="checkpoint path (extended in place)")
    t.add_argument("--fresh", action="store_true", help="ignore an existing checkpoint")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="text -> motion CSVs + SVG")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--caption", required=True)
    g.add_argument("--length", type=int, default=60, help="feature frames")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--guidance", type=float, default=None)
    g.add_argument("--no-realign", action="store_true")
    g.add_argument("--out-dir", default="generated")
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("invert", help="learn a placeholder token from an exemplar")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--exemplar", help="motion CSV (with '# fps=' line) or feature CSV")
    i.add_argument("--exemplar-style", help="use the corpus exemplar of this style")
    i.add_argument("--init-word", default=None)
    i.add_argument("--loss-space", choices=("lead", "mld", "feat"), default=None)
    i.add_argument("--steps", type=int, default=None)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True, help="token JSON")
    i.set_defaults(func=cmd_invert)

    e = sub.add_parser("evaluate", help="metric report over the test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--realign", choices=("both", "on", "off"), default="both")
    e.add_argument("--repeats", type=int, default=None)
    e.add_argument("--guidance", type=float, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out-csv")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="retrain the projector without each loss term")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--repeats", type=int, default=None)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out-csv")
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export-features", help="extractor features as CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--split", choices=("train", "test"), default="test")
    x.add_argument("--with-generated", action="store_true")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_features)

    c = sub.add_parser("show-config", help="print the effective configuration")
    c.add_argument("--config")
    c.set_defaults(func=cmd_show_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
