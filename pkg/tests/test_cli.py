import csv

import numpy as np
import pytest

from conftest import tiny_config
from motionrealign.cli import build_parser, main
from motionrealign.config import dump_config


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(dump_config(tiny_config()))
    return path


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_show_config(cfg_file, capsys):
    assert main(["show-config", "--config", str(cfg_file)]) == 0
    assert "vae.epochs=1" in capsys.readouterr().out


def test_train_stage_by_stage_matches_all(cfg_file, tmp_path, capsys):
    staged = tmp_path / "staged.ckpt"
    for stage in ("vae", "diffusion", "projector", "extractor"):
        assert main(["train", stage, "--config", str(cfg_file), "--out", str(staged)]) == 0
    whole = tmp_path / "whole.ckpt"
    main(["train", "all", "--config", str(cfg_file), "--out", str(whole)])
    assert staged.read_bytes() == whole.read_bytes()
    assert "sha256=" in capsys.readouterr().out


def test_train_out_of_order_fails(cfg_file, tmp_path):
    from motionrealign.pipeline import MissingStageError

    with pytest.raises(MissingStageError):
        main(["train", "projector", "--config", str(cfg_file), "--out", str(tmp_path / "x.ckpt")])


def test_generate_writes_outputs(tiny_ckpt, tmp_path, capsys):
    out = tmp_path / "gen"
    assert main(["generate", "--checkpoint", str(tiny_ckpt), "--caption", "the man runs.",
                 "--length", "30", "--seed", "2", "--out-dir", str(out)]) == 0
    assert "mean root speed" in capsys.readouterr().out
    rows = (out / "features.csv").read_text().strip().splitlines()
    assert len(rows) == 31
    assert (out / "motion.svg").read_text().startswith("<svg")
    assert (out / "motion.csv").exists()


def test_generate_unknown_words_warns(tiny_ckpt, tmp_path):
    with pytest.warns(UserWarning, match="no known words"):
        main(["generate", "--checkpoint", str(tiny_ckpt), "--caption", "zzz qqq",
              "--length", "20", "--no-realign", "--out-dir", str(tmp_path)])


def test_invert_and_token_file(tiny_ckpt, tmp_path, capsys):
    out = tmp_path / "tok.json"
    assert main(["invert", "--checkpoint", str(tiny_ckpt), "--exemplar-style", "bouncy",
                 "--steps", "2", "--loss-space", "mld", "--out", str(out)]) == 0
    assert "probe loss" in capsys.readouterr().out
    from motionrealign.mti import PlaceholderToken

    assert PlaceholderToken.load(out).embedding.shape == (16,)
    with pytest.raises(SystemExit):
        main(["invert", "--checkpoint", str(tiny_ckpt), "--out", str(out)])
    with pytest.raises(SystemExit):
        main(["invert", "--checkpoint", str(tiny_ckpt), "--exemplar-style", "wobbly",
              "--out", str(out)])


def test_invert_from_motion_csv(tiny_ckpt, tiny_pipe, tmp_path):
    from motionrealign.motion import write_motion_csv

    write_motion_csv(tmp_path / "ex.csv", tiny_pipe.corpus.exemplars[1].motion)
    assert main(["invert", "--checkpoint", str(tiny_ckpt), "--exemplar", str(tmp_path / "ex.csv"),
                 "--steps", "1", "--out", str(tmp_path / "t.json")]) == 0


def test_evaluate_csv(tiny_ckpt, tmp_path, capsys):
    out = tmp_path / "m.csv"
    assert main(["evaluate", "--checkpoint", str(tiny_ckpt), "--out-csv", str(out)]) == 0
    text = capsys.readouterr().out
    assert "FID" in text and "single run" in text
    rows = list(csv.DictReader(out.open()))
    assert {r["label"] for r in rows} == {"realign", "no-realign"}
    assert all(np.isfinite(float(r["fid"])) for r in rows)
    again = tmp_path / "m2.csv"
    main(["evaluate", "--checkpoint", str(tiny_ckpt), "--out-csv", str(again)])
    assert again.read_bytes() == out.read_bytes()


def test_export_features(tiny_ckpt, tmp_path):
    out = tmp_path / "f.csv"
    assert main(["export-features", "--checkpoint", str(tiny_ckpt), "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1 + 64


def test_ablate(tiny_ckpt, tmp_path):
    out = tmp_path / "a.csv"
    assert main(["ablate", "--checkpoint", str(tiny_ckpt), "--repeats", "1",
                 "--out-csv", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["ablation"] for r in rows] == ["full", "noALIGN", "noREC", "noKL"]
