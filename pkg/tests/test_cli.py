import os

import pytest

from navtransfer.cli import build_parser, main
from navtransfer.evalkit import read_pgm
from navtransfer.indoorworld import load_houses, load_images
from navtransfer.nncore import load_checkpoint


def run(*argv):
    return main([str(a) for a in argv])


def test_subcommands_listed():
    parser = build_parser()
    names = set(parser._subparsers._group_actions[0].choices)
    assert {"gen-houses", "sample-images", "train", "adapt", "mimic", "eval", "heatmap", "pipeline",
            "sweep"} <= names


def test_end_to_end_commands(tmp_path):
    d = tmp_path
    assert run("gen-houses", "--domain", "syn", "--count", 2, "--seed", 1, "--out", d / "syn.bin") == 0
    assert run("gen-houses", "--domain", "real", "--split", "test", "--count", 2, "--out", d / "real.bin") == 0
    assert len(load_houses(str(d / "real.bin"))) == 2
    assert run("sample-images", "--domain", "syn", "--count", 8, "--houses", d / "syn.bin",
               "--out", d / "syn_img.bin") == 0
    assert run("sample-images", "--domain", "real", "--count", 8, "--out", d / "real_img.bin") == 0
    assert load_images(str(d / "real_img.bin")).shape == (8, 32, 32, 3)
    small = ["--set", "unroll=5", "--set", "envs_per_worker=1", "--set", "max_steps=10"]
    assert run("train", "--domain", "syn", "--houses", d / "syn.bin", "--steps", 10, "--workers", 1,
               "--out", d / "sim.ckpt", "--log", d / "sim.csv", *small) == 0
    assert run("train", "--domain", "real", "--from", d / "sim.ckpt", "--houses", d / "real.bin", "--steps", 5,
               "--workers", 1, "--out", d / "ft.ckpt", *small) == 0
    assert run("adapt", "--ms", d / "sim.ckpt", "--sim-images", d / "syn_img.bin", "--real-images",
               d / "real_img.bin", "--iters", 2, "--batch", 4, "--out", d / "fa.ckpt", "--log", d / "fa.csv") == 0
    assert run("mimic", "--mr", d / "fa.ckpt", "--teacher", d / "sim.ckpt", "--houses", d / "real.bin",
               "--lambda", 0.1, "--steps", 5, "--workers", 1, "--out", d / "pm.ckpt", "--log", d / "pm.csv",
               *small) == 0
    fa, _ = load_checkpoint(str(d / "fa.ckpt"))
    pm, _ = load_checkpoint(str(d / "pm.ckpt"))
    assert fa.checksum("M.") == pm.checksum("M.")
    assert run("make-episodes", "--houses", d / "real.bin", "--per-house", 2, "--max-steps", 10,
               "--out", d / "eps.json") == 0
    assert run("eval", "--model", d / "pm.ckpt", "--episodes", d / "eps.json", "--out", d / "ev") == 0
    assert os.path.exists(d / "ev" / "episodes.csv") and os.path.exists(d / "ev" / "aggregate.csv")
    assert run("heatmap", "--model", d / "pm.ckpt", "--image-bank", d / "real_img.bin", "--index", 3,
               "--out", d / "h.pgm") == 0
    assert read_pgm(str(d / "h.pgm")).shape == (6, 6)


def test_error_exit_codes(tmp_path, capsys):
    assert run("eval", "--model", tmp_path / "missing.ckpt", "--episodes", tmp_path / "none.json",
               "--out", tmp_path) == 2
    assert "[eval]" in capsys.readouterr().err
    assert run("gen-houses", "--domain", "mars", "--count", 1, "--out", tmp_path / "x.bin") == 2
    assert run("pipeline", "--set", "nonsense=1") == 2
    assert run("sweep", "--param", "idt_weight", "--values", "1,1") == 2


def test_pipeline_stage_error_code(tmp_path, capsys):
    # a directory where the first house bank should go makes that stage fail
    (tmp_path / "seed0" / "houses" / "synthetic_train.bin").mkdir(parents=True)
    assert run("pipeline", "--set", f"out_dir={tmp_path}", "--set", "seeds=0") == 3
    assert "[houses-synthetic-train]" in capsys.readouterr().err


def test_help_runs():
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
