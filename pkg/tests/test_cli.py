import json

import numpy as np
import pytest

from bvdnet import datagen
from bvdnet.model import ModelConfig, build_model, zero_residual_head
from bvdnet.pipeline.checkpoint import save_checkpoint
from bvdnet.pipeline.cli import main


@pytest.fixture(scope="module")
def identity_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "identity.pt"
    save_checkpoint(zero_residual_head(build_model(ModelConfig(base_channels=4))), None, 0, path)
    return path


def test_unknown_flag_exits_nonzero(capsys):
    assert main(["train", "--corpus", "x", "--no-such-flag"]) != 0
    assert "usage" in capsys.readouterr().err
    assert main([]) != 0


def test_train_dry_run_echoes_ablation(capsys):
    assert main(["train", "--corpus", "unused", "--ablation", "exp5", "--dry-run"]) == 0
    out = capsys.readouterr().out
    assert "variant=hybrid_3d2d" in out
    assert "recurrence=off" in out
    assert "losses=grad_l1,l1,ssim" in out


def test_decaption_writes_every_frame(tmp_path, identity_ckpt):
    clip = datagen.generate_clip(0, datagen.GenConfig(length=48, height=16, width=16, font_scale_max=1.0))
    src = tmp_path / "in"
    src.mkdir()
    for i, f in enumerate(clip.corrupted):
        datagen.write_png(src / f"frame_{i:05d}.png", f)
    assert main(["decaption", "--in", str(src), "--out", str(tmp_path / "out"), "--ckpt", str(identity_ckpt), "--debug-features"]) == 0
    written = sorted((tmp_path / "out").glob("frame_*.png"))
    assert len(written) == 48
    # the identity model reproduces the input PNGs exactly
    assert all(np.array_equal(datagen.read_png(p), datagen.read_png(src / p.name)) for p in written)
    assert list((tmp_path / "out" / "features").glob("*.png"))


def test_decaption_missing_input_fails(tmp_path, identity_ckpt, capsys):
    assert main(["decaption", "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "o"), "--ckpt", str(identity_ckpt)]) == 1
    assert "error" in capsys.readouterr().err


def test_gen_data_train_eval_round_trip(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert main(["gen-data", "--out", str(corpus), "--n-clips", "2", "--seed", "3", "--length", "8", "--height", "16", "--width", "16"]) == 0
    cfg = tmp_path / "train.cfg"
    cfg.write_text("batch_size=1\nrecurrence_steps=2\ncheckpoint_every=0\n")
    run = tmp_path / "run"
    assert main(["train", "--corpus", str(corpus), "--out", str(run), "--config", str(cfg), "--steps", "2", "--base-channels", "4", "--ablation", "exp3"]) == 0
    assert (run / "checkpoint.pt").exists()
    report = tmp_path / "report.json"
    assert main(["eval", "--corpus", str(corpus), "--ckpt", str(run / "checkpoint.pt"), "--report", str(report)]) == 0
    out = capsys.readouterr().out
    assert "MSE" in out and "PSNR" in out and "DSSIM" in out
    d = json.loads(report.read_text())
    assert d["meta"]["checkpoint_step"] == 2
    assert len(d["per_clip"]) == 2 and "baseline_mse" in d["meta"]


def test_bench_on_checkpoint(tmp_path, identity_ckpt, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench", "--ckpt", str(identity_ckpt), "--frames", "3", "--size", "16", "--json", str(out)]) == 0
    r = json.loads(out.read_text())[0]
    assert r["fps"] > 0 and r["reference_fps"] == 62.5
    assert "frames/s" in capsys.readouterr().out
