"""Scaled-down overfit experiment shared by the acceptance suite.

Trains the 2D-2D, 3D-2D (L1), 3D-2D (full reconstruction loss) and full
recurrent variants on a fixed 8-clip synthetic corpus, then evaluates each
on that corpus.  Run directly to print a results table:

    python tests/overfit.py --seed 0
"""
from __future__ import annotations

import argparse
import json
import tempfile
import time
from dataclasses import replace

from bvdnet.datagen import GenConfig, clip_seeds, generate_clip
from bvdnet.metrics import evaluate
from bvdnet.model import ModelConfig
from bvdnet.pipeline.checkpoint import load_checkpoint
from bvdnet.pipeline.config import TrainConfig, ablation_configs
from bvdnet.pipeline.training import train

CORPUS_SEED = 1234
N_CLIPS = 8
STEPS = 2000
VARIANTS = ("exp2", "exp3", "exp5", "exp6")
GEN = GenConfig(
    length=24, height=32, width=32, font_scale_min=1.0, font_scale_max=1.4, max_sprites=2, segment_min=6, segment_max=12
)
MODEL = ModelConfig(base_channels=16)


def corpus():
    return [generate_clip(s, GEN) for s in clip_seeds(CORPUS_SEED, N_CLIPS)]


def run_variant(name: str, clips, seed: int = 0, steps: int = STEPS, out_dir=None) -> dict:
    mc, lw = ablation_configs(name, replace(MODEL, init_seed=seed))
    tc = TrainConfig(steps=steps, ablation=name, seed=seed, checkpoint_every=0)
    start = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        path = train(None, clips, tc, lw, out_dir or tmp, model_config=mc)
        ck = load_checkpoint(path)
    elapsed = time.perf_counter() - start
    report = evaluate(ck.model, clips, step=ck.step)
    return dict(report.aggregate, baseline_mse=report.meta["baseline_mse"], seconds=elapsed)


def run_seed(seed: int, clips=None, steps: int = STEPS, variants=VARIANTS, log=print, out_root=None) -> dict:
    clips = clips if clips is not None else corpus()
    out = {}
    for name in variants:
        run_dir = f"{out_root}/seed{seed}_{name}" if out_root else None
        out[name] = run_variant(name, clips, seed, steps, run_dir)
        r = out[name]
        log(f"seed {seed} {name}: mse {r['mse']:.5f} (baseline {r['baseline_mse']:.5f}) psnr {r['psnr_db']:.3f} pooled {r['pooled_psnr_db']:.3f} "
            f"dssim {r['dssim']:.4f} terr {r['temporal_error']:.5f} [{r['seconds']:.0f}s]")
    return out


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=STEPS)
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--json")
    p.add_argument("--out", help="keep each variant's loss log and checkpoint under this directory")
    a = p.parse_args()
    res = run_seed(a.seed, steps=a.steps, variants=a.variants.split(","), log=lambda s: print(s, flush=True), out_root=a.out)
    if a.json:
        with open(a.json, "w") as f:
            json.dump(res, f, indent=2)


if __name__ == "__main__":
    main()
