"""Command line entry point: ``bvdnet {gen-data,train,eval,decaption,bench}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import datagen
from ..metrics import evaluate
from ..model import DESK_CONFIG, PAPER_SCALE_CONFIG, build_model, count_parameters
from .checkpoint import load_checkpoint
from .config import ABLATIONS, InferenceConfig, load_kv_file, resolve_config
from .inference import benchmark, infer_clip
from .training import train

log = logging.getLogger("bvdnet")

PAPER_FPS = 62.5


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bvdnet", description="Blind video decaptioning toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic caption corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--n-clips", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--length", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--width", type=int)
    g.add_argument("--config", help="key=value file with generator settings")

    t = sub.add_parser("train", help="train a model on a corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", default="runs/train")
    t.add_argument("--config", help="key=value file; flags override its keys")
    t.add_argument("--ablation", choices=sorted(ABLATIONS))
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float, dest="learning_rate")
    t.add_argument("--recurrence-steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--base-channels", type=int)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    e.add_argument("--corpus", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--copy-threshold", type=float, default=0.01)

    d = sub.add_parser("decaption", help="restore a directory of frame PNGs")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--ckpt", required=True)
    d.add_argument("--copy-threshold", type=float, default=0.01)
    d.add_argument("--debug-features", action="store_true", help="also write per-layer mean activations")

    b = sub.add_parser("bench", help="inference throughput")
    b.add_argument("--frames", type=int, default=16)
    b.add_argument("--size", type=int, default=128)
    b.add_argument("--ckpt", help="benchmark this checkpoint instead of the desk/paper-scale configs")
    b.add_argument("--json", help="write results to this file")
    return p


def _gen_data(args) -> int:
    kv = load_kv_file(args.config) if args.config else {}
    for k in ("length", "height", "width"):
        if getattr(args, k) is not None:
            kv[k] = getattr(args, k)
    cfg = datagen.GenConfig.from_mapping({k: str(v) for k, v in kv.items()})
    manifest = datagen.write_corpus(args.n_clips, args.out, args.seed, cfg)
    print(f"wrote {len(manifest.clips)} clips to {manifest.root}")
    return 0


def _train(args) -> int:
    file_kv = load_kv_file(args.config) if args.config else {}
    overrides = {
        "ablation": args.ablation,
        "steps": args.steps,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
        "recurrence_steps": args.recurrence_steps,
        "seed": args.seed,
        "base_channels": args.base_channels,
        "checkpoint_every": args.checkpoint_every,
    }
    run = resolve_config(file_kv, overrides)
    print(run.echo())
    if args.dry_run:
        return 0
    _, clips = datagen.load_corpus(args.corpus)

    def progress(step, b):
        if step % 100 == 0 or step == run.train.steps:
            log.info("step %d total %.5f", step, float(b.total.detach()))

    path = train(None, clips, run.train, run.loss, args.out, model_config=run.model, resume_from=args.resume, progress=progress)
    print(f"checkpoint: {path}")
    return 0


def _eval(args) -> int:
    ck = load_checkpoint(args.ckpt)
    report = evaluate(ck.model, Path(args.corpus), InferenceConfig(copy_threshold=args.copy_threshold), step=ck.step)
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(report.to_json())
    print(f"{'':<12} {'MSE':>8} {'PSNR':>9} {'DSSIM':>8}")
    a = report.aggregate
    print(f"{'model':<12} {a['mse']:>8.4f} {a['psnr_db']:>9.4f} {a['dssim']:>8.4f}")
    return 0


def _decaption(args) -> int:
    ck = load_checkpoint(args.ckpt)
    frames = datagen.read_frames(args.input)
    names = sorted(p.name for p in Path(args.input).glob("frame_*.png"))
    cfg = InferenceConfig(copy_threshold=args.copy_threshold, emit_debug_features=args.debug_features, output_root=args.out)
    restored = infer_clip(ck.model, frames, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, frame in zip(names, restored):
        datagen.write_png(out / name, frame)
    if cfg.emit_debug_features:
        _write_debug_features(ck.model, frames, out / "features")
    print(f"wrote {len(names)} frames to {out}")
    return 0


def _write_debug_features(model, frames, out_dir):
    """Channel-averaged, 0-1 normalised activations of every conv for frame 0."""
    import torch

    out_dir.mkdir(parents=True, exist_ok=True)
    mc = model.config
    idx = datagen.window_indices(0, frames.shape[0], mc.temporal_radius, mc.sampling_stride)
    x = torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2)
    src = x[idx].permute(1, 0, 2, 3).unsqueeze(0)
    maps = {}
    hooks = [
        m.register_forward_hook(lambda mod, inp, o, name=name: maps.__setitem__(name, o.detach()))
        for name, m in model.named_modules()
        if isinstance(m, (torch.nn.Conv2d, torch.nn.Conv3d))
    ]
    with torch.no_grad():
        model.predict(src, x[0:1] if model.recurrence is not None else None)
    for h in hooks:
        h.remove()
    for name, fmap in maps.items():
        a = fmap[0].mean(dim=0)
        if a.dim() == 3:
            a = a.mean(dim=0)
        a = (a - a.min()) / (a.max() - a.min() + 1e-12)
        datagen.write_png(out_dir / f"{name}.png", a.numpy())


def _bench(args) -> int:
    results = []
    if args.ckpt:
        targets = [("checkpoint", load_checkpoint(args.ckpt).model)]
    else:
        targets = [("desk", build_model(DESK_CONFIG)), ("paper_scale", build_model(PAPER_SCALE_CONFIG))]
    for label, model in targets:
        r = benchmark(model, frames=args.frames, size=args.size)
        r.update(config=label, parameters=count_parameters(model), reference_fps=PAPER_FPS)
        results.append(r)
        print(f"{label:<12} params {r['parameters']:>10,d}  {r['fps']:8.2f} frames/s at {args.size}x{args.size}  (reference GPU figure: {PAPER_FPS} fps)")
    if args.json:
        Path(args.json).write_text(json.dumps(results, indent=2))
    return 0


COMMANDS = {"gen-data": _gen_data, "train": _train, "eval": _eval, "decaption": _decaption, "bench": _bench}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, FileExistsError, PermissionError, RuntimeError) as exc:
        print(f"bvdnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


cli = main

if __name__ == "__main__":
    sys.exit(main())
