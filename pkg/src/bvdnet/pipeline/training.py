"""Truncated-recurrence training loop.

Each sample is a run of ``recurrence_steps`` consecutive frames from one
clip.  Predictions are fed forward as the next step's previous output, but
detached, so no gradient crosses the feedback edge.  Per-step losses are
summed and one Adam update is taken per batch of runs.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from ..datagen import AugmentParams, SamplerConfig, draw_augment, flip_flow, jitter_colors, window_indices
from ..losses import LossBreakdown, LossWeights, total_loss
from ..model import BVDNet, build_model
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, train_config_text

log = logging.getLogger(__name__)

LOG_NAME = "loss_log.jsonl"
CKPT_NAME = "checkpoint.pt"


class TrainingDiverged(RuntimeError):
    pass


class ClipTensors:
    """A corpus held in memory as channel-first tensors."""

    def __init__(self, clips):
        if not clips:
            raise ValueError("empty corpus")
        shapes = {c.clean.shape[1:] for c in clips}
        if len(shapes) != 1:
            raise ValueError(f"clips have differing frame shapes: {shapes}")
        self.lengths = [c.length for c in clips]
        self.corrupted = [torch.from_numpy(np.ascontiguousarray(c.corrupted)).permute(0, 3, 1, 2).float() for c in clips]
        self.clean = [torch.from_numpy(np.ascontiguousarray(c.clean)).permute(0, 3, 1, 2).float() for c in clips]
        self.flows = [torch.from_numpy(np.ascontiguousarray(c.backward_flows)).permute(0, 3, 1, 2).float() for c in clips]
        self.masks = [torch.from_numpy(np.ascontiguousarray(c.masks)).float() for c in clips]

    def __len__(self):
        return len(self.clean)


@dataclass
class _Run:
    clip: int
    start: int
    aug: AugmentParams


def _aug_frames(x, p: AugmentParams):
    """x: [..., C, H, W]."""
    if p.flip:
        x = x.flip(-1)
    return jitter_colors(x, p, channel_dim=-3)


def _aug_flow(f, p: AugmentParams):
    return flip_flow(f, channel_dim=-3, width_dim=-1) if p.flip else f


def _aug_mask(m, p: AugmentParams):
    return m.flip(-1) if p.flip else m


def _step_tensors(data: ClipTensors, runs, k: int, mc, want_temporal: bool):
    """Batched inputs for unroll step ``k`` of every run."""
    src, center_prev, target, prev_target, flow, mask = [], [], [], [], [], []
    for r in runs:
        L = data.lengths[r.clip]
        t = r.start + k
        idx = window_indices(t, L, mc.temporal_radius, mc.sampling_stride)
        corr = data.corrupted[r.clip]
        src.append(_aug_frames(corr[idx], r.aug).permute(1, 0, 2, 3))
        center_prev.append(_aug_frames(corr[t - 1] if t > 0 else corr[0], r.aug))
        target.append(_aug_frames(data.clean[r.clip][t], r.aug))
        if want_temporal and t > 0:
            prev_target.append(_aug_frames(data.clean[r.clip][t - 1], r.aug))
            flow.append(_aug_flow(data.flows[r.clip][t - 1], r.aug))
            mask.append(_aug_mask(data.masks[r.clip][t - 1], r.aug))
    out = {
        "source": torch.stack(src),
        "bootstrap_prev": torch.stack(center_prev),
        "target": torch.stack(target),
    }
    if want_temporal and prev_target and len(prev_target) == len(runs):
        out.update(prev_target=torch.stack(prev_target), flow=torch.stack(flow), mask=torch.stack(mask))
    return out


def _sum_breakdowns(parts) -> LossBreakdown:
    keys = ("l1", "grad_l1", "ssim_term", "temporal", "total")
    return LossBreakdown(**{k: sum(getattr(p, k) for p in parts) for k in keys})


def unrolled_loss(model: BVDNet, data: ClipTensors, runs, cfg: TrainConfig, weights: LossWeights) -> LossBreakdown:
    """Summed loss of one batch of unrolled runs (differentiable)."""
    mc = model.config
    K = cfg.recurrence_steps
    temporal_on = "temporal" in weights.enabled_terms
    recon_only = replace(weights, enabled_terms=weights.enabled_terms - {"temporal"})
    steps = [_step_tensors(data, runs, k, mc, temporal_on and k > 0) for k in range(K)]

    if model.recurrence is None and not (temporal_on and cfg.temporal_target == "output"):
        # no feedback edge: all unroll steps are independent, run them as one batch
        src = torch.cat([s["source"] for s in steps])
        pred = model.predict(src).prediction
        preds = pred.split(len(runs))
    else:
        preds, prev = [], None
        for k, s in enumerate(steps):
            p_in = s["bootstrap_prev"] if k == 0 else prev
            pred = model.predict(s["source"], p_in if model.recurrence is not None else None).prediction
            preds.append(pred)
            prev = pred.detach()

    parts = []
    for k, (s, pred) in enumerate(zip(steps, preds)):
        if temporal_on and "prev_target" in s:
            prev_img = s["prev_target"] if cfg.temporal_target == "ground_truth" else preds[k - 1].detach()
            parts.append(total_loss(pred, s["target"], weights, prev_img, s["flow"], s["mask"]))
        else:
            parts.append(total_loss(pred, s["target"], recon_only))
    return _sum_breakdowns(parts)


def _draw_runs(rng: np.random.Generator, data: ClipTensors, cfg: TrainConfig, sampler: SamplerConfig):
    runs = []
    for _ in range(cfg.batch_size):
        c = int(rng.integers(len(data)))
        L = data.lengths[c]
        if L < cfg.recurrence_steps:
            raise ValueError(f"clip {c} has {L} frames, fewer than recurrence_steps={cfg.recurrence_steps}")
        start = int(rng.integers(0, L - cfg.recurrence_steps + 1))
        aug = draw_augment(rng, sampler) if cfg.augment else AugmentParams()
        runs.append(_Run(c, start, aug))
    return runs


def _log_record(step: int, b: LossBreakdown, weights: LossWeights) -> dict:
    rec = {"step": step}
    names = {"l1": "l1", "grad_l1": "grad_l1", "ssim": "ssim_term", "temporal": "temporal"}
    for term, key in names.items():
        if term in weights.enabled_terms:
            rec[key] = float(getattr(b, key).detach())
    rec["total"] = float(b.total.detach())
    return rec


def train(model: BVDNet | None, clips, cfg: TrainConfig, weights: LossWeights, out_dir, model_config=None, resume_from=None, progress=None) -> Path:
    """Train and return the path of the final checkpoint.

    ``clips`` is a list of :class:`~bvdnet.datagen.ClipPair`.  Training is
    deterministic for a given seed: single thread, deterministic kernels,
    a seeded numpy generator for sampling/augmentation.
    """
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    step = 0
    if resume_from is not None:
        ck = load_checkpoint(resume_from, expected_config=model.config if model is not None else model_config)
        model, step = ck.model, ck.step
        if ck.rng_state is not None:
            rng.bit_generator.state = ck.rng_state
    elif model is None:
        model = build_model(model_config)
    model.train()

    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2))
    if resume_from is not None and ck.optimizer_state is not None:
        opt.load_state_dict(ck.optimizer_state)

    data = ClipTensors(clips)
    sampler = SamplerConfig(N=model.config.temporal_radius, stride=model.config.sampling_stride)
    log_path = out_dir / LOG_NAME
    if resume_from is None:
        log_path.write_text("")
    ckpt_path = out_dir / CKPT_NAME
    extra = {"train_config": train_config_text(cfg), "loss_terms": ",".join(sorted(weights.enabled_terms))}

    def checkpoint():
        save_checkpoint(model, opt.state_dict(), step, ckpt_path, rng_state=rng.bit_generator.state, extra=extra)

    with open(log_path, "a") as logf:
        while step < cfg.steps:
            runs = _draw_runs(rng, data, cfg, sampler)
            breakdown = unrolled_loss(model, data, runs, cfg, weights)
            if not torch.isfinite(breakdown.total):
                raise TrainingDiverged(f"non-finite loss {float(breakdown.total.detach())} at step {step + 1}")
            opt.zero_grad(set_to_none=True)
            breakdown.total.backward()
            opt.step()
            step += 1
            logf.write(json.dumps(_log_record(step, breakdown, weights)) + "\n")
            if progress is not None:
                progress(step, breakdown)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < cfg.steps:
                logf.flush()
                checkpoint()
    checkpoint()
    return ckpt_path


def read_loss_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
