"""Frame-sequence quality metrics and evaluation reports.

Frames are channel-last ``[L, H, W, C]`` (or a single ``[H, W, C]``) arrays
in ``[0, 1]``, the layout clips are stored in.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .flowwarp import warp_batch
from .losses import LossWeights, ssim_map

PSNR_CAP_DB = 100.0
MSE_FLOOR = 1e-10


def _frames(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4:
        raise ValueError(f"expected [L, H, W, C] frames, got shape {a.shape}")
    return a


def _pair(pred, target):
    p, t = _frames(pred), _frames(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return p, t


def frame_mse(pred, target) -> np.ndarray:
    p, t = _pair(pred, target)
    return ((p - t) ** 2).mean(axis=(1, 2, 3))


def mse(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(((p - t) ** 2).mean())


def psnr_from_mse(m: float) -> float:
    return PSNR_CAP_DB if m < MSE_FLOOR else -10.0 * math.log10(m)


def psnr(pred, target) -> float:
    """Mean of per-frame PSNR (peak 1.0); near-identical frames count as 100 dB."""
    return float(np.mean([psnr_from_mse(m) for m in frame_mse(pred, target)]))


def pooled_psnr(pred, target) -> float:
    """PSNR of the MSE pooled over every frame."""
    return psnr_from_mse(mse(pred, target))


def frame_ssim(pred, target, weights: LossWeights | None = None) -> np.ndarray:
    weights = weights or LossWeights()
    p, t = _pair(pred, target)
    pt = torch.from_numpy(p).permute(0, 3, 1, 2)
    tt = torch.from_numpy(t).permute(0, 3, 1, 2)
    m = ssim_map(pt, tt, weights.ssim_window, weights.ssim_c1, weights.ssim_c2)
    return m.mean(dim=(1, 2, 3)).numpy()


def dssim(pred, target, weights: LossWeights | None = None) -> float:
    """Mean per-frame structural dissimilarity ``(1 - SSIM) / 2``."""
    return float(np.mean(np.clip((1.0 - frame_ssim(pred, target, weights)) / 2.0, 0.0, 1.0)))


def temporal_error(frames, flows, masks) -> float:
    """Mean masked Euclidean colour distance between each frame and its warped predecessor.

    ``flows[i]``/``masks[i]`` relate frame ``i + 1`` to frame ``i`` (backward
    flow of the later frame, ``[L-1, H, W, 2]`` and ``[L-1, H, W]``).
    """
    f = _frames(frames)
    if f.shape[0] < 2:
        raise ValueError("temporal error needs at least two frames")
    fl = np.asarray(flows, dtype=np.float64)
    mk = np.asarray(masks, dtype=np.float64)
    n, h, w = f.shape[0] - 1, f.shape[1], f.shape[2]
    if fl.shape != (n, h, w, 2) or mk.shape != (n, h, w):
        raise ValueError(f"flows {fl.shape} / masks {mk.shape} do not align with {f.shape[0]} frames of {h}x{w}")
    cur = torch.from_numpy(f[1:]).permute(0, 3, 1, 2)
    prev = torch.from_numpy(f[:-1]).permute(0, 3, 1, 2)
    warped = warp_batch(prev, torch.from_numpy(fl).permute(0, 3, 1, 2))
    dist = (cur - warped).pow(2).sum(dim=1).sqrt().numpy()
    errors = []
    for d, m in zip(dist, mk):
        valid = m.sum()
        errors.append(float((d * m).sum() / valid) if valid > 0 else 0.0)
    return float(np.mean(errors))


@dataclass
class ClipScore:
    clip_id: str
    mse: float
    psnr_db: float
    pooled_psnr_db: float
    dssim: float
    temporal_error: float
    frames: int


@dataclass
class EvalReport:
    per_clip: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, score: ClipScore) -> None:
        self.per_clip.append(score)

    def finalize(self) -> "EvalReport":
        self.per_clip.sort(key=lambda s: s.clip_id)
        keys = ("mse", "psnr_db", "pooled_psnr_db", "dssim", "temporal_error")
        self.aggregate = {k: float(np.mean([getattr(s, k) for s in self.per_clip])) if self.per_clip else 0.0 for k in keys}
        self.meta["frame_count"] = int(sum(s.frames for s in self.per_clip))
        return self

    def to_dict(self) -> dict:
        return {"per_clip": [asdict(s) for s in self.per_clip], "aggregate": dict(self.aggregate), "meta": dict(self.meta)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(per_clip=[ClipScore(**s) for s in d["per_clip"]], aggregate=dict(d["aggregate"]), meta=dict(d["meta"]))

    def table_row(self, label: str = "") -> str:
        a = self.aggregate
        return f"{label:<12} MSE {a['mse']:.4f}  PSNR {a['psnr_db']:.4f}  DSSIM {a['dssim']:.4f}"


def score_clip(clip_id, restored, clean, flows, masks, weights: LossWeights | None = None) -> ClipScore:
    return ClipScore(
        clip_id=clip_id,
        mse=mse(restored, clean),
        psnr_db=psnr(restored, clean),
        pooled_psnr_db=pooled_psnr(restored, clean),
        dssim=dssim(restored, clean, weights),
        temporal_error=temporal_error(restored, flows, masks),
        frames=int(_frames(restored).shape[0]),
    )


def evaluate(model, corpus, cfg=None, step: int | None = None, weights: LossWeights | None = None) -> EvalReport:
    """Decaption every clip of ``corpus`` and score it against the clean frames.

    ``corpus`` is a corpus directory or a list of ``ClipPair``.  Temporal
    error uses each clip's ground-truth backward flows and occlusion masks.
    ``meta['baseline_mse']`` holds the do-nothing (corrupted vs clean) MSE.
    """
    from .datagen import load_corpus
    from .pipeline.inference import infer_clip

    if isinstance(corpus, (str, bytes)) or hasattr(corpus, "__fspath__"):
        manifest, clips = load_corpus(corpus)
        ids = [e.clip_id for e in manifest.clips]
    else:
        clips = list(corpus)
        ids = [f"clip_{i:04d}" for i in range(len(clips))]
    report = EvalReport(meta={"config_hash": model.config.digest(), "checkpoint_step": step})
    baseline = []
    for cid, clip in zip(ids, clips):
        restored = infer_clip(model, clip.corrupted, cfg)
        report.add(score_clip(cid, restored, clip.clean, clip.backward_flows, clip.masks, weights))
        baseline.append(mse(clip.corrupted, clip.clean))
    report.finalize()
    report.meta["baseline_mse"] = float(np.mean(baseline)) if baseline else 0.0
    return report
