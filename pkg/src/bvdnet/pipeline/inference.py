"""Auto-regressive sliding-window decaptioning of whole clips."""
from __future__ import annotations

import time

import numpy as np
import torch

from ..datagen import window_indices
from ..model import BVDNet
from .config import InferenceConfig


def copy_back(input_frame, prediction, threshold: float = 0.01, channel_axis: int = -1):
    """Keep input pixels whose largest channel change is below ``threshold``.

    Works on numpy arrays or torch tensors; the comparison is strict, so a
    difference of exactly ``threshold`` keeps the prediction.
    """
    if isinstance(input_frame, np.ndarray):
        diff = np.abs(input_frame - prediction).max(axis=channel_axis, keepdims=True)
        return np.where(diff < threshold, input_frame, prediction)
    diff = (input_frame - prediction).abs().amax(dim=channel_axis, keepdim=True)
    return torch.where(diff < threshold, input_frame, prediction)


def _check_frames(model: BVDNet, frames: np.ndarray):
    if frames.ndim != 4 or frames.shape[-1] != model.config.io_channels:
        raise ValueError(f"expected [L, H, W, {model.config.io_channels}] frames, got {frames.shape}")
    h, w = frames.shape[1:3]
    f = model.config.downsample_factor
    if h % f or w % f:
        raise ValueError(f"frame size {h}x{w} is not divisible by {f}; pad by {(-h) % f} rows and {(-w) % f} columns")


@torch.no_grad()
def infer_clip(model: BVDNet, corrupted_frames, cfg: InferenceConfig | None = None) -> np.ndarray:
    """Restore every frame of a ``[L, H, W, C]`` clip in order.

    Frame ``t`` is predicted from its reflected window of ``2N + 1`` frames
    and, for recurrent models, the restored frame ``t - 1`` (the corrupted
    first frame at ``t = 0``).  Copy-back is applied before a frame is fed
    back.
    """
    cfg = cfg or InferenceConfig()
    frames = np.asarray(corrupted_frames, dtype=np.float32)
    _check_frames(model, frames)
    was_training = model.training
    model.eval()
    mc = model.config
    L = frames.shape[0]
    x = torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2)  # [L, C, H, W]
    out = torch.empty_like(x)
    windows = [window_indices(t, L, mc.temporal_radius, mc.sampling_stride) for t in range(L)]

    if model.recurrence is None:
        # no feedback edge: windows are independent and can be batched
        step = max(1, cfg.batch_windows)
        for s in range(0, L, step):
            ts = range(s, min(L, s + step))
            src = torch.stack([x[windows[t]] for t in ts]).permute(0, 2, 1, 3, 4)
            pred = model.predict(src).prediction
            out[s:s + len(ts)] = copy_back(x[s:s + len(ts)], pred, cfg.copy_threshold, channel_axis=1)
    else:
        prev = x[0:1]
        for t in range(L):
            src = x[windows[t]].permute(1, 0, 2, 3).unsqueeze(0)
            pred = model.predict(src, prev).prediction
            prev = copy_back(x[t:t + 1], pred, cfg.copy_threshold, channel_axis=1)
            out[t] = prev[0]
    model.train(was_training)
    return out.permute(0, 2, 3, 1).numpy()


def benchmark(model: BVDNet, frames: int = 16, size: int = 128, repeats: int = 1, seed: int = 0) -> dict:
    """Frames per second of :func:`infer_clip` on random input."""
    rng = np.random.default_rng(seed)
    clip = rng.random((frames, size, size, model.config.io_channels), dtype=np.float32)
    infer_clip(model, clip[: min(frames, 2 * model.config.window)])  # warm-up
    start = time.perf_counter()
    for _ in range(repeats):
        infer_clip(model, clip)
    elapsed = time.perf_counter() - start
    return {"frames": frames * repeats, "size": size, "seconds": elapsed, "fps": frames * repeats / elapsed}
