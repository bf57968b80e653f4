"""Reconstruction and temporal-consistency losses.

All functions take channel-first torch tensors shaped ``[..., C, H, W]`` and
reduce by the mean, so loss weights do not depend on resolution.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .flowwarp import warp_batch

RECONSTRUCTION_TERMS = ("l1", "grad_l1", "ssim")
ALL_TERMS = frozenset(RECONSTRUCTION_TERMS + ("temporal",))


@dataclass(frozen=True)
class LossWeights:
    lambda_R: float = 1.0
    lambda_T: float = 2.0
    ssim_window: int = 5
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2
    enabled_terms: frozenset = field(default_factory=lambda: ALL_TERMS)

    def __post_init__(self):
        object.__setattr__(self, "enabled_terms", frozenset(self.enabled_terms))
        if self.lambda_R < 0 or self.lambda_T < 0:
            raise ValueError("loss weights must be non-negative")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError(f"ssim_window must be odd and >= 3, got {self.ssim_window}")
        if self.ssim_c1 <= 0 or self.ssim_c2 <= 0:
            raise ValueError("SSIM stabilisers must be positive")
        unknown = self.enabled_terms - ALL_TERMS
        if unknown:
            raise ValueError(f"unknown loss terms: {sorted(unknown)}")


@dataclass
class LossBreakdown:
    l1: torch.Tensor
    grad_l1: torch.Tensor
    ssim_term: torch.Tensor
    temporal: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("l1", "grad_l1", "ssim_term", "temporal", "total")}


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _same_shape(pred, target)
    return (pred - target).abs().mean()


def gradient_l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean |forward difference| of ``pred - target`` along width plus along height."""
    _same_shape(pred, target)
    if pred.dim() < 2 or pred.shape[-1] < 2 or pred.shape[-2] < 2:
        raise ValueError(f"images must be at least 2x2, got {tuple(pred.shape)}")
    d = pred - target
    dx = d[..., :, 1:] - d[..., :, :-1]
    dy = d[..., 1:, :] - d[..., :-1, :]
    return dx.abs().mean() + dy.abs().mean()


def ssim_map(pred: torch.Tensor, target: torch.Tensor, window: int = 5, c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> torch.Tensor:
    """SSIM index at every valid ``window x window`` position.

    Local statistics use uniform weights and population (biased) variances.
    Returns ``[..., C, H - window + 1, W - window + 1]``.
    """
    _same_shape(pred, target)
    if pred.dim() < 3:
        raise ValueError("expected [..., C, H, W] tensors")
    h, w = pred.shape[-2:]
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} is smaller than the {window}x{window} SSIM window")
    lead = pred.shape[:-2]
    x = pred.reshape(-1, 1, h, w)
    y = target.reshape(-1, 1, h, w)
    pool = lambda z: F.avg_pool2d(z, window, stride=1)
    mu_x, mu_y = pool(x), pool(y)
    var_x = pool(x * x) - mu_x * mu_x
    var_y = pool(y * y) - mu_y * mu_y
    cov = pool(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    out = num / den
    return out.reshape(*lead, h - window + 1, w - window + 1)


def ssim(pred: torch.Tensor, target: torch.Tensor, weights: LossWeights | None = None) -> torch.Tensor:
    weights = weights or LossWeights()
    return ssim_map(pred, target, weights.ssim_window, weights.ssim_c1, weights.ssim_c2).mean()


def ssim_loss(pred: torch.Tensor, target: torch.Tensor, weights: LossWeights | None = None) -> torch.Tensor:
    # rounding can push SSIM of identical images a hair above 1
    return (1 - ssim(pred, target, weights)).clamp_min(0)


def temporal_loss(pred_t: torch.Tensor, prev: torch.Tensor, flow: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked mean of ``|pred_t - warp(prev, flow)|``.

    ``pred_t``/``prev`` are ``[B, C, H, W]`` (or unbatched ``[C, H, W]``),
    ``flow`` is ``[B, 2, H, W]`` and ``mask`` ``[B, H, W]``.  An empty mask
    gives 0.
    """
    _same_shape(pred_t, prev)
    unbatched = pred_t.dim() == 3
    if unbatched:
        pred_t, prev, flow, mask = pred_t[None], prev[None], flow[None], mask[None]
    if mask.shape != (pred_t.shape[0],) + tuple(pred_t.shape[2:]):
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match images {tuple(pred_t.shape)}")
    warped = warp_batch(prev, flow)
    m = mask.to(pred_t.dtype).unsqueeze(1)
    count = m.sum() * pred_t.shape[1]
    if count == 0:
        return pred_t.sum() * 0
    return ((pred_t - warped).abs() * m).sum() / count


def total_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    weights: LossWeights,
    prev_target: torch.Tensor | None = None,
    flow: torch.Tensor | None = None,
    mask: torch.Tensor | None = None,
) -> LossBreakdown:
    """Weighted objective ``lambda_R * L_R + lambda_T * L_T`` for one time step.

    Terms missing from ``weights.enabled_terms`` are reported as zero.  The
    temporal term warps ``prev_target`` (the previous ground-truth frame by
    default, or the previous output) into the current frame.
    """
    zero = pred.sum() * 0
    on = weights.enabled_terms
    l1 = l1_loss(pred, target) if "l1" in on else zero
    grad = gradient_l1_loss(pred, target) if "grad_l1" in on else zero
    s = ssim_loss(pred, target, weights) if "ssim" in on else zero
    if "temporal" in on:
        if prev_target is None or flow is None or mask is None:
            raise ValueError("temporal term enabled but previous frame, flow or mask missing")
        temporal = temporal_loss(pred, prev_target, flow, mask)
    else:
        temporal = zero
    total = weights.lambda_R * (l1 + grad + s) + weights.lambda_T * temporal
    return LossBreakdown(l1=l1, grad_l1=grad, ssim_term=s, temporal=temporal, total=total)
