"""Dense flow fields, backward bilinear warping and occlusion masks.

Flow convention: a flow attached to frame ``t`` holds, per pixel, the
displacement ``(dx, dy)`` in pixels to the matching location in frame
``t - 1``.  ``warp(prev, flow)`` therefore pulls frame ``t - 1`` into the
pixel grid of frame ``t``.

Single-image functions use channel-last arrays (``[H, W, C]`` images,
``[H, W, 2]`` flows), batched torch functions use channel-first tensors.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

FLOW_MAGIC = b"BVFL"


@dataclass(frozen=True)
class SceneMotion:
    """Parametric motion of a generated scene between two frames.

    ``sprite_masks`` are boolean ``[H, W]`` supports of each sprite in the
    *later* frame, ordered back to front; ``prev_sprite_masks`` are the same
    supports in the earlier frame.
    """

    height: int
    width: int
    global_velocity: tuple[int, int] = (0, 0)
    sprite_velocities: tuple[tuple[int, int], ...] = ()
    sprite_masks: tuple[np.ndarray, ...] = ()
    prev_sprite_masks: tuple[np.ndarray, ...] = ()


def _check_flow(flow, height, width):
    if flow.shape[-3:-1] != (height, width) or flow.shape[-1] != 2:
        raise ValueError(f"flow shape {tuple(flow.shape)} does not match image {height}x{width}")


def warp_batch(images: torch.Tensor, flows: torch.Tensor) -> torch.Tensor:
    """Backward-warp ``images`` [B, C, H, W] with ``flows`` [B, 2, H, W].

    Bilinear sampling, out-of-frame sample positions clamp to the border.
    Differentiable w.r.t. both arguments.
    """
    if images.dim() != 4 or flows.dim() != 4 or flows.shape[1] != 2:
        raise ValueError("expected images [B,C,H,W] and flows [B,2,H,W]")
    b, c, h, w = images.shape
    if flows.shape[0] != b or flows.shape[2:] != (h, w):
        raise ValueError(f"flow shape {tuple(flows.shape)} does not match images {tuple(images.shape)}")
    flows = flows.to(images.dtype)
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=images.dtype, device=images.device),
        torch.arange(w, dtype=images.dtype, device=images.device),
        indexing="ij",
    )
    sx = (xs + flows[:, 0]).clamp(0, w - 1)
    sy = (ys + flows[:, 1]).clamp(0, h - 1)
    x0f = sx.detach().floor()
    y0f = sy.detach().floor()
    fx = (sx - x0f).unsqueeze(1)
    fy = (sy - y0f).unsqueeze(1)
    x0 = x0f.long()
    y0 = y0f.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = images.reshape(b, c, h * w)

    def gather(yy, xx):
        idx = (yy * w + xx).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    top = gather(y0, x0) * (1 - fx) + gather(y0, x1) * fx
    bottom = gather(y1, x0) * (1 - fx) + gather(y1, x1) * fx
    return top * (1 - fy) + bottom * fy


def warp(image, flow):
    """Backward-warp a single ``[H, W, C]`` image by a ``[H, W, 2]`` flow.

    Accepts numpy arrays or torch tensors and returns the same kind.
    """
    as_numpy = isinstance(image, np.ndarray)
    img = torch.as_tensor(image)
    fl = torch.as_tensor(flow)
    if img.dim() != 3:
        raise ValueError(f"expected [H, W, C] image, got shape {tuple(img.shape)}")
    _check_flow(fl, img.shape[0], img.shape[1])
    out = warp_batch(img.permute(2, 0, 1).unsqueeze(0), fl.permute(2, 0, 1).unsqueeze(0))
    out = out[0].permute(1, 2, 0)
    return out.numpy() if as_numpy else out


def occlusion_mask(forward_flow: np.ndarray, backward_flow: np.ndarray, tol: float = 1.0) -> np.ndarray:
    """Forward/backward consistency mask for frame ``t``.

    ``backward_flow`` lives on frame ``t`` (points into ``t - 1``),
    ``forward_flow`` lives on frame ``t - 1`` (points into ``t``).  A pixel is
    valid (1) when its backward target lies inside frame ``t - 1`` and the
    round trip ``backward + forward(target)`` has magnitude below ``tol``.
    """
    forward_flow = np.asarray(forward_flow, dtype=np.float64)
    backward_flow = np.asarray(backward_flow, dtype=np.float64)
    if forward_flow.shape != backward_flow.shape:
        raise ValueError(f"flow shapes differ: {forward_flow.shape} vs {backward_flow.shape}")
    h, w = backward_flow.shape[:2]
    _check_flow(backward_flow, h, w)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = xs + backward_flow[..., 0]
    ty = ys + backward_flow[..., 1]
    inside = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    fwd_at_target = warp(forward_flow, backward_flow)
    round_trip = np.linalg.norm(backward_flow + fwd_at_target, axis=-1)
    return (inside & (round_trip < tol)).astype(np.uint8)


def synthetic_flow(motion: SceneMotion) -> tuple[np.ndarray, np.ndarray]:
    """Exact (forward, backward) flows for piecewise-translational motion.

    Forward flow is defined on the earlier frame, backward flow on the later
    one.  Sprites later in the tuple are drawn on top.
    """
    h, w = motion.height, motion.width
    forward = np.empty((h, w, 2), dtype=np.float32)
    backward = np.empty((h, w, 2), dtype=np.float32)
    forward[...] = motion.global_velocity
    backward[...] = (-motion.global_velocity[0], -motion.global_velocity[1])
    for vel, mask, prev_mask in zip(motion.sprite_velocities, motion.sprite_masks, motion.prev_sprite_masks):
        forward[prev_mask] = vel
        backward[mask] = (-vel[0], -vel[1])
    return forward, backward


def _to_gray(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        frame = frame.mean(axis=-1)
    return frame


def _block_match(a, b, init, block, radius):
    """Integer block matching of ``b`` against ``a`` around ``init`` per block.

    Returns per-block displacements that map a pixel of ``a`` to its match in
    ``b``; ties prefer the smallest displacement magnitude.
    """
    h, w = a.shape
    by, bx = h // block, w // block
    pad = radius + int(np.abs(init).max()) + 1
    bp = np.pad(b, pad, mode="edge")
    out = np.zeros((by, bx, 2), dtype=np.float64)
    offsets = [(dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    offsets.sort(key=lambda o: (o[0] ** 2 + o[1] ** 2, o[1], o[0]))
    for j in range(by):
        for i in range(bx):
            y0, x0 = j * block, i * block
            ref = a[y0:y0 + block, x0:x0 + block]
            ix, iy = int(round(init[j, i, 0])), int(round(init[j, i, 1]))
            best, best_cost = (0, 0), np.inf
            for dx, dy in offsets:
                sy, sx = y0 + iy + dy + pad, x0 + ix + dx + pad
                cand = bp[sy:sy + block, sx:sx + block]
                cost = np.abs(cand - ref).sum()
                if cost < best_cost - 1e-9:
                    best, best_cost = (dx, dy), cost
            out[j, i] = (ix + best[0], iy + best[1])
    return out


def estimate_flow(frame_a: np.ndarray, frame_b: np.ndarray, block: int = 8, radius: int = 4, scales: int = 3) -> np.ndarray:
    """Coarse dense flow from ``frame_a`` to ``frame_b`` by multi-scale block matching.

    ``result[y, x]`` is the displacement of pixel ``(x, y)`` of ``frame_a``
    to its match in ``frame_b``.  To obtain the backward flow of frame ``t``
    used by :func:`warp`, call ``estimate_flow(frame_t, frame_t_minus_1)``.
    """
    a = _to_gray(frame_a)
    b = _to_gray(frame_b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    if h < block or w < block:
        raise ValueError(f"frames {h}x{w} are smaller than one {block}x{block} block")

    pyramid = [(a, b)]
    for _ in range(scales - 1):
        pa, pb = pyramid[-1]
        if min(pa.shape) < 2 * block:
            break
        hh, ww = pa.shape[0] // 2 * 2, pa.shape[1] // 2 * 2
        half = lambda x: x[:hh, :ww].reshape(hh // 2, 2, ww // 2, 2).mean(axis=(1, 3))
        pyramid.append((half(pa), half(pb)))

    est = None
    for level in range(len(pyramid) - 1, -1, -1):
        pa, pb = pyramid[level]
        by, bx = pa.shape[0] // block, pa.shape[1] // block
        if est is None:
            init = np.zeros((by, bx, 2))
        else:
            # upsample coarse block field: nearest block, doubled displacement
            yi = np.minimum(np.arange(by) // 2, est.shape[0] - 1)
            xi = np.minimum(np.arange(bx) // 2, est.shape[1] - 1)
            init = 2.0 * est[yi][:, xi]
        est = _block_match(pa, pb, init, block, radius)

    # block centres -> dense field by bilinear interpolation
    by, bx = est.shape[:2]
    cy = (np.arange(by) + 0.5) * block - 0.5
    cx = (np.arange(bx) + 0.5) * block - 0.5
    gy = np.interp(np.arange(h), cy, np.arange(by))
    gx = np.interp(np.arange(w), cx, np.arange(bx))
    y0 = np.floor(gy).astype(int)
    x0 = np.floor(gx).astype(int)
    y1 = np.minimum(y0 + 1, by - 1)
    x1 = np.minimum(x0 + 1, bx - 1)
    wy = (gy - y0)[:, None, None]
    wx = (gx - x0)[None, :, None]
    top = est[y0][:, x0] * (1 - wx) + est[y0][:, x1] * wx
    bottom = est[y1][:, x0] * (1 - wx) + est[y1][:, x1] * wx
    dense = top * (1 - wy) + bottom * wy
    return dense.astype(np.float32)


def write_flow(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype="<f4")
    h, w = flow.shape[:2]
    _check_flow(flow, h, w)
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(flow.tobytes(order="C"))


def read_flow(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FLOW_MAGIC:
        raise ValueError(f"{path}: not a flow file (bad magic)")
    h, w = struct.unpack("<II", data[4:12])
    body = data[12:]
    if len(body) != h * w * 2 * 4:
        raise ValueError(f"{path}: truncated flow file")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, 2).astype(np.float32)


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def read_mask(path) -> np.ndarray:
    return (np.asarray(Image.open(path)) > 127).astype(np.uint8)
