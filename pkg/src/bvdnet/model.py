"""Two-stream encoder / 2D decoder decaptioning network with a residual output.

The network ``f`` sees ``T = 2N + 1`` corrupted frames (as ``[B, C, T, H, W]``)
and, optionally, the previous restored frame (``[B, C, H, W]``).  It predicts a
residual that is added to the centre frame; the sum is clamped to ``[0, 1]``.

Layout of the default hybrid variant, with ``c_l = base_channels * 2**l``:

* aggregation stream: 3D convs; each stride-2 level also shrinks time with a
  temporally unpadded kernel, so time reaches 1 at the deepest level;
* recurrence stream: 2D convs on the previous output, same spatial schedule;
  summed with the aggregation stream at the deepest level;
* bottleneck: dilated 3x3 convs;
* decoder: nearest upsample + conv per level, concatenating aggregation
  features pooled to a single frame by a temporally unpadded 3D conv.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

VARIANTS = ("hybrid_3d2d", "enc3d_dec3d", "enc2d_dec2d")
NEG_SLOPE = 0.2


@dataclass(frozen=True)
class ModelConfig:
    temporal_radius: int = 2
    sampling_stride: int = 3
    base_channels: int = 16
    encoder_depth: int = 2
    bottleneck_dilations: tuple = (2, 4, 8, 16)
    use_recurrence_stream: bool = True
    variant: str = "hybrid_3d2d"
    io_channels: int = 3
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bottleneck_dilations", tuple(int(d) for d in self.bottleneck_dilations))
        if self.temporal_radius < 1:
            raise ValueError("temporal_radius must be >= 1")
        if self.sampling_stride < 1:
            raise ValueError("sampling_stride must be >= 1")
        if self.base_channels < 1 or self.encoder_depth < 1 or self.io_channels < 1:
            raise ValueError("channels and depth must be positive")
        if not self.bottleneck_dilations or min(self.bottleneck_dilations) < 1:
            raise ValueError("bottleneck_dilations must be a non-empty list of positive integers")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.use_recurrence_stream and self.variant != "hybrid_3d2d":
            raise ValueError(f"variant {self.variant} does not support the recurrence stream")

    @property
    def window(self) -> int:
        return 2 * self.temporal_radius + 1

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.encoder_depth

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, (tuple, list)):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, kv: dict) -> "ModelConfig":
        names = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in kv.items():
            if k not in names:
                continue
            if not isinstance(v, str):
                out[k] = v
            elif names[k] == "bool":
                out[k] = v.strip().lower() in ("1", "true", "yes", "on")
            elif names[k] == "int":
                out[k] = int(v)
            elif names[k] == "tuple":
                out[k] = tuple(int(x) for x in v.split(",") if x.strip())
            else:
                out[k] = v.strip()
        return cls(**out)

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        return cls.from_mapping(kv)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


# Desk-scale defaults and the wider configuration sized to the reported budget.
DESK_CONFIG = ModelConfig()
PAPER_SCALE_CONFIG = ModelConfig(base_channels=75)


@dataclass
class WindowBatch:
    """One training/inference unit, channel-last numpy arrays."""

    source_frames: np.ndarray  # [T, H, W, C]
    prev_output: np.ndarray  # [H, W, C]
    target_frame: np.ndarray | None = None
    indices: tuple = ()

    @property
    def center_frame(self) -> np.ndarray:
        return self.source_frames[self.source_frames.shape[0] // 2]


@dataclass
class ResidualOutput:
    residual: torch.Tensor
    prediction: torch.Tensor


def _temporal_reductions(radius: int, depth: int) -> list[int]:
    """Split the temporal radius over the downsampling levels, front-loaded."""
    base, extra = divmod(radius, depth)
    return [base + (1 if i < extra else 0) for i in range(depth)]


def _act(x):
    return F.leaky_relu(x, NEG_SLOPE)


class _Encoder3D(nn.Module):
    """Aggregation stream; ``keep_time`` pads time instead of shrinking it."""

    def __init__(self, cfg: ModelConfig, keep_time: bool = False):
        super().__init__()
        c, C = cfg.base_channels, cfg.io_channels
        T = cfg.window
        self.stem = nn.Conv3d(C, c, 3, padding=1)
        self.down = nn.ModuleList()
        self.refine = nn.ModuleList()
        self.times = [T]
        reductions = _temporal_reductions(cfg.temporal_radius, cfg.encoder_depth)
        for level in range(1, cfg.encoder_depth + 1):
            cin, cout = c * 2 ** (level - 1), c * 2 ** level
            r = 0 if keep_time else reductions[level - 1]
            kt = 3 if keep_time else 2 * r + 1
            pt = 1 if keep_time else 0
            self.down.append(nn.Conv3d(cin, cout, (kt, 3, 3), stride=(1, 2, 2), padding=(pt, 1, 1)))
            T = T - 2 * r
            kt2 = 3 if T > 1 else 1
            self.refine.append(nn.Conv3d(cout, cout, (kt2, 3, 3), padding=(kt2 // 2, 1, 1)))
            self.times.append(T)

    def forward(self, x):
        feats = [_act(self.stem(x))]
        for down, refine in zip(self.down, self.refine):
            feats.append(_act(refine(_act(down(feats[-1])))))
        return feats


class _Encoder2D(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c, C = cfg.base_channels, cfg.io_channels
        self.stem = nn.Conv2d(C, c, 3, padding=1)
        self.down = nn.ModuleList()
        self.refine = nn.ModuleList()
        for level in range(1, cfg.encoder_depth + 1):
            cin, cout = c * 2 ** (level - 1), c * 2 ** level
            self.down.append(nn.Conv2d(cin, cout, 3, stride=2, padding=1))
            self.refine.append(nn.Conv2d(cout, cout, 3, padding=1))

    def forward(self, x):
        feats = [_act(self.stem(x))]
        for down, refine in zip(self.down, self.refine):
            feats.append(_act(refine(_act(down(feats[-1])))))
        return feats


class BVDNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        c, C, D = cfg.base_channels, cfg.io_channels, cfg.encoder_depth
        ch = [c * 2 ** l for l in range(D + 1)]
        three_d_decoder = cfg.variant == "enc3d_dec3d"
        Conv = nn.Conv3d if three_d_decoder else nn.Conv2d

        if cfg.variant == "hybrid_3d2d":
            self.encoder = _Encoder3D(cfg)
            # temporal-pooling skips: unpadded kernel over the level's full time extent
            self.skips = nn.ModuleList(
                nn.Conv3d(ch[l], ch[l], (self.encoder.times[l], 3, 3), padding=(0, 1, 1)) for l in range(D)
            )
        elif cfg.variant == "enc2d_dec2d":
            self.encoder = _Encoder2D(cfg)
            self.skips = nn.ModuleList(nn.Conv2d(ch[l], ch[l], 3, padding=1) for l in range(D))
        else:
            self.encoder = _Encoder3D(cfg, keep_time=True)
            self.skips = nn.ModuleList()

        self.recurrence = _Encoder2D(cfg) if cfg.use_recurrence_stream else None

        def dilated(d):
            if three_d_decoder:
                return nn.Conv3d(ch[D], ch[D], 3, padding=(1, d, d), dilation=(1, d, d))
            return nn.Conv2d(ch[D], ch[D], 3, padding=d, dilation=d)

        self.bottleneck = nn.ModuleList(dilated(d) for d in cfg.bottleneck_dilations)
        self.dec_in = Conv(ch[D], ch[D], 3, padding=1)
        self.up = nn.ModuleList()
        self.fuse = nn.ModuleList()
        for l in range(D - 1, -1, -1):
            self.up.append(Conv(ch[l + 1], ch[l], 3, padding=1))
            self.fuse.append(Conv(2 * ch[l], ch[l], 3, padding=1))
        self.head = Conv(ch[0], C, 3, padding=1)
        self.reset_parameters()

    def reset_parameters(self):
        """Fan-in scaled uniform weights from ``config.init_seed``; zero biases.

        The residual head starts 10x smaller so an untrained model is close
        to the identity mapping.
        """
        gen = torch.Generator().manual_seed(self.config.init_seed)
        gain = math.sqrt(2.0 / (1 + NEG_SLOPE ** 2))
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                    continue
                fan_in = p[0].numel()
                bound = gain * math.sqrt(3.0 / fan_in)
                if name.startswith("head."):
                    bound *= 0.1
                p.copy_(torch.empty(p.shape).uniform_(-bound, bound, generator=gen))

    def _check(self, source, prev):
        cfg = self.config
        if source.dim() != 5 or source.shape[1] != cfg.io_channels or source.shape[2] != cfg.window:
            raise ValueError(f"expected source [B, {cfg.io_channels}, {cfg.window}, H, W], got {tuple(source.shape)}")
        h, w = source.shape[-2:]
        f = cfg.downsample_factor
        if h % f or w % f:
            ph, pw = (-h) % f, (-w) % f
            raise ValueError(f"frame size {h}x{w} is not divisible by {f}; pad by {ph} rows and {pw} columns")
        if self.recurrence is not None:
            if prev is None:
                raise ValueError("model uses the recurrence stream but no previous output was given")
            expect = (source.shape[0], source.shape[1], h, w)
            if tuple(prev.shape) != expect:
                raise ValueError(f"prev_output shape {tuple(prev.shape)} does not match source frames {expect}")

    def forward(self, source: torch.Tensor, prev: torch.Tensor | None = None) -> torch.Tensor:
        """Residual image ``[B, C, H, W]`` for the centre frame of ``source``."""
        self._check(source, prev)
        cfg = self.config
        N = cfg.temporal_radius
        if cfg.variant == "enc2d_dec2d":
            feats = self.encoder(source[:, :, N])
            skips = [s(f) for s, f in zip(self.skips, feats)]
            x = feats[-1]
        elif cfg.variant == "hybrid_3d2d":
            feats = self.encoder(source)
            skips = [s(f).squeeze(2) for s, f in zip(self.skips, feats)]
            x = feats[-1].squeeze(2)
        else:
            feats = self.encoder(source)
            skips = feats[:-1]
            x = feats[-1]
        if self.recurrence is not None:
            x = x + self.recurrence(prev)[-1]
        for conv in self.bottleneck:
            x = _act(conv(x))
        x = _act(self.dec_in(x))
        scale = (1, 2, 2) if x.dim() == 5 else 2
        for up, fuse, skip in zip(self.up, self.fuse, reversed(skips)):
            x = F.interpolate(x, scale_factor=scale, mode="nearest")
            x = _act(up(x))
            x = _act(fuse(torch.cat([x, skip], dim=1)))
        r = self.head(x)
        return r[:, :, N] if r.dim() == 5 else r

    def predict(self, source: torch.Tensor, prev: torch.Tensor | None = None) -> ResidualOutput:
        residual = self(source, prev)
        center = source[:, :, self.config.temporal_radius]
        return ResidualOutput(residual=residual, prediction=(center + residual).clamp(0.0, 1.0))


def build_model(config: ModelConfig) -> BVDNet:
    with torch.random.fork_rng(devices=[]):
        return BVDNet(config)


def window_to_tensors(batch: WindowBatch) -> tuple[torch.Tensor, torch.Tensor]:
    """Channel-last window -> (source [1, C, T, H, W], prev [1, C, H, W])."""
    src = torch.from_numpy(np.ascontiguousarray(batch.source_frames, dtype=np.float32))
    prev = torch.from_numpy(np.ascontiguousarray(batch.prev_output, dtype=np.float32))
    if prev.shape != src.shape[1:]:
        raise ValueError(f"prev_output shape {tuple(prev.shape)} does not match source frames {tuple(src.shape[1:])}")
    return src.permute(3, 0, 1, 2).unsqueeze(0), prev.permute(2, 0, 1).unsqueeze(0)


def forward(model: BVDNet, batch: WindowBatch) -> ResidualOutput:
    """Run one channel-last window through ``model``; outputs are ``[H, W, C]`` tensors."""
    src, prev = window_to_tensors(batch)
    out = model.predict(src, prev if model.recurrence is not None else None)
    return ResidualOutput(residual=out.residual[0].permute(1, 2, 0), prediction=out.prediction[0].permute(1, 2, 0))


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def zero_residual_head(model: BVDNet) -> BVDNet:
    """Zero the final layer so the residual vanishes and the model is the identity."""
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.zero_()
    return model


def ablation_model_config(base: ModelConfig, variant: str, recurrence: bool) -> ModelConfig:
    return replace(base, variant=variant, use_recurrence_stream=recurrence)
