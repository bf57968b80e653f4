"""Synthetic (corrupted, clean) caption clips, window sampling and corpus files.

Scenes are procedural: a smooth textured background under a global integer
pan, plus textured sprites moving with their own integer velocities.  The
motion is known exactly, so ground-truth flows come for free.  Captions are
drawn from the built-in glyph atlas and composited per pixel as
``(1 - alpha) * clean + alpha * colour``.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import flowwarp
from .glyphs import CHARSET, render_text
from .model import WindowBatch

SHADOW_KINDS = ("none", "soft", "solid")
MANIFEST_NAME = "manifest.txt"
_LETTERS = [c for c in CHARSET if c.isalnum()]


@dataclass(frozen=True)
class GenConfig:
    length: int = 48
    height: int = 128
    width: int = 128
    min_sprites: int = 1
    max_sprites: int = 3
    max_pan_speed: int = 2
    max_sprite_speed: int = 3
    font_scale_min: float = 1.0
    font_scale_max: float = 2.0
    alpha_min: float = 0.6
    alpha_max: float = 1.0
    shadow_none_prob: float = 0.3
    shadow_soft_prob: float = 0.5
    segment_min: int = 8
    segment_max: int = 20
    gap_prob: float = 0.2
    gap_max: int = 5

    def __post_init__(self):
        if self.length < 1 or self.height < 8 or self.width < 8:
            raise ValueError("clip must have at least one 8x8 frame")
        if not 0 < self.alpha_min <= self.alpha_max <= 1:
            raise ValueError("caption alpha range must lie in (0, 1]")
        if self.font_scale_min <= 0 or self.font_scale_min > self.font_scale_max:
            raise ValueError("invalid font scale range")
        if self.segment_min < 1 or self.segment_min > self.segment_max:
            raise ValueError("invalid caption segment range")

    def to_lines(self) -> list[str]:
        return [f"{k}={v}" for k, v in asdict(self).items()]

    @classmethod
    def from_mapping(cls, kv: dict) -> "GenConfig":
        types = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in kv.items():
            if k in types:
                out[k] = float(v) if types[k] == "float" else int(v)
        return cls(**out)


@dataclass(frozen=True)
class CaptionSpec:
    text: str
    font_scale: float
    position: tuple[int, int]
    fill_color: tuple[float, float, float]
    alpha: float
    shadow: str = "none"
    shadow_alpha: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"caption alpha must be in (0, 1], got {self.alpha}")
        if self.shadow not in SHADOW_KINDS:
            raise ValueError(f"unknown shadow kind {self.shadow!r}")
        if self.shadow == "soft" and not 0 < self.shadow_alpha < 1:
            raise ValueError("soft shadows must be semi-transparent")


@dataclass
class ClipPair:
    clean: np.ndarray  # [L, H, W, C]
    corrupted: np.ndarray  # [L, H, W, C]
    overlay_alpha: np.ndarray  # [L, H, W]; evaluation only
    forward_flows: np.ndarray  # [L-1, H, W, 2] on frame t-1, pointing into t
    backward_flows: np.ndarray  # [L-1, H, W, 2] on frame t, pointing into t-1
    masks: np.ndarray  # [L-1, H, W] validity of backward_flows[t-1]
    seed: int
    caption_schedule: list = field(default_factory=list)

    @property
    def length(self) -> int:
        return self.clean.shape[0]


@dataclass(frozen=True)
class SamplerConfig:
    N: int = 2
    stride: int = 3
    augment_flip: bool = True
    brightness: float = 0.1
    contrast: float = 0.1
    saturation: float = 0.1

    def __post_init__(self):
        if self.N < 1 or self.stride < 1:
            raise ValueError("N and stride must be >= 1")


# --------------------------------------------------------------------------
# scene synthesis


class _Scene:
    """Procedural scene; ``render(t)`` is an exact function of integer time."""

    def __init__(self, rng: np.random.Generator, cfg: GenConfig):
        h, w = cfg.height, cfg.width
        self.h, self.w = h, w
        self.c0 = rng.uniform(0.05, 0.95, 3)
        self.c1 = rng.uniform(0.05, 0.95, 3)
        theta = rng.uniform(0, 2 * np.pi)
        self.grad_dir = np.array([np.cos(theta), np.sin(theta)]) / max(h, w)
        n_waves = 3
        ang = rng.uniform(0, 2 * np.pi, n_waves)
        freq = rng.uniform(0.08, 0.5, n_waves)
        self.waves_k = np.stack([np.cos(ang) * freq, np.sin(ang) * freq], axis=1)
        self.waves_phase = rng.uniform(0, 2 * np.pi, n_waves)
        self.waves_amp = rng.uniform(0.03, 0.12, (n_waves, 3))
        s = cfg.max_pan_speed
        self.pan = tuple(int(v) for v in rng.integers(-s, s + 1, 2))

        self.sprites = []
        for _ in range(int(rng.integers(cfg.min_sprites, cfg.max_sprites + 1))):
            sh = int(rng.integers(max(3, h // 8), max(4, h // 3) + 1))
            sw = int(rng.integers(max(3, w // 8), max(4, w // 3) + 1))
            ms = cfg.max_sprite_speed
            self.sprites.append(
                {
                    "size": (sw, sh),
                    "ellipse": bool(rng.random() < 0.5),
                    "pos": (int(rng.integers(-sw // 2, w - sw // 2)), int(rng.integers(-sh // 2, h - sh // 2))),
                    "vel": tuple(int(v) for v in rng.integers(-ms, ms + 1, 2)),
                    "colors": rng.uniform(0, 1, (2, 3)),
                    "period": int(rng.integers(2, 7)),
                    "stripes": bool(rng.random() < 0.5),
                }
            )
        self.ys, self.xs = np.mgrid[0:h, 0:w].astype(np.float64)

    def _background(self, t: int) -> np.ndarray:
        x = self.xs - t * self.pan[0]
        y = self.ys - t * self.pan[1]
        g = np.clip(0.5 + (x * self.grad_dir[0] + y * self.grad_dir[1]), 0, 1)[..., None]
        img = self.c0 * (1 - g) + self.c1 * g
        for k, ph, amp in zip(self.waves_k, self.waves_phase, self.waves_amp):
            img = img + amp * np.sin(k[0] * x + k[1] * y + ph)[..., None]
        return img

    def sprite_support(self, i: int, t: int) -> np.ndarray:
        sp = self.sprites[i]
        sw, sh = sp["size"]
        lx = self.xs - (sp["pos"][0] + t * sp["vel"][0])
        ly = self.ys - (sp["pos"][1] + t * sp["vel"][1])
        if sp["ellipse"]:
            return ((lx - (sw - 1) / 2) / (sw / 2)) ** 2 + ((ly - (sh - 1) / 2) / (sh / 2)) ** 2 <= 1.0
        return (lx >= 0) & (lx < sw) & (ly >= 0) & (ly < sh)

    def render(self, t: int) -> np.ndarray:
        img = self._background(t)
        for i, sp in enumerate(self.sprites):
            supp = self.sprite_support(i, t)
            lx = self.xs - (sp["pos"][0] + t * sp["vel"][0])
            ly = self.ys - (sp["pos"][1] + t * sp["vel"][1])
            p = sp["period"]
            if sp["stripes"]:
                sel = (np.floor((lx + ly) / p) % 2).astype(bool)
            else:
                sel = ((np.floor(lx / p) + np.floor(ly / p)) % 2).astype(bool)
            tex = np.where(sel[..., None], sp["colors"][0], sp["colors"][1])
            img = np.where(supp[..., None], tex, img)
        return np.clip(img, 0.0, 1.0)

    def motion(self, t: int) -> flowwarp.SceneMotion:
        """Motion between frames ``t - 1`` and ``t``."""
        return flowwarp.SceneMotion(
            height=self.h,
            width=self.w,
            global_velocity=self.pan,
            sprite_velocities=tuple(sp["vel"] for sp in self.sprites),
            sprite_masks=tuple(self.sprite_support(i, t) for i in range(len(self.sprites))),
            prev_sprite_masks=tuple(self.sprite_support(i, t - 1) for i in range(len(self.sprites))),
        )


def caption_layer(spec: CaptionSpec, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Effective per-pixel ``(alpha [H, W], colour [H, W, 3])`` of one caption.

    The shadow (offset copy of the glyphs in near-black) is composited first,
    the glyphs on top; both collapse into a single alpha/colour layer.
    """
    glyph = render_text(spec.text, spec.font_scale)
    gh, gw = glyph.shape
    off = max(1, int(round(spec.font_scale)))
    x, y = spec.position
    need_w = gw + (off if spec.shadow != "none" else 0)
    need_h = gh + (off if spec.shadow != "none" else 0)
    if x < 0 or y < 0 or x + need_w > width or y + need_h > height:
        raise ValueError(f"caption {spec.text!r} ({need_w}x{need_h} at {x},{y}) does not fit a {width}x{height} frame")

    a_glyph = np.zeros((height, width))
    a_glyph[y:y + gh, x:x + gw] = glyph * spec.alpha
    a_shadow = np.zeros((height, width))
    if spec.shadow != "none":
        sa = 1.0 if spec.shadow == "solid" else spec.shadow_alpha
        a_shadow[y + off:y + off + gh, x + off:x + off + gw] = glyph * sa
    alpha = 1 - (1 - a_glyph) * (1 - a_shadow)
    fill = np.asarray(spec.fill_color, dtype=np.float64)
    shadow_color = np.zeros(3)
    with np.errstate(invalid="ignore", divide="ignore"):
        color = ((1 - a_glyph) * a_shadow)[..., None] * shadow_color + a_glyph[..., None] * fill
        color = np.where(alpha[..., None] > 0, color / alpha[..., None], 0.0)
    return alpha, color


def composite(clean: np.ndarray, alpha: np.ndarray, color: np.ndarray) -> np.ndarray:
    """``(1 - alpha) * clean + alpha * color``, leaving alpha == 0 pixels untouched."""
    mixed = (1 - alpha[..., None]) * clean + alpha[..., None] * color
    return np.where(alpha[..., None] > 0, mixed, clean)


def _random_caption(rng: np.random.Generator, cfg: GenConfig) -> CaptionSpec:
    scale = float(rng.uniform(cfg.font_scale_min, cfg.font_scale_max))
    kind = rng.choice(SHADOW_KINDS, p=[cfg.shadow_none_prob, cfg.shadow_soft_prob, 1 - cfg.shadow_none_prob - cfg.shadow_soft_prob])
    off = max(1, int(round(scale))) if kind != "none" else 0
    char_w = render_text("A", scale).shape[1]
    step = render_text("AA", scale).shape[1] - char_w
    max_chars = (cfg.width - off - char_w) // max(step, 1) + 1
    text_h = render_text("A", scale).shape[0]
    if max_chars < 1 or text_h + off > cfg.height:
        raise ValueError(f"caption at scale {scale:.2f} is larger than a {cfg.width}x{cfg.height} frame")
    n = int(rng.integers(max(1, min(3, max_chars)), max_chars + 1))
    chars = [str(rng.choice(_LETTERS)) for _ in range(n)]
    for i in range(1, n - 1):
        if rng.random() < 0.15:
            chars[i] = " "
    text = "".join(chars)
    gh, gw = render_text(text, scale).shape
    x = int(rng.integers(0, cfg.width - gw - off + 1))
    y = int(rng.integers(0, cfg.height - gh - off + 1))
    if rng.random() < 0.5:
        fill = (1.0, 1.0, float(rng.choice([1.0, 0.0])))  # white or yellow
    else:
        fill = tuple(float(v) for v in rng.uniform(0, 1, 3))
    alpha = float(rng.uniform(cfg.alpha_min, cfg.alpha_max))
    shadow_alpha = {"none": 0.0, "soft": float(rng.uniform(0.3, 0.7)), "solid": 1.0}[str(kind)]
    return CaptionSpec(text=text, font_scale=scale, position=(x, y), fill_color=fill, alpha=alpha, shadow=str(kind), shadow_alpha=shadow_alpha)


def _random_schedule(rng: np.random.Generator, cfg: GenConfig) -> list:
    schedule, t = [], 0
    while t < cfg.length:
        if t > 0 and rng.random() < cfg.gap_prob:
            t += int(rng.integers(1, cfg.gap_max + 1))
            continue
        end = min(cfg.length, t + int(rng.integers(cfg.segment_min, cfg.segment_max + 1)))
        schedule.append((t, end, _random_caption(rng, cfg)))
        t = end
    return schedule


def generate_clip(seed: int, cfg: GenConfig | None = None, schedule: list | None = None) -> ClipPair:
    """Deterministically synthesise one clip pair from ``seed``.

    ``schedule`` (list of ``(start, end, CaptionSpec)``, end exclusive)
    overrides the random caption schedule.
    """
    cfg = cfg or GenConfig()
    rng = np.random.default_rng(seed)
    scene = _Scene(rng, cfg)
    if schedule is None:
        schedule = _random_schedule(rng, cfg)
    L, H, W = cfg.length, cfg.height, cfg.width

    clean = np.stack([scene.render(t) for t in range(L)])
    corrupted = clean.copy()
    alpha = np.zeros((L, H, W))
    for start, end, spec in schedule:
        a, col = caption_layer(spec, H, W)
        for t in range(max(0, start), min(L, end)):
            alpha[t] = a
            corrupted[t] = composite(clean[t], a, col)

    fwd = np.zeros((max(L - 1, 0), H, W, 2), dtype=np.float32)
    bwd = np.zeros_like(fwd)
    masks = np.zeros((max(L - 1, 0), H, W), dtype=np.uint8)
    for t in range(1, L):
        fwd[t - 1], bwd[t - 1] = flowwarp.synthetic_flow(scene.motion(t))
        masks[t - 1] = flowwarp.occlusion_mask(fwd[t - 1], bwd[t - 1])
    return ClipPair(
        clean=clean.astype(np.float32),
        corrupted=corrupted.astype(np.float32),
        overlay_alpha=alpha.astype(np.float32),
        forward_flows=fwd,
        backward_flows=bwd,
        masks=masks,
        seed=int(seed),
        caption_schedule=list(schedule),
    )


# --------------------------------------------------------------------------
# windowing and augmentation


def reflect_index(i: int, length: int) -> int:
    """Mirror an index into ``[0, length)`` without repeating the border frame."""
    if length == 1:
        return 0
    while i < 0 or i >= length:
        i = -i if i < 0 else 2 * (length - 1) - i
    return i


def window_indices(t: int, length: int, N: int, stride: int) -> list[int]:
    return [reflect_index(t + k * stride, length) for k in range(-N, N + 1)]


def sample_window(clip: ClipPair, t: int, cfg: SamplerConfig | None = None, prev_output: np.ndarray | None = None) -> WindowBatch:
    cfg = cfg or SamplerConfig()
    L = clip.length
    if not 0 <= t < L:
        raise IndexError(f"frame index {t} outside clip of length {L}")
    idx = window_indices(t, L, cfg.N, cfg.stride)
    if prev_output is None:
        # no history yet: the previous corrupted frame, or the frame itself at t=0
        prev_output = clip.corrupted[t - 1] if t > 0 else clip.corrupted[0]
    return WindowBatch(
        source_frames=clip.corrupted[idx],
        prev_output=np.asarray(prev_output, dtype=np.float32),
        target_frame=clip.clean[t],
        indices=tuple(idx),
    )


@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    brightness: float = 0.0
    contrast: float = 1.0
    saturation: float = 1.0


def draw_augment(rng: np.random.Generator, cfg: SamplerConfig) -> AugmentParams:
    return AugmentParams(
        flip=bool(cfg.augment_flip and rng.random() < 0.5),
        brightness=float(rng.uniform(-cfg.brightness, cfg.brightness)),
        contrast=float(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)),
        saturation=float(rng.uniform(1 - cfg.saturation, 1 + cfg.saturation)),
    )


def jitter_colors(x: torch.Tensor, p: AugmentParams, channel_dim: int) -> torch.Tensor:
    """Shared saturation, contrast (about 0.5) and brightness change, clipped to [0, 1]."""
    if p.saturation != 1.0:
        gray = x.mean(dim=channel_dim, keepdim=True)
        x = gray + (x - gray) * p.saturation
    if p.contrast != 1.0:
        x = (x - 0.5) * p.contrast + 0.5
    if p.brightness != 0.0:
        x = x + p.brightness
    return x.clamp(0.0, 1.0)


def flip_flow(flow: torch.Tensor, channel_dim: int, width_dim: int) -> torch.Tensor:
    """Mirror a flow field horizontally (negating dx)."""
    flow = flow.flip(width_dim)
    sign = torch.ones(2, dtype=flow.dtype)
    sign[0] = -1
    shape = [1] * flow.dim()
    shape[channel_dim] = 2
    return flow * sign.reshape(shape)


def augment(batch: WindowBatch, rng: np.random.Generator | None = None, cfg: SamplerConfig | None = None, params: AugmentParams | None = None) -> WindowBatch:
    """Apply one shared flip/colour jitter to every member of the window."""
    cfg = cfg or SamplerConfig()
    if params is None:
        params = draw_augment(rng if rng is not None else np.random.default_rng(), cfg)

    def apply(a):
        if a is None:
            return None
        x = torch.from_numpy(np.ascontiguousarray(a))
        if params.flip:
            x = x.flip(-2)
        x = jitter_colors(x, params, channel_dim=-1)
        return x.numpy()

    return WindowBatch(
        source_frames=apply(batch.source_frames),
        prev_output=apply(batch.prev_output),
        target_frame=apply(batch.target_frame),
        indices=batch.indices,
    )


# --------------------------------------------------------------------------
# corpus files


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, frame: np.ndarray) -> None:
    a = _to_u8(frame)
    Image.fromarray(a, mode="RGB" if a.ndim == 3 else "L").save(path)


def read_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float32) / 255.0


def _schedule_from_str(s: str) -> list:
    out = []
    for part in filter(None, s.split("|")):
        span, text = part.split(":", 1)
        start, end = span.split("-")
        out.append((int(start), int(end), text))
    return out


@dataclass
class ManifestEntry:
    clip_id: str
    seed: int
    length: int
    schedule: list


@dataclass
class CorpusManifest:
    root: Path
    seed: int
    gen_config: GenConfig
    clips: list

    @property
    def path(self) -> Path:
        return Path(self.root) / MANIFEST_NAME

    def to_text(self) -> str:
        lines = ["# bvdnet synthetic corpus", f"seed={self.seed}", f"n_clips={len(self.clips)}"]
        lines += self.gen_config.to_lines()
        for e in self.clips:
            lines.append(f"clip={e.clip_id};seed={e.seed};length={e.length};schedule={_schedule_to_str(e.schedule)}")
        return "\n".join(lines) + "\n"


def _schedule_to_str(schedule) -> str:
    return "|".join(f"{s}-{e}:{spec.text if isinstance(spec, CaptionSpec) else spec}" for s, e, spec in schedule)


def load_manifest(root) -> CorpusManifest:
    root = Path(root)
    path = root / MANIFEST_NAME if root.is_dir() else root
    if not path.exists():
        raise FileNotFoundError(f"no corpus manifest at {path}")
    header, clips = {}, []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("clip="):
            rec = dict(item.split("=", 1) for item in line.split(";"))
            clips.append(ManifestEntry(rec["clip"], int(rec["seed"]), int(rec["length"]), _schedule_from_str(rec.get("schedule", ""))))
        else:
            k, v = line.split("=", 1)
            header[k.strip()] = v.strip()
    return CorpusManifest(root=path.parent, seed=int(header["seed"]), gen_config=GenConfig.from_mapping(header), clips=clips)


def clip_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)]


def write_clip(clip: ClipPair, clip_dir) -> None:
    clip_dir = Path(clip_dir)
    for sub in ("clean", "corrupted", "alpha", "flows"):
        (clip_dir / sub).mkdir(parents=True, exist_ok=True)
    for t in range(clip.length):
        name = f"frame_{t:05d}.png"
        write_png(clip_dir / "clean" / name, clip.clean[t])
        write_png(clip_dir / "corrupted" / name, clip.corrupted[t])
        write_png(clip_dir / "alpha" / name, clip.overlay_alpha[t])
    for t in range(1, clip.length):
        flowwarp.write_flow(clip_dir / "flows" / f"fwd_{t:05d}.bvfl", clip.forward_flows[t - 1])
        flowwarp.write_flow(clip_dir / "flows" / f"bwd_{t:05d}.bvfl", clip.backward_flows[t - 1])
        flowwarp.write_mask(clip_dir / "flows" / f"mask_{t:05d}.png", clip.masks[t - 1])


def read_frames(directory) -> np.ndarray:
    files = sorted(Path(directory).glob("frame_*.png"))
    if not files:
        raise FileNotFoundError(f"no frame_*.png files in {directory}")
    return np.stack([read_png(f) for f in files])


def read_clip(clip_dir, seed: int = -1, schedule: list | None = None) -> ClipPair:
    clip_dir = Path(clip_dir)
    clean = read_frames(clip_dir / "clean")
    corrupted = read_frames(clip_dir / "corrupted")
    if clean.shape != corrupted.shape:
        raise ValueError(f"{clip_dir}: clean/corrupted frame counts differ")
    alpha = read_frames(clip_dir / "alpha")
    L = clean.shape[0]
    fwd, bwd, masks = [], [], []
    for t in range(1, L):
        fwd.append(flowwarp.read_flow(clip_dir / "flows" / f"fwd_{t:05d}.bvfl"))
        bwd.append(flowwarp.read_flow(clip_dir / "flows" / f"bwd_{t:05d}.bvfl"))
        masks.append(flowwarp.read_mask(clip_dir / "flows" / f"mask_{t:05d}.png"))
    h, w = clean.shape[1:3]
    stack = lambda xs, shape, dt: np.stack(xs).astype(dt) if xs else np.zeros(shape, dt)
    return ClipPair(
        clean=clean,
        corrupted=corrupted,
        overlay_alpha=alpha,
        forward_flows=stack(fwd, (0, h, w, 2), np.float32),
        backward_flows=stack(bwd, (0, h, w, 2), np.float32),
        masks=stack(masks, (0, h, w), np.uint8),
        seed=seed,
        caption_schedule=schedule or [],
    )


def write_corpus(n_clips: int, root, seed: int, cfg: GenConfig | None = None) -> CorpusManifest:
    """Generate ``n_clips`` clips under ``root`` and write the manifest last.

    Re-running with the same seed and config rewrites identical files; an
    existing manifest with a different seed or config is refused.
    """
    cfg = cfg or GenConfig()
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {root}: {exc}") from exc
    if not os.access(root, os.W_OK):
        raise PermissionError(f"corpus directory {root} is not writable")
    if (root / MANIFEST_NAME).exists():
        old = load_manifest(root)
        if old.seed != seed or old.gen_config != cfg or len(old.clips) != n_clips:
            raise FileExistsError(f"{root} already holds a corpus with seed={old.seed}; refusing to mix corpora")

    entries = []
    for i, s in enumerate(clip_seeds(seed, n_clips)):
        clip = generate_clip(s, cfg)
        clip_id = f"clip_{i:04d}"
        write_clip(clip, root / clip_id)
        entries.append(ManifestEntry(clip_id, s, clip.length, clip.caption_schedule))
    manifest = CorpusManifest(root=root, seed=seed, gen_config=cfg, clips=entries)
    tmp = root / (MANIFEST_NAME + ".tmp")
    tmp.write_text(manifest.to_text())
    os.replace(tmp, root / MANIFEST_NAME)
    return manifest


def load_corpus(root) -> tuple[CorpusManifest, list]:
    """Read the manifest and every clip it lists (missing frames raise)."""
    manifest = load_manifest(root)
    clips = [read_clip(Path(manifest.root) / e.clip_id, e.seed, e.schedule) for e in manifest.clips]
    for e, c in zip(manifest.clips, clips):
        if c.length != e.length:
            raise ValueError(f"{e.clip_id}: expected {e.length} frames, found {c.length}")
    return manifest, clips


def file_digest(root) -> str:
    """SHA-256 over every file under ``root`` (path + bytes), in sorted order."""
    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
