"""Run configuration: training/inference settings, the ablation grid and
flat ``key=value`` config files."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..losses import ALL_TERMS, LossWeights
from ..model import ModelConfig

SEED_ENV = "BVD_SEED"


@dataclass(frozen=True)
class Ablation:
    variant: str
    recurrence: bool
    terms: frozenset


# Rows of the architecture / loss / recurrence ablation.
ABLATIONS = {
    "exp1": Ablation("enc3d_dec3d", False, frozenset({"l1"})),
    "exp2": Ablation("enc2d_dec2d", False, frozenset({"l1"})),
    "exp3": Ablation("hybrid_3d2d", False, frozenset({"l1"})),
    "exp4": Ablation("hybrid_3d2d", False, frozenset({"l1", "grad_l1"})),
    "exp5": Ablation("hybrid_3d2d", False, frozenset({"l1", "grad_l1", "ssim"})),
    "exp6": Ablation("hybrid_3d2d", True, ALL_TERMS),
}


@dataclass(frozen=True)
class TrainConfig:
    # desk scale; the reference run used batch 128 for 200 epochs
    steps: int = 2000
    batch_size: int = 4
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    recurrence_steps: int = 5
    seed: int = 0
    checkpoint_every: int = 500
    ablation: str = "exp6"
    augment: bool = True
    temporal_target: str = "ground_truth"

    def __post_init__(self):
        if self.recurrence_steps < 1:
            raise ValueError("recurrence_steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; expected one of {sorted(ABLATIONS)}")
        if self.temporal_target not in ("ground_truth", "output"):
            raise ValueError("temporal_target must be 'ground_truth' or 'output'")


@dataclass(frozen=True)
class InferenceConfig:
    copy_threshold: float = 0.01
    emit_debug_features: bool = False
    output_root: str = ""
    batch_windows: int = 16

    def __post_init__(self):
        if not 0 <= self.copy_threshold < 1:
            raise ValueError("copy_threshold must lie in [0, 1)")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    loss: LossWeights
    infer: InferenceConfig

    def echo(self) -> str:
        m, t, l = self.model, self.train, self.loss
        lines = [
            f"ablation={t.ablation}",
            f"variant={m.variant}",
            f"recurrence={'on' if m.use_recurrence_stream else 'off'}",
            f"losses={','.join(sorted(l.enabled_terms))}",
            f"lambda_R={l.lambda_R} lambda_T={l.lambda_T}",
            f"N={m.temporal_radius} stride={m.sampling_stride} base_channels={m.base_channels}",
            f"steps={t.steps} batch_size={t.batch_size} lr={t.learning_rate} recurrence_steps={t.recurrence_steps} seed={t.seed}",
        ]
        return "\n".join(lines)


def parse_kv_text(text: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_kv_file(path) -> dict:
    return parse_kv_text(Path(path).read_text())


def _coerce(cls, kv: dict) -> dict:
    out = {}
    for f in fields(cls):
        if f.name not in kv:
            continue
        v = kv[f.name]
        if not isinstance(v, str):
            out[f.name] = v
        elif f.type == "bool":
            out[f.name] = v.lower() in ("1", "true", "yes", "on")
        elif f.type == "int":
            out[f.name] = int(v)
        elif f.type == "float":
            out[f.name] = float(v)
        else:
            out[f.name] = v
    return out


def ablation_configs(name: str, model: ModelConfig | None = None, loss: LossWeights | None = None):
    """Model and loss configs for one ablation row."""
    ab = ABLATIONS[name]
    model = replace(model or ModelConfig(), variant=ab.variant, use_recurrence_stream=ab.recurrence)
    loss = replace(loss or LossWeights(), enabled_terms=ab.terms)
    return model, loss


def resolve_config(file_kv: dict | None = None, overrides: dict | None = None, env: dict | None = None) -> RunConfig:
    """Merge config-file keys, the ``BVD_SEED`` environment variable and CLI overrides.

    Precedence, lowest first: dataclass defaults, ablation row, file keys,
    environment, explicit overrides.  Ablation rows fix the variant,
    recurrence and loss terms unless the file/overrides set them.
    """
    kv = dict(file_kv or {})
    env = os.environ if env is None else env
    if SEED_ENV in env:
        kv["seed"] = env[SEED_ENV]
    kv.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for cls in (TrainConfig, ModelConfig, LossWeights, InferenceConfig) for f in fields(cls)}
    unknown = sorted(set(kv) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")

    train = TrainConfig(**_coerce(TrainConfig, kv))
    model_base, loss_base = ablation_configs(train.ablation)
    model_kv = {f.name: getattr(model_base, f.name) for f in fields(ModelConfig)}
    model_kv.update({k: v for k, v in kv.items() if k in model_kv})
    model = ModelConfig.from_mapping(model_kv)

    loss_kv = _coerce(LossWeights, kv)
    if "enabled_terms" in kv:
        terms = kv["enabled_terms"]
        loss_kv["enabled_terms"] = frozenset(t.strip() for t in terms.split(",") if t.strip()) if isinstance(terms, str) else frozenset(terms)
    loss = replace(loss_base, **loss_kv)
    infer = InferenceConfig(**_coerce(InferenceConfig, kv))
    return RunConfig(model=model, train=train, loss=loss, infer=infer)


def train_config_text(cfg: TrainConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in asdict(cfg).items())
