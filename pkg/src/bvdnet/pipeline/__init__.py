"""Training, inference, checkpoints, configuration and the CLI."""
from .checkpoint import Checkpoint, CheckpointError, ConfigMismatchError, load_checkpoint, save_checkpoint
from .config import ABLATIONS, InferenceConfig, RunConfig, TrainConfig, resolve_config
from .inference import copy_back, infer_clip
from .training import TrainingDiverged, train
