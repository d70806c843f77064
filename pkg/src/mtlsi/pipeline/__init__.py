from .config import TASKS, ModelConfig, TaskSpec
from .data import Sample, boundary_from_segmentation, load_dataset, save_dataset, synth_dataset
from .losses import cross_entropy, l1, total_loss
from .model import MTLSINet, Predictions, backbone_forward, full_forward, fuse_inputs, preliminary_decode
from .train import Checkpoint, DivergenceError, TrainResult, evaluate, load_checkpoint, save_checkpoint, train

__all__ = [
    "TASKS", "ModelConfig", "TaskSpec", "Sample", "boundary_from_segmentation", "load_dataset",
    "save_dataset", "synth_dataset", "cross_entropy", "l1", "total_loss", "MTLSINet", "Predictions",
    "backbone_forward", "full_forward", "fuse_inputs", "preliminary_decode", "Checkpoint",
    "DivergenceError", "TrainResult", "evaluate", "load_checkpoint", "save_checkpoint", "train",
]
