"""View-invariant action classification with view-query feature gating and
opposing triplet losses, in numpy (numba-accelerated kernels)."""
from ._accel import backend
from .dataset import LabelSpace, DatasetManifest, SynthConfig, synth_generate, split_loco, load_manifest
from .losses import LossWeights, LossBreakdown
from .model import ArchConfig, forward
from .trainer import TrainConfig, train, gradient_check
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint
from .evaluator import evaluate, run_loco, topk_accuracy, confusion_matrix

__version__ = "0.1.0"
