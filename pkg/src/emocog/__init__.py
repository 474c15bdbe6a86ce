"""Dual-stream multimodal bridge for emotion and cognition captioning.

A numpy reverse-mode autodiff core, query-transformer fusion streams,
contrastive objectives, a small frozen caption decoder, synthetic data,
the two-stage trainer, and caption / embedding metrics.
"""

from .bridgenet import BridgeParams, ModalityMask, ModelDims, bridge_forward, bridge_forward_batch, init_bridge
from .data import SyntheticConfig, generate_synthetic, load_features, save_dataset
from .losses import cognition_contrastive_loss, emotion_contrastive_loss, stage1_loss
from .tensor import Tensor, backward, grad_check, no_grad
from .trainer import Model, TrainConfig, train_stage1, train_stage2

__version__ = "0.1.0"
