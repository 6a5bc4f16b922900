"""From-scratch adversarial training with channel-wise activation suppression."""

from .tensor import Tape, Tensor, backward, grad_check
from .model import (ActivationRecord, CASModule, ModelConfig, Parameters, cas_forward,
                    gap, init_params, model_forward, small_conv_net)
from .losses import (LossConfig, bce_mart, cas_loss, combined_loss, cross_entropy,
                     cw_margin, kl_div, mart_cas_loss, trades_cas_loss)
from .attacks import AttackConfig, adaptive_joint_attack, cw_pgd, fgsm, pgd, project_linf
from .analysis import (ChannelProfile, compare_profiles, export_features,
                       frequency_profile, magnitude_profile, uniformity)
from .data import BatchPlan, Dataset, batch_iter, load_cifar10_binary, load_mnist_idx
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DataConfig, ExperimentConfig, OptimizerConfig
from .train import SGD, natural_accuracy, robust_accuracy, train_model

__version__ = "0.1.0"
