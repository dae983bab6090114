"""Transformer delta classifier: attention kernels, network, training, checkpoints."""

from .attention import HlshConfig, OpCounter, full_attention, hlsh_attention
from .checkpoint import load, save
from .features import FeatureSchema, embed_sequence
from .gradcheck import gradient_check
from .network import (
    Attention,
    Model,
    ModelConfig,
    Quant,
    choose_attention,
    classify,
    encoder_forward,
    predict_proba,
    predict_topk,
    quantize,
)
from .train import TrainConfig, evaluate_top1, train

__all__ = [
    "Attention",
    "FeatureSchema",
    "HlshConfig",
    "Model",
    "ModelConfig",
    "OpCounter",
    "Quant",
    "TrainConfig",
    "choose_attention",
    "classify",
    "embed_sequence",
    "encoder_forward",
    "evaluate_top1",
    "full_attention",
    "gradient_check",
    "hlsh_attention",
    "load",
    "predict_proba",
    "predict_topk",
    "quantize",
    "save",
    "train",
]
