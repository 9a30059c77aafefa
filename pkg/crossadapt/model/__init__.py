"""Prediction models: tables, interaction networks, losses, optimizer, checkpoints."""

from crossadapt.model.core import (
    ArchKind,
    EmbeddingTable,
    ForwardCache,
    GradientSet,
    InteractionNet,
    ModelSpec,
    PredictionModel,
    backward,
    clone_frozen,
    forward,
    init_model,
    predict,
    with_embedding,
)
from crossadapt.model.losses import LossTerms, bce_loss, distill_objective, kd_loss
from crossadapt.model.optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "ArchKind",
    "EmbeddingTable",
    "ForwardCache",
    "GradientSet",
    "InteractionNet",
    "LossTerms",
    "ModelSpec",
    "PredictionModel",
    "adam_step",
    "backward",
    "bce_loss",
    "clone_frozen",
    "distill_objective",
    "forward",
    "init_model",
    "kd_loss",
    "predict",
    "with_embedding",
]
