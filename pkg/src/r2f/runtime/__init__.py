"""Device and server loops of remote fault-aware retraining."""
from .config import STAGES, CostModel, StageTiming, TrainingConfig
from .device import Device, client_step
from .evaluate import evaluate
from .server import (RetrainResult, qat_finetune, reconstruct_activations, retrain,
                     server_step)

__all__ = [
    "STAGES", "CostModel", "StageTiming", "TrainingConfig", "Device", "client_step", "evaluate",
    "RetrainResult", "qat_finetune", "reconstruct_activations", "retrain", "server_step",
]
