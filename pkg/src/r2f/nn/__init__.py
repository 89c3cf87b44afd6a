"""Fixed-point CNN execution (device side) and float training (server side)."""
from .forward import IDENTITY, MacHook, float_forward, layer_forward, model_forward, predict
from .model import (FloatModel, Kind, Layer, QuantModel, avgpool, conv, dequantize_model, fc,
                    flatten, init_float_model, maxpool, quantize_model, relu, residual_add,
                    softmax_loss)
from .quant import dequantize, quantize, requantize
from .serialize import load_float_model, model_from_bytes, model_to_bytes, save_float_model
from .train import SGD, backward, loss_forward, sgd_update

__all__ = [
    "IDENTITY", "MacHook", "float_forward", "layer_forward", "model_forward", "predict",
    "FloatModel", "Kind", "Layer", "QuantModel", "avgpool", "conv", "dequantize_model", "fc",
    "flatten", "init_float_model", "maxpool", "quantize_model", "relu", "residual_add",
    "softmax_loss", "dequantize", "quantize", "requantize", "load_float_model",
    "model_from_bytes", "model_to_bytes", "save_float_model", "SGD", "backward",
    "loss_forward", "sgd_update",
]
