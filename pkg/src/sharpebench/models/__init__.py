from .checkpoint import ParamSet, load_params, save_params
from .layers import projection_head
from .net import SignalNet, build_model, embed_ticker, model_forward
from .spec import ARCHS, DISPLAY_NAMES, ModelSpec

__all__ = [
    "ARCHS", "DISPLAY_NAMES", "ModelSpec", "ParamSet", "SignalNet", "build_model",
    "embed_ticker", "load_params", "model_forward", "projection_head", "save_params",
]
