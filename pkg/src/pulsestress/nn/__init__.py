"""From-scratch tensor engine: layers, the two model variants, Adam, and
gradient checking."""

from .adam import adam_step
from .checkpoint import load_model, save_model
from .gradcheck import gradient_check
from .layers import softmax, weighted_cce
from .model import (
    CONCAT_WIDTH,
    EXPECTED_LENGTHS,
    EXPECTED_PARAM_COUNTS,
    FLATTEN_WIDTH,
    N_FEATURES,
    SEGMENT_LEN,
    ForwardTrace,
    ModelState,
    backward,
    build_model,
    forward,
    layer_parameter_counts,
    predict,
)

__all__ = [
    "CONCAT_WIDTH",
    "EXPECTED_LENGTHS",
    "EXPECTED_PARAM_COUNTS",
    "FLATTEN_WIDTH",
    "N_FEATURES",
    "SEGMENT_LEN",
    "ForwardTrace",
    "ModelState",
    "adam_step",
    "backward",
    "build_model",
    "forward",
    "gradient_check",
    "layer_parameter_counts",
    "load_model",
    "predict",
    "save_model",
    "softmax",
    "weighted_cce",
]
