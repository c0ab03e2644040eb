from .networks import (
    Backbone,
    Baseline,
    ModelConfig,
    RTran,
    backbone_forward,
    baseline_forward,
    build_model,
    export_embeddings,
    rtran_forward,
)
from .states import STATE_VALUES, quantize_rates, quantize_state, state_index, states_from_partial

__all__ = [
    "Backbone",
    "Baseline",
    "ModelConfig",
    "RTran",
    "STATE_VALUES",
    "backbone_forward",
    "baseline_forward",
    "build_model",
    "export_embeddings",
    "quantize_rates",
    "quantize_state",
    "rtran_forward",
    "state_index",
    "states_from_partial",
]
