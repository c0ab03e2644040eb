from .infer import EvalOutput, FeedbackResult, feedback_prop, feedback_prop_batch, predict, run_eval
from .losses import ce_loss, elementwise_ce, masked_loss
from .loop import NumericalError, TrainConfig, TrainResult, load_model, predict_batched, save_model, train
from .masking import known_group_states, sample_label_mask, training_states
from .optim import Adam, AdamW

__all__ = [
    "Adam",
    "AdamW",
    "EvalOutput",
    "FeedbackResult",
    "NumericalError",
    "TrainConfig",
    "TrainResult",
    "ce_loss",
    "elementwise_ce",
    "feedback_prop",
    "feedback_prop_batch",
    "known_group_states",
    "load_model",
    "masked_loss",
    "predict",
    "predict_batched",
    "run_eval",
    "sample_label_mask",
    "save_model",
    "train",
    "training_states",
]
