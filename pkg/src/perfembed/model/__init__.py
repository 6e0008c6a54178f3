"""Graph-transformer embedding model (numpy, manual gradients) and training."""
from .network import (N_PROFILE, N_TARGETS, Batch, ModelConfig, ModelError, ModelParams, backward_batch, forward,
                      forward_batch, init_model, input_width, loss_and_grads, mae_loss, make_batch, param_shapes)
from .training import (MODEL_FORMAT, LayoutVersionError, ModelFileError, Sample, TrainConfig, TrainedModel,
                       load_model, save_model, train)

loss = mae_loss

__all__ = [
    "N_PROFILE", "N_TARGETS", "Batch", "ModelConfig", "ModelError", "ModelParams", "backward_batch", "forward",
    "forward_batch", "init_model", "input_width", "loss", "loss_and_grads", "mae_loss", "make_batch",
    "param_shapes", "MODEL_FORMAT", "LayoutVersionError", "ModelFileError", "Sample", "TrainConfig",
    "TrainedModel", "load_model", "save_model", "train",
]
