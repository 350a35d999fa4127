from .tensor import (ComputationTape, DimensionError, NonFiniteError, Tensor, UsageError,
                     backward)
from .ops import (BatchNormState, DegenerateBatchError, LabelError, add, batch_norm2d, conv2d,
                  global_avg_pool, linear, log_softmax, max_pool2, relu, softmax_cross_entropy,
                  square_loss, tsum)
from .optim import OptimizerState, sgd_step, zero_grads

__all__ = [
    "ComputationTape", "DimensionError", "NonFiniteError", "Tensor", "UsageError", "backward",
    "BatchNormState", "DegenerateBatchError", "LabelError", "add", "batch_norm2d", "conv2d",
    "global_avg_pool", "linear", "log_softmax", "max_pool2", "relu", "softmax_cross_entropy",
    "square_loss", "tsum", "OptimizerState", "sgd_step", "zero_grads",
]
