"""Deep tensor factorization over the *_M-product algebra."""

from tubalnet.backprop import Gradients, backward, finite_difference_check
from tubalnet.network import NetworkParams, forward, init_params
from tubalnet.tensor import TransformMatrix, facewise_product, m_product, mode3_product, t_transpose
from tubalnet.training import TrainConfig, random_missing_mask, rmse, train_completion
from tubalnet.transform import dct_transform, identity_transform, random_orthogonal_transform

__all__ = [
    "Gradients",
    "NetworkParams",
    "TrainConfig",
    "TransformMatrix",
    "backward",
    "dct_transform",
    "facewise_product",
    "finite_difference_check",
    "forward",
    "identity_transform",
    "init_params",
    "m_product",
    "mode3_product",
    "random_missing_mask",
    "random_orthogonal_transform",
    "rmse",
    "t_transpose",
    "train_completion",
]
