from .layers import (
    Concat,
    Conv2d,
    Dropout,
    Flatten,
    GlobalMaxPool,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
    Upsample2x,
)
from .losses import class_balanced_cross_entropy, softmax_cross_entropy
from .optim import Adam
from .graph import NetGraph
from .gradcheck import GradCheckReport, check_graph, gradient_check

__all__ = [
    "Adam",
    "Concat",
    "Conv2d",
    "Dropout",
    "Flatten",
    "GlobalMaxPool",
    "GradCheckReport",
    "Layer",
    "Linear",
    "MaxPool2d",
    "NetGraph",
    "ReLU",
    "Upsample2x",
    "check_graph",
    "class_balanced_cross_entropy",
    "gradient_check",
    "softmax_cross_entropy",
]
