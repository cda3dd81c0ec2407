from .layers import (
    LSTM,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    LstmCellParams,
    MaxPool1D,
    ReLU,
    conv1d_forward,
    dense_forward,
    dropout,
    lstm_forward,
    maxpool1d,
)
from .loss import l2_penalty, softmax, softmax_cross_entropy, softmax_cross_entropy_grad
from .optim import Adam
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "Adam",
    "Conv1D",
    "Dense",
    "Dropout",
    "Flatten",
    "GradCheckReport",
    "LSTM",
    "LstmCellParams",
    "MaxPool1D",
    "ReLU",
    "conv1d_forward",
    "dense_forward",
    "dropout",
    "grad_check",
    "l2_penalty",
    "lstm_forward",
    "maxpool1d",
    "softmax",
    "softmax_cross_entropy",
    "softmax_cross_entropy_grad",
]
