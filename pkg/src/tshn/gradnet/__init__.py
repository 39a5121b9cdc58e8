"""Small numpy autodiff core: tensors, conv/dense layers, losses, optimizers."""
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .functional import cosine_similarity, cross_entropy, nll, one_hot
from .layers import MLP, EmbeddingNetwork, Module, NetConfig, PRESETS, dropout, net_config, predict
from .optim import SGD, Adam, Optimizer, make_optimizer
from .tensor import Tensor, conv2d, log_softmax, no_grad, softmax, tensor


def backward(loss: Tensor, params=None):
    """Run backprop from ``loss``; with ``params`` given, parameters off the
    loss path end up with an all-zero gradient rather than ``None``."""
    if params is not None:
        for p in params:
            if p.grad is None:
                p.zero_grad()
    loss.backward()
    return params


def forward(net, x, train_mode=False):
    return net.forward(x, train=train_mode)


def step(optimizer: Optimizer):
    optimizer.step()
    return optimizer


__all__ = [
    "Adam", "EmbeddingNetwork", "MLP", "Module", "NetConfig", "Optimizer", "PRESETS", "SGD", "Tensor",
    "backward", "conv2d", "cosine_similarity", "cross_entropy", "dropout", "forward", "load_checkpoint",
    "log_softmax", "make_optimizer", "net_config", "nll", "no_grad", "one_hot", "predict", "read_checkpoint",
    "save_checkpoint", "softmax", "step", "tensor",
]
