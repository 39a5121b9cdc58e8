"""Randomised small instances for finite-difference gradient checks.

Each case builder takes a seed and returns ``(loss_fn, params)`` where
``loss_fn()`` rebuilds the scalar loss from the current parameter data and
``params`` is a list of float64 leaf tensors.
"""
import numpy as np

from oracles import numeric_grad, rel_error
from tshn.distiller import forward_corrected_ce, smoothed_ce
from tshn.evalbench import gce_loss, mae_loss
from tshn.gradnet import (MLP, EmbeddingNetwork, Tensor, conv2d, cosine_similarity, cross_entropy,
                          dropout, log_softmax, net_config, softmax)
from tshn.protomind import teacher_losses

F64 = np.float64


def _leaf(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=F64)


def _stochastic(rng, n):
    c = rng.uniform(0.05, 1.0, (n, n))
    return c / c.sum(1, keepdims=True)


def case_conv2d(seed):
    rng = np.random.default_rng(seed)
    x, w, b = _leaf(rng, 2, 3, 7, 2), _leaf(rng, 3, 2, 2, 3), _leaf(rng, 3)
    wt = rng.standard_normal((2, 2, 5, 3))
    return lambda: (conv2d(x, w, b) * wt).sum(), [x, w, b]


def case_dense_relu(seed):
    rng = np.random.default_rng(seed)
    x, w, b = _leaf(rng, 4, 5), _leaf(rng, 5, 3), _leaf(rng, 3)
    wt = rng.standard_normal((4, 3))
    return lambda: ((x @ w + b).relu() * wt).sum(), [x, w, b]


def case_dropout(seed):
    rng = np.random.default_rng(seed)
    x = _leaf(rng, 3, 6)
    wt = rng.standard_normal((3, 6))
    # fresh generator per call so the mask is fixed across evaluations
    return lambda: (dropout(x, 0.4, np.random.default_rng(seed), True) * wt).sum(), [x]


def case_softmax(seed):
    rng = np.random.default_rng(seed)
    x = _leaf(rng, 3, 5)
    wt = rng.standard_normal((3, 5))
    return lambda: (softmax(x) * wt).sum() + (log_softmax(x) * wt).sum(), [x]


def case_elementwise(seed):
    rng = np.random.default_rng(seed)
    a = _leaf(rng, 3, 4)
    b = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True, dtype=F64)
    def f():
        y = (a * b - a / b + b ** 1.5 + b.log() + (a * 0.3).exp() + a.abs()).mean(axis=0)
        return (y * y).sum() + a[1:, 2].sum() + a.reshape(12).T.sum() + b.clamp_min(1.0).sum()
    return f, [a, b]


def case_cosine(seed):
    rng = np.random.default_rng(seed)
    a, b = _leaf(rng, 4, 6), _leaf(rng, 3, 6)
    wt = rng.standard_normal((4, 3))
    return lambda: (cosine_similarity(a, b) * wt).sum() + cosine_similarity(a[0], b[1]), [a, b]


def case_embedding_net(seed):
    rng = np.random.default_rng(seed)
    cfg = net_config(3, length=16, conv1_filters=2, conv2_filters=2, feat_dim=4, dropout=0.0)
    net = EmbeddingNetwork(cfg, seed=seed, dtype=F64)
    for p in net.parameters():
        p.data = p.data + rng.normal(0, 0.1, p.shape)
    x = rng.standard_normal((2, 2, 16))
    y = rng.integers(0, 3, 2)
    def f():
        z, logits = net.forward(x, train=False)
        return cross_entropy(logits, y, reduction="sum") + 0.1 * (z * z).sum()
    return f, net.parameters()


def case_mlp(seed):
    rng = np.random.default_rng(seed)
    net = MLP(5, [6, 4], 3, seed=seed, dtype=F64)
    for p in net.parameters():
        # zero biases would put pre-activations exactly on the ReLU kink
        p.data = p.data + rng.normal(0, 0.1, p.shape)
    x = rng.standard_normal((4, 5))
    y = rng.integers(0, 3, 4)
    return lambda: cross_entropy(net.forward(x)[1], y), net.parameters()


def _logits_case(loss):
    def build(seed):
        rng = np.random.default_rng(seed)
        z = _leaf(rng, 5, 4, scale=1.5)
        y = rng.integers(0, 4, 5)
        return loss(z, y, rng), [z]
    return build


case_ce = _logits_case(lambda z, y, rng: lambda: cross_entropy(z, y))
case_smoothed_ce = _logits_case(lambda z, y, rng: lambda: smoothed_ce(z, y, 0.5))
case_mae = _logits_case(lambda z, y, rng: lambda: mae_loss(z, y))
case_gce = _logits_case(lambda z, y, rng: lambda: gce_loss(z, y, q=0.7))


def case_forward_corrected(seed):
    rng = np.random.default_rng(seed)
    z = _leaf(rng, 5, 4, scale=1.5)
    y = rng.integers(0, 4, 5)
    c = _stochastic(rng, 4)
    return lambda: forward_corrected_ce(z, y, c), [z]


def case_teacher_loss(seed):
    rng = np.random.default_rng(seed)
    zt, zu = _leaf(rng, 4, 3), _leaf(rng, 6, 3)
    yt, yu = rng.integers(0, 3, 4), rng.integers(0, 3, 6)
    conf = rng.uniform(0, 1, 6)
    conf[0] = 0.9  # at least one row survives the mask
    eta = np.where(conf > 0.5, conf, 0.0)
    return lambda: teacher_losses(zt, yt, zu, yu, eta)[2], [zt, zu]


LAYER_CASES = {
    "conv2d": case_conv2d,
    "dense_relu": case_dense_relu,
    "dropout": case_dropout,
    "softmax": case_softmax,
    "elementwise": case_elementwise,
    "cosine": case_cosine,
    "embedding_net": case_embedding_net,
    "mlp": case_mlp,
}

LOSS_CASES = {
    "ce": case_ce,
    "smoothed_ce": case_smoothed_ce,
    "forward_corrected_ce": case_forward_corrected,
    "mae": case_mae,
    "gce": case_gce,
    "teacher_loss": case_teacher_loss,
}


def max_grad_error(build, seed, h=1e-5):
    f, params = build(seed)
    for p in params:
        p.grad = None
    f().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        num = numeric_grad(lambda: float(f().data), p.data, h)
        worst = max(worst, rel_error(g, num))
    return worst
