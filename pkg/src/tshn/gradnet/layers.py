"""Layers and the shared conv embedding network."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeError
from .functional import softmax
from .tensor import Tensor, conv2d, no_grad


def _uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout; identity in eval mode."""
    if not train or rate <= 0:
        return x
    # byte-quantised keep probability; scaling uses the quantised value so the
    # expectation is preserved exactly
    cut = int(round(rate * 256))
    keep_p = 1.0 - cut / 256
    if keep_p <= 0:
        return x * 0.0
    u = np.frombuffer(rng.bytes(int(np.prod(x.shape))), dtype=np.uint8).reshape(x.shape)
    keep = (u >= cut).astype(x.dtype) * x.dtype.type(1.0 / keep_p)
    return x * keep


class Module:
    """Minimal parameter container: subclasses fill ``self.params``."""

    params: dict[str, Tensor]

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        for k, v in state.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k}")
            if v.shape != self.params[k].shape:
                raise ShapeError(f"{k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.params[k].dtype)

    def copy(self):
        return copy.deepcopy(self)


@dataclass
class NetConfig:
    n_classes: int
    length: int = 128
    conv1_filters: int = 32
    conv1_kernel: tuple = (1, 3)
    conv2_filters: int = 16
    conv2_kernel: tuple = (2, 3)
    feat_dim: int = 64
    dropout: float = 0.5
    padding: str = "valid"

    def to_dict(self):
        d = asdict(self)
        d["conv1_kernel"] = list(self.conv1_kernel)
        d["conv2_kernel"] = list(self.conv2_kernel)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["conv1_kernel"] = tuple(d.get("conv1_kernel", (1, 3)))
        d["conv2_kernel"] = tuple(d.get("conv2_kernel", (2, 3)))
        return cls(**d)


PRESETS = {
    "desk": dict(conv1_filters=32, conv2_filters=16, feat_dim=64, dropout=0.2),
    "paper": dict(conv1_filters=256, conv2_filters=80, feat_dim=256, dropout=0.5),
}


def net_config(n_classes, length=128, preset="desk", **overrides) -> NetConfig:
    return NetConfig(n_classes=n_classes, length=length, **{**PRESETS[preset], **overrides})


class EmbeddingNetwork(Module):
    """CNN2-style network over the 2 x L IQ plane.

    conv(1 x 3) -> relu -> dropout -> conv(2 x 3) -> relu -> dropout
    -> dense_feat -> relu  (= features z)
    -> dropout -> dense_out  (= logits)

    Convolutions are valid (no padding), stride 1.
    """

    def __init__(self, cfg: NetConfig, seed=0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng([seed, 1])
        init = np.random.default_rng([seed, 0])
        k1h, k1w = cfg.conv1_kernel
        k2h, k2w = cfg.conv2_kernel
        h1, w1 = 2 - k1h + 1, cfg.length - k1w + 1
        h2, w2 = h1 - k2h + 1, w1 - k2w + 1
        if min(h1, w1, h2, w2) < 1:
            raise ShapeError("kernels do not fit the input plane")
        flat = cfg.conv2_filters * h2 * w2
        f1, f2, fd = cfg.conv1_filters, cfg.conv2_filters, cfg.feat_dim
        self.flat_dim = flat
        self.params = {
            "conv1.w": Tensor(_uniform(init, (f1, 1, k1h, k1w), k1h * k1w, dtype), True, "conv1.w"),
            "conv1.b": Tensor(np.zeros(f1, dtype), True, "conv1.b"),
            "conv2.w": Tensor(_uniform(init, (f2, f1, k2h, k2w), f1 * k2h * k2w, dtype), True, "conv2.w"),
            "conv2.b": Tensor(np.zeros(f2, dtype), True, "conv2.b"),
            "feat.w": Tensor(_uniform(init, (flat, fd), flat, dtype), True, "feat.w"),
            "feat.b": Tensor(np.zeros(fd, dtype), True, "feat.b"),
            "out.w": Tensor(_uniform(init, (fd, cfg.n_classes), fd, dtype), True, "out.w"),
            "out.b": Tensor(np.zeros(cfg.n_classes, dtype), True, "out.b"),
        }

    @property
    def n_classes(self):
        return self.cfg.n_classes

    def forward(self, x, train=False):
        """Return ``(features, logits)`` for a batch of shape (B, 2, L)."""
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        if x.ndim != 3 or x.shape[1] != 2 or x.shape[2] != self.cfg.length:
            raise ShapeError(f"expected (B, 2, {self.cfg.length}) input, got {x.shape}")
        p, rate = self.params, self.cfg.dropout
        h = Tensor(x[:, :, :, None].astype(self.dtype, copy=False))  # channels-last
        h = dropout(conv2d(h, p["conv1.w"], p["conv1.b"]).relu(), rate, self.rng, train)
        h = dropout(conv2d(h, p["conv2.w"], p["conv2.b"]).relu(), rate, self.rng, train)
        h = h.reshape(h.shape[0], -1)
        z = (h @ p["feat.w"] + p["feat.b"]).relu()
        logits = dropout(z, rate, self.rng, train) @ p["out.w"] + p["out.b"]
        return z, logits

    __call__ = forward


class MLP(Module):
    """Dense ReLU network on flat feature vectors; same ``forward`` contract."""

    def __init__(self, in_dim, hidden, n_classes, seed=0, dtype=np.float32, dropout_rate=0.0):
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng([seed, 1])
        self.dropout = dropout_rate
        self.cfg = NetConfig(n_classes=n_classes, length=in_dim, feat_dim=hidden[-1] if hidden else in_dim)
        init = np.random.default_rng([seed, 0])
        self.params = {}
        dims = [in_dim, *hidden]
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.params[f"h{i}.w"] = Tensor(_uniform(init, (a, b), a, dtype), True, f"h{i}.w")
            self.params[f"h{i}.b"] = Tensor(np.zeros(b, dtype), True, f"h{i}.b")
        self.n_hidden = len(hidden)
        self.params["out.w"] = Tensor(_uniform(init, (dims[-1], n_classes), dims[-1], dtype), True, "out.w")
        self.params["out.b"] = Tensor(np.zeros(n_classes, dtype), True, "out.b")

    @property
    def n_classes(self):
        return self.cfg.n_classes

    def forward(self, x, train=False):
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        h = Tensor(x.reshape(len(x), -1).astype(self.dtype, copy=False))
        for i in range(self.n_hidden):
            h = (h @ self.params[f"h{i}.w"] + self.params[f"h{i}.b"]).relu()
        logits = dropout(h, self.dropout, self.rng, train) @ self.params["out.w"] + self.params["out.b"]
        return h, logits

    __call__ = forward


def predict(net, x, batch_size=512):
    """Eval-mode ``(features, probabilities)`` as numpy arrays."""
    feats, probs = [], []
    with no_grad():
        for i in range(0, len(x), batch_size):
            z, logits = net.forward(x[i:i + batch_size], train=False)
            feats.append(z.data)
            probs.append(softmax(logits).data)
    if not feats:
        return np.zeros((0, net.cfg.feat_dim)), np.zeros((0, net.n_classes))
    return np.concatenate(feats), np.concatenate(probs)
