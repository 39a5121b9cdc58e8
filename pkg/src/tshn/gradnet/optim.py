from __future__ import annotations

import numpy as np

from ..errors import FaultReport


class Optimizer:
    """Base optimizer over a ``{name: Tensor}`` parameter store."""

    kind = "base"

    def __init__(self, params: dict, lr: float):
        self.params = params
        self.lr = lr
        self.t = 0

    def _check(self):
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FaultReport(name, f"non-finite gradient for parameter {name}")

    def step(self):
        self._check()
        self.t += 1
        for name, p in self.params.items():
            if p.grad is not None:
                self._update(name, p)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {}

    def load_state(self, state: dict[str, np.ndarray]):
        pass

    def hyper(self) -> dict:
        return {"lr": self.lr}


class SGD(Optimizer):
    kind = "sgd"

    def __init__(self, params, lr=0.01, momentum=0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self.buf = {k: np.zeros_like(v.data) for k, v in params.items()} if momentum else {}

    def _update(self, name, p):
        g = p.grad
        if self.momentum:
            self.buf[name] = self.momentum * self.buf[name] + g
            g = self.buf[name]
        p.data -= (self.lr * g).astype(p.dtype)

    def state(self):
        return {f"buf.{k}": v for k, v in self.buf.items()}

    def load_state(self, state):
        for k in self.buf:
            self.buf[k] = np.array(state[f"buf.{k}"], dtype=self.buf[k].dtype)

    def hyper(self):
        return {"lr": self.lr, "momentum": self.momentum}


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def _update(self, name, p):
        g = p.grad
        if self.weight_decay:
            g = g + self.weight_decay * p.data
        m = self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
        v = self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
        mhat = m / (1 - self.b1 ** self.t)
        vhat = v / (1 - self.b2 ** self.t)
        p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)

    def state(self):
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, state):
        for k in self.m:
            self.m[k] = np.array(state[f"m.{k}"], dtype=self.m[k].dtype)
            self.v[k] = np.array(state[f"v.{k}"], dtype=self.v[k].dtype)

    def hyper(self):
        return {"lr": self.lr, "betas": [self.b1, self.b2], "eps": self.eps,
                "weight_decay": self.weight_decay}


def make_optimizer(kind: str, params: dict, **hyper) -> Optimizer:
    if kind == "adam":
        if "betas" in hyper:
            hyper["betas"] = tuple(hyper["betas"])
        return Adam(params, **hyper)
    if kind == "sgd":
        return SGD(params, **hyper)
    raise ValueError(f"unknown optimizer {kind!r}")
