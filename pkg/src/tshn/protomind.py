"""Prototype teacher: episodes, prototype bank, soft labels, confidence and mask."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import MissingClass, NeedTwoClasses, NotWarmedUp, ShapeError, ShotsReduced, UnknownSample
from .gradnet import Tensor, cross_entropy

NEG_COSINE = "neg_cosine"
ONE_MINUS_COSINE = "one_minus_cosine"


@dataclass(frozen=True)
class EpisodeSpec:
    ways: int = 8  # J
    shots: int = 5  # I
    queries: int = 15  # H, trusted queries per class
    untrusted: int = 64  # W

    def __post_init__(self):
        if self.shots < 1 or self.queries < 1:
            raise ValueError("shots and queries must be >= 1")
        if self.untrusted < 0:
            raise ValueError("untrusted query size must be >= 0")


@dataclass
class Episode:
    classes: np.ndarray
    support: np.ndarray  # indices into the trusted pool
    query: np.ndarray  # indices into the trusted pool
    untrusted: np.ndarray  # indices into the untrusted pool


class EpisodeSampler:
    """Draws J-way I-shot episodes from a trusted pool plus an untrusted batch.

    Classes with fewer than I + H trusted samples get reduced shots/queries
    (support and query stay disjoint); one ``ShotsReduced`` warning is issued
    per such class when the sampler is built.
    """

    def __init__(self, trusted_labels, n_untrusted: int, spec: EpisodeSpec, n_classes: int | None = None):
        labels = np.asarray(trusted_labels, dtype=np.int64)
        self.spec = spec
        self.n_untrusted = int(n_untrusted)
        self.n_classes = n_classes or int(labels.max()) + 1
        self.by_class = {c: np.flatnonzero(labels == c) for c in range(self.n_classes)}
        self.available = np.array([c for c, idx in self.by_class.items() if len(idx)], dtype=np.int64)
        if spec.ways < 2:
            raise NeedTwoClasses("an episode needs at least two classes")
        if spec.ways > self.n_classes:
            raise ValueError(f"ways={spec.ways} exceeds {self.n_classes} classes")
        if len(self.available) < spec.ways:
            raise NeedTwoClasses(f"only {len(self.available)} classes have trusted samples")
        self.plan = {}
        for c, idx in self.by_class.items():
            n = len(idx)
            if n == 0:
                continue
            shots = min(spec.shots, max(1, n - 1))
            queries = min(spec.queries, n - shots)
            self.plan[c] = (shots, queries)
            if n < spec.shots + spec.queries:
                warnings.warn(ShotsReduced(c, shots, queries, n), stacklevel=2)

    def sample(self, rng: np.random.Generator) -> Episode:
        J = self.spec.ways
        classes = self.available if J == len(self.available) else np.sort(rng.choice(self.available, J, replace=False))
        support, query = [], []
        for c in classes:
            shots, queries = self.plan[int(c)]
            pick = rng.permutation(self.by_class[int(c)])[:shots + queries]
            support.append(pick[:shots])
            query.append(pick[shots:])
        W = min(self.spec.untrusted, self.n_untrusted)
        unt = rng.choice(self.n_untrusted, W, replace=False) if W else np.zeros(0, np.int64)
        return Episode(classes, np.concatenate(support), np.concatenate(query), np.sort(unt))


def sample_episode(trusted_labels, n_untrusted, spec: EpisodeSpec, rng, n_classes=None) -> Episode:
    return EpisodeSampler(trusted_labels, n_untrusted, spec, n_classes).sample(rng)


def compute_prototypes(features, labels, classes=None) -> dict[int, np.ndarray]:
    """Per-class mean feature vector."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    classes = np.unique(labels) if classes is None else classes
    out = {}
    for c in classes:
        m = labels == c
        if not m.any():
            raise MissingClass(f"class {c} has no support features")
        out[int(c)] = features[m].mean(axis=0)
    return out


@dataclass
class PrototypeBank:
    n_classes: int
    dim: int
    xi: float = 0.3
    update_interval: int = 5
    warmup_episodes: int = 50

    def __post_init__(self):
        if not 0 < self.xi <= 1:
            raise ValueError("xi must be in (0, 1]")
        self.protos = np.zeros((self.n_classes, self.dim))
        self.initialized = np.zeros(self.n_classes, dtype=bool)

    @property
    def ready(self) -> bool:
        return bool(self.initialized.all())

    def due(self, episode: int) -> bool:
        """Whether prototypes are (re)computed at this 0-based episode."""
        return episode >= self.warmup_episodes and (episode - self.warmup_episodes) % self.update_interval == 0

    def update(self, new_protos: dict[int, np.ndarray]) -> "PrototypeBank":
        return ema_update_prototypes(self, new_protos)


def ema_update_prototypes(bank: PrototypeBank, new_protos: dict[int, np.ndarray]) -> PrototypeBank:
    """``P_c <- xi * P_new + (1 - xi) * P_c``; a class seen for the first time takes ``P_new``."""
    for c, p in new_protos.items():
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (bank.dim,):
            raise ShapeError(f"prototype for class {c} has shape {p.shape}, expected ({bank.dim},)")
        if bank.initialized[c]:
            bank.protos[c] = bank.xi * p + (1 - bank.xi) * bank.protos[c]
        else:
            bank.protos[c] = p
            bank.initialized[c] = True
    return bank


def soft_label(features, bank, scale: float = 1.0, distance: str = NEG_COSINE) -> np.ndarray:
    """Softmax over ``-dist(feature, P_c)`` with a cosine-based distance.

    ``neg_cosine`` uses ``dist = -cos``; ``one_minus_cosine`` uses
    ``1 - cos``, which differs by a constant and gives the same result.
    ``scale`` multiplies the similarities before the softmax. ``bank`` is a
    ``PrototypeBank`` or an (N, F) prototype array. Accepts one feature
    vector or a batch.
    """
    if isinstance(bank, PrototypeBank):
        if not bank.ready:
            raise NotWarmedUp("prototype bank not initialised for every class")
        protos = bank.protos
    else:
        protos = np.asarray(bank, dtype=np.float64)
    f = np.asarray(features, dtype=np.float64)
    single = f.ndim == 1
    f = np.atleast_2d(f)
    fn = np.linalg.norm(f, axis=1, keepdims=True)
    pn = np.linalg.norm(protos, axis=1, keepdims=True)
    # zero vectors get similarity 0 to everything rather than NaN
    cos = (f / np.where(fn > 0, fn, 1.0)) @ (protos / np.where(pn > 0, pn, 1.0)).T
    cos = np.clip(cos, -1.0, 1.0)
    if distance == NEG_COSINE:
        dist = -cos
    elif distance == ONE_MINUS_COSINE:
        dist = 1.0 - cos
    else:
        raise ValueError(f"unknown distance {distance!r}")
    logits = -scale * dist
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


@dataclass
class ConfidenceState:
    """EMA-tracked label confidence for every untrusted sample, keyed by id."""

    ids: np.ndarray
    mu: float = 0.6
    delta: float = 0.5
    initial: float = 0.0

    def __post_init__(self):
        if not (0 < self.mu < 1 and 0 < self.delta < 1):
            raise ValueError("mu and delta must lie in (0, 1)")
        self.ids = np.asarray(self.ids)
        self.c = np.full(len(self.ids), float(self.initial))
        self.visits = np.zeros(len(self.ids), dtype=np.int64)
        self._pos = {int(i): k for k, i in enumerate(self.ids.tolist())}

    def index_of(self, sample_id) -> int:
        try:
            return self._pos[int(sample_id)]
        except KeyError:
            raise UnknownSample(sample_id) from None

    def update_rows(self, rows, soft_labels, observed_labels):
        """Vectorised update for pool positions ``rows``."""
        rows = np.asarray(rows, dtype=np.int64)
        p = np.atleast_2d(soft_labels)
        agree = p[np.arange(len(rows)), np.asarray(observed_labels, dtype=np.int64)]
        self.c[rows] = self.mu * self.c[rows] + (1 - self.mu) * agree
        np.clip(self.c, 0.0, 1.0, out=self.c)
        self.visits[rows] += 1
        return self

    def snapshot(self) -> dict[int, float]:
        return {int(i): float(c) for i, c in zip(self.ids.tolist(), self.c.tolist())}

    def to_csv(self, path, soft_argmax=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "confidence", "soft_label_argmax"])
            for k, (i, c) in enumerate(zip(self.ids.tolist(), self.c.tolist())):
                w.writerow([i, repr(c), "" if soft_argmax is None else int(soft_argmax[k])])


def update_confidence(state: ConfidenceState, sample_id, soft, observed_onehot) -> ConfidenceState:
    """``c <- mu * c + (1 - mu) * p^T y`` for one sample."""
    k = state.index_of(sample_id)
    agree = float(np.dot(np.asarray(soft, dtype=np.float64), np.asarray(observed_onehot, dtype=np.float64)))
    state.c[k] = min(1.0, max(0.0, state.mu * state.c[k] + (1 - state.mu) * agree))
    state.visits[k] += 1
    return state


def mask_weights(confidence, delta: float = 0.5):
    """``eta_i = c_i if c_i > delta else 0``; returns ``(eta, W')``."""
    c = confidence.c if isinstance(confidence, ConfidenceState) else np.asarray(confidence, dtype=np.float64)
    eta = np.where(c > delta, c, 0.0)
    return eta, int(np.count_nonzero(eta))


def teacher_losses(trusted_logits: Tensor, trusted_labels, untrusted_logits: Tensor | None = None,
                   untrusted_labels=None, eta=None):
    """``(L_t, L_ur, L_cls)`` for one episode.

    L_t is the summed CE over the U + V trusted samples, L_ur the
    mask-weighted CE sum over the untrusted query, and
    ``L_cls = (L_t + L_ur) / (U + V + W')``.
    """
    l_t = cross_entropy(trusted_logits, trusted_labels, reduction="sum")
    n = len(trusted_labels)
    w_prime = 0
    if untrusted_logits is not None and eta is not None and len(eta):
        eta = np.asarray(eta, dtype=np.float64)
        w_prime = int(np.count_nonzero(eta))
        keep = np.flatnonzero(eta)
        if w_prime:
            # masked rows are dropped outright so their values cannot leak in
            l_ur = cross_entropy(untrusted_logits[keep], np.asarray(untrusted_labels)[keep],
                                 reduction="sum", weights=eta[keep])
        else:
            l_ur = Tensor(np.zeros((), dtype=trusted_logits.dtype))
    else:
        l_ur = Tensor(np.zeros((), dtype=trusted_logits.dtype))
    l_cls = (l_t + l_ur) * (1.0 / (n + w_prime))
    return l_t, l_ur, l_cls
