from __future__ import annotations

import numpy as np

from ..errors import DegenerateVector, ShapeError
from .tensor import Tensor, log_softmax, softmax


def one_hot(labels, n_classes, dtype=np.float32):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def _reduce(per_sample: Tensor, reduction: str) -> Tensor:
    if reduction == "none":
        return per_sample
    if reduction == "sum":
        return per_sample.sum()
    if reduction == "mean":
        return per_sample.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def _check_labels(logits: Tensor, labels):
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} vs labels {labels.shape}")
    return labels


def cross_entropy(logits: Tensor, labels, reduction="mean", weights=None) -> Tensor:
    """Softmax cross-entropy; optional per-sample ``weights`` (constants)."""
    labels = _check_labels(logits, labels)
    per = -log_softmax(logits)[np.arange(len(labels)), labels]
    if weights is not None:
        per = per * np.asarray(weights, dtype=logits.dtype)
    return _reduce(per, reduction)


def nll(logp: Tensor, labels, reduction="mean") -> Tensor:
    labels = _check_labels(logp, labels)
    return _reduce(-logp[np.arange(len(labels)), labels], reduction)


def cosine_similarity(a, b, eps=0.0) -> Tensor:
    """Cosine similarity between vectors, or between every row of ``a`` and every row of ``b``.

    1-D inputs give a scalar; 2-D inputs (n, F) and (m, F) give an (n, m) matrix.
    Zero vectors raise ``DegenerateVector``.
    """
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b, dtype=a.dtype)
    vec = a.ndim == 1 and b.ndim == 1
    A = a.reshape(1, -1) if a.ndim == 1 else a
    Bm = b.reshape(1, -1) if b.ndim == 1 else b
    if A.shape[1] != Bm.shape[1]:
        raise ShapeError(f"cosine_similarity dims {A.shape} vs {Bm.shape}")
    na = (A * A).sum(axis=1, keepdims=True)
    nb = (Bm * Bm).sum(axis=1, keepdims=True)
    if np.any(na.data <= eps) or np.any(nb.data <= eps):
        raise DegenerateVector("cosine similarity of a zero vector")
    sim = (A @ Bm.T) / ((na ** 0.5) @ (nb ** 0.5).T)
    return sim.reshape(()) if vec else sim


__all__ = ["cross_entropy", "nll", "cosine_similarity", "one_hot", "log_softmax", "softmax"]
