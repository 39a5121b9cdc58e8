"""Independent reference computations used by the tests.

Nothing here imports the package's loss, layer or noise code: each value is
recomputed from its defining formula in plain Python / numpy so the tests
compare two separate routes.
"""
import math

import numpy as np


# -- losses, written out from their definitions ----------------------------

def softmax_row(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def ce_direct(p, k):
    return -math.log(p[k])


def smoothed_ce_direct(p, k, eps):
    n = len(p)
    return (1 - eps) * -math.log(p[k]) + eps / n * sum(-math.log(q) for q in p)


def forward_corrected_direct(C, p, k):
    return -math.log(sum(C[j][k] * p[j] for j in range(len(p))))


def soft_label_direct(cosines):
    """softmax over -dist with dist = -cos."""
    e = [math.exp(c) for c in cosines]
    s = sum(e)
    return [v / s for v in e]


def mae_direct(p, k):
    return sum(abs(q - (1.0 if j == k else 0.0)) for j, q in enumerate(p))


def gce_direct(p, k, q):
    return (1 - p[k] ** q) / q


def cosine_direct(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def teacher_loss_direct(trusted_probs, trusted_labels, unt_probs, unt_labels, conf, delta):
    l_t = sum(-math.log(p[k]) for p, k in zip(trusted_probs, trusted_labels))
    eta = [c if c > delta else 0.0 for c in conf]
    l_ur = sum(e * -math.log(p[k]) for e, p, k in zip(eta, unt_probs, unt_labels) if e)
    w = sum(1 for e in eta if e)
    return l_t, l_ur, (l_t + l_ur) / (len(trusted_labels) + w)


# -- layers -----------------------------------------------------------------

def conv2d_naive(x, w, b):
    """Loop cross-correlation. x: (B, C, H, W); w: (F, C, kh, kw) -> (B, F, Ho, Wo)."""
    B, C, H, W = x.shape
    F, _, kh, kw = w.shape
    out = np.zeros((B, F, H - kh + 1, W - kw + 1))
    for n in range(B):
        for f in range(F):
            for i in range(H - kh + 1):
                for j in range(W - kw + 1):
                    out[n, f, i, j] = np.sum(x[n, :, i:i + kh, j:j + kw] * w[f]) + b[f]
    return out


# -- noise ------------------------------------------------------------------

def symmetric_matrix(eta, n):
    c = np.full((n, n), eta / (n - 1))
    np.fill_diagonal(c, 1 - eta)
    return c


def flip_matrix(eta, n, pairs, rest="identity"):
    c = np.eye(n) if rest == "identity" else symmetric_matrix(eta, n)
    for a, b in pairs:
        for x, y in ((a, b), (b, a)):
            c[x] = 0.0
            c[x, x] = 1 - eta
            c[x, y] = eta
    return c


def count_transition(true, observed, n):
    m = np.zeros((n, n))
    for t, o in zip(true, observed):
        m[t, o] += 1
    return m / m.sum(axis=1, keepdims=True)


# -- finite differences -----------------------------------------------------

def numeric_grad(f, arr, h=1e-5):
    """Central differences of scalar ``f()`` with respect to ``arr`` (modified in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=1e-6):
    """Largest coordinate-wise relative error, with a floor for near-zero entries."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
