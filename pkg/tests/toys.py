"""Small synthetic problems shared by module tests and the acceptance suite."""
import numpy as np

from tshn.distiller import estimate_glc, fit_ce
from tshn.gradnet import MLP, Adam
from tshn.noiselab import NoiseSpec, corrupt


def blobs(n_per_class, n_classes=4, dim=2, spread=0.15, seed=0):
    """Well separated Gaussian clusters around the vertices of a regular polygon."""
    rng = np.random.default_rng(seed)
    ang = 2 * np.pi * np.arange(n_classes) / n_classes
    centers = np.zeros((n_classes, dim))
    centers[:, 0], centers[:, 1] = np.cos(ang), np.sin(ang)
    y = np.repeat(np.arange(n_classes), n_per_class)
    x = centers[y] + spread * rng.standard_normal((len(y), dim))
    return x.astype(np.float32), y


def glc_toy(spec: NoiseSpec, n_classes=4, seed=0, n_untrusted=500, n_trusted=50, epochs=150):
    """Train an MLP probe on corrupted toy labels and return ``(C_hat, (true, observed))``."""
    x_u, y_u = blobs(n_untrusted, n_classes, seed=seed)
    obs, _ = corrupt(y_u, spec, n_classes)
    x_t, y_t = blobs(n_trusted, n_classes, seed=seed + 100)
    net = MLP(2, [32], n_classes, seed=seed)
    fit_ce(net, x_u, obs, epochs, 64, np.random.default_rng(seed), Adam(net.params, lr=1e-2))
    return estimate_glc(x_t, y_t, net, n_classes), (y_u, obs)
