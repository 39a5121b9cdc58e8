"""Divide-and-conquer losses, GLC estimation and the two-phase training loop."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FaultReport, GlcFallbackWarning, LossClampWarning
from .gradnet import (
    EmbeddingNetwork,
    Tensor,
    cross_entropy,
    log_softmax,
    make_optimizer,
    net_config,
    predict,
    save_checkpoint,
    softmax,
)
from .noiselab import TransitionMatrix
from .protomind import (
    NEG_COSINE,
    ConfidenceState,
    EpisodeSampler,
    EpisodeSpec,
    PrototypeBank,
    compute_prototypes,
    mask_weights,
    soft_label,
    teacher_losses,
)
from .sigsynth import SignalSet, apportion

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


# ------------------------------------------------------------------ configs

@dataclass
class LossConfig:
    epsilon: float = 0.5
    delta: float = 0.5
    transition: TransitionMatrix | None = None

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")


@dataclass
class TrainConfig:
    """Knobs for both phases. Defaults not fixed by the method are desk-scale choices."""

    episodes: int = 2000  # G
    warmup: int = 50
    proto_interval: int = 5  # I_b
    xi: float = 0.3
    mu: float = 0.6
    proto_scale: float = 10.0
    distance: str = NEG_COSINE
    ways: int | None = None  # J; None -> every class
    shots: int = 5
    queries: int = 15
    untrusted_per_episode: int = 64  # W
    epochs: int = 30  # phase 2
    batch_size: int = 64
    glc_probe_epochs: int = 10
    repartition_every: int = 0
    lr: float = 1e-3
    optimizer: str = "adam"
    preset: str = "desk"
    dropout: float | None = None  # None: preset default
    seed: int = 0
    log_every: int = 100
    ckpt_every: int = 0

    def __post_init__(self):
        for name in ("episodes", "epochs", "batch_size", "proto_interval", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("warmup", "glc_probe_epochs", "repartition_every", "ckpt_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 < self.xi <= 1 or not 0 < self.mu < 1:
            raise ConfigError("xi must lie in (0, 1] and mu in (0, 1)")

    def episode_spec(self, n_classes) -> EpisodeSpec:
        return EpisodeSpec(self.ways or n_classes, self.shots, self.queries, self.untrusted_per_episode)

    def net_overrides(self) -> dict:
        return {} if self.dropout is None else {"dropout": self.dropout}

    def to_dict(self):
        return asdict(self)


# ------------------------------------------------------------------- losses

def smoothed_ce(logits: Tensor, labels, epsilon: float, reduction="sum") -> Tensor:
    """``(1 - eps) * CE(target) + eps / N * sum_c CE(c)``."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = log_softmax(logits)
    n = logits.shape[1]
    per = logp[np.arange(len(labels)), labels] * (-(1.0 - epsilon)) - logp.sum(axis=1) * (epsilon / n)
    return _reduce(per, reduction)


def forward_corrected_ce(logits: Tensor, labels, transition, reduction="sum", floor=PROB_FLOOR) -> Tensor:
    """``-log sum_j C[j, k] p_j`` for observed label ``k``."""
    c = transition.c if isinstance(transition, TransitionMatrix) else np.asarray(transition)
    labels = np.asarray(labels, dtype=np.int64)
    q = softmax(logits) @ Tensor(c.astype(logits.dtype))
    qk = q[np.arange(len(labels)), labels]
    n_low = int(np.count_nonzero(qk.data < floor))
    if n_low:
        warnings.warn(LossClampWarning(f"{n_low} corrected probabilities clamped at {floor}"), stacklevel=2)
    return _reduce(-qk.clamp_min(floor).log(), reduction)


def _reduce(per, reduction):
    if reduction == "none":
        return per
    if reduction == "sum":
        return per.sum()
    if reduction == "mean":
        return per.mean()
    raise ValueError(reduction)


def phase2_loss(logits_t, y_t, logits_p, y_p, logits_u, y_u, cfg: LossConfig, set_sizes=None) -> Tensor:
    """Joint divide-and-conquer loss.

    With ``set_sizes=None`` the three batches are the full sets and the value is
    ``(sum CE_t + sum l_p + sum l_corr) / (|D_t| + |D_p| + |D_u|)``. For
    minibatches pass the full set sizes; each batch sum is scaled by
    ``set size / batch size`` so the expectation matches the full-set value.
    Empty batches contribute 0.
    """
    loss = None
    for term in phase2_terms(logits_t, y_t, logits_p, y_p, logits_u, y_u, cfg, set_sizes):
        if term is not None:
            loss = term if loss is None else loss + term
    return loss


def phase2_terms(logits_t, y_t, logits_p, y_p, logits_u, y_u, cfg: LossConfig, set_sizes=None):
    """The three normalised terms of ``phase2_loss`` (None for an empty batch)."""
    fns = (
        lambda lg, y: cross_entropy(lg, y, reduction="sum"),
        lambda lg, y: smoothed_ce(lg, y, cfg.epsilon),
        lambda lg, y: forward_corrected_ce(lg, y, cfg.transition),
    )
    batches = ((logits_t, y_t), (logits_p, y_p), (logits_u, y_u))
    batch_sizes = [0 if y is None else len(y) for _, y in batches]
    sizes = batch_sizes if set_sizes is None else list(set_sizes)
    total = sum(sizes)
    if total == 0:
        raise ValueError("all three sets are empty")
    out = []
    for k, ((lg, y), b, n) in enumerate(zip(batches, batch_sizes, sizes)):
        if b == 0 or n == 0:
            out.append(None)
            continue
        if k == 2 and cfg.transition is None:
            raise ConfigError("forward correction needs a transition matrix")
        out.append(fns[k](lg, y) * (n / b / total))
    return out


# ---------------------------------------------------------------- partition

@dataclass
class Partition:
    d_t: np.ndarray
    d_p: np.ndarray
    d_u: np.ndarray

    def __post_init__(self):
        a, b, c = (set(np.asarray(x).tolist()) for x in (self.d_t, self.d_p, self.d_u))
        if a & b or a & c or b & c:
            raise ValueError("partition sets overlap")

    def sizes(self):
        return len(self.d_t), len(self.d_p), len(self.d_u)


def partition(untrusted_ids, confidence: ConfidenceState, delta: float, trusted_ids=()) -> Partition:
    """``d_p = {i : c_i > delta}``, ``d_u`` the rest of the pool, ``d_t`` passed through."""
    ids = np.asarray(untrusted_ids)
    rows = np.array([confidence.index_of(i) for i in ids.tolist()], dtype=np.int64)
    keep = confidence.c[rows] > delta
    return Partition(np.asarray(trusted_ids), ids[keep], ids[~keep])


# --------------------------------------------------------------------- GLC

def estimate_glc(trusted_x, trusted_y, model, n_classes: int | None = None) -> TransitionMatrix:
    """Gold loss correction: row i is the mean predicted distribution of a
    model trained on untrusted labels, over trusted samples of true class i.

    ``model`` is a network (anything ``predict`` accepts), a callable
    returning probabilities, or a precomputed (n, N) probability array.
    """
    trusted_y = np.asarray(trusted_y, dtype=np.int64)
    if isinstance(model, np.ndarray):
        probs = model
    elif hasattr(model, "forward"):
        probs = predict(model, trusted_x)[1]
    else:
        probs = np.asarray(model(trusted_x))
    n = n_classes or probs.shape[1]
    c = np.eye(n)
    for i in range(n):
        m = trusted_y == i
        if not m.any():
            warnings.warn(GlcFallbackWarning(f"no trusted sample of class {i}; identity row used"), stacklevel=2)
            continue
        row = probs[m].mean(axis=0).astype(np.float64)
        c[i] = row / row.sum()
    return TransitionMatrix(c)


# ----------------------------------------------------------------- training

@dataclass
class TshnResult:
    net: EmbeddingNetwork
    partition: Partition
    transition: TransitionMatrix
    confidence: ConfidenceState
    metrics: list[dict] = field(default_factory=list)
    soft_argmax: np.ndarray | None = None


def accuracy(net, ds: SignalSet) -> float:
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(predict(net, ds.iq)[1].argmax(1) == ds.labels))


class MetricsLog:
    """In-memory list of epoch records, mirrored to a JSON-lines file if given."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, rec: dict):
        rec = {k: (round(v, 10) if isinstance(v, float) else v) for k, v in rec.items()}
        self.records.append(rec)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def fit_ce(net, x, y, epochs, batch_size, rng, optimizer, loss_fn=None):
    """Plain minibatch training; ``loss_fn(logits, labels)`` defaults to mean CE."""
    loss_fn = loss_fn or (lambda lg, yy: cross_entropy(lg, yy, reduction="mean"))
    n = len(y)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        tot = 0.0
        for i in range(0, n, batch_size):
            b = order[i:i + batch_size]
            _, logits = net.forward(x[b], train=True)
            loss = loss_fn(logits, y[b])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            tot += loss.item() * len(b)
        losses.append(tot / max(n, 1))
    return losses


def train_tshn(
    splits: dict[str, SignalSet],
    cfg: TrainConfig = TrainConfig(),
    loss_cfg: LossConfig = LossConfig(),
    episode_pool: SignalSet | None = None,
    metrics_path=None,
    ckpt_dir=None,
    phase2: bool = True,
) -> TshnResult:
    """Teacher meta-training followed by divide-and-conquer student training.

    ``splits`` holds ``train_trusted`` (true labels), ``train_untrusted``
    (observed, possibly corrupted labels) and optionally ``val``.
    ``episode_pool`` replaces the trusted set as the source of episode
    support/query samples (used for multi-view expansion). With
    ``phase2=False`` training stops after partitioning.
    """
    trusted, untrusted = splits["train_trusted"], splits["train_untrusted"]
    val = splits.get("val")
    pool = episode_pool if episode_pool is not None else trusted
    N = trusted.n_classes
    mlog = MetricsLog(metrics_path)
    net = EmbeddingNetwork(net_config(N, trusted.sample_len, cfg.preset, **cfg.net_overrides()), seed=cfg.seed)
    opt = make_optimizer(cfg.optimizer, net.params, lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 2])
    sampler = EpisodeSampler(pool.labels, len(untrusted), cfg.episode_spec(N), N)
    bank = PrototypeBank(N, net.cfg.feat_dim, cfg.xi, cfg.proto_interval, cfg.warmup)
    conf = ConfidenceState(untrusted.ids, cfg.mu, loss_cfg.delta)

    acc = {"l_t": 0.0, "l_ur": 0.0, "l_cls": 0.0, "w_prime": 0, "n": 0}
    for e in range(cfg.episodes):
        ep = sampler.sample(rng)
        t_idx = np.concatenate([ep.support, ep.query])
        x_t, y_t = pool.iq[t_idx], pool.labels[t_idx]
        x_u, y_u = untrusted.iq[ep.untrusted], untrusted.labels[ep.untrusted]

        if bank.due(e):
            feats = predict(net, pool.iq[ep.support])[0]
            bank.update(compute_prototypes(feats, pool.labels[ep.support]))
        eta = np.zeros(len(ep.untrusted))
        if bank.ready and len(ep.untrusted):
            p = soft_label(predict(net, x_u)[0], bank, cfg.proto_scale, cfg.distance)
            conf.update_rows(ep.untrusted, p, y_u)
            eta, _ = mask_weights(conf.c[ep.untrusted], loss_cfg.delta)

        active = np.flatnonzero(eta)
        x = np.concatenate([x_t, x_u[active]]) if len(active) else x_t
        _, logits = net.forward(x, train=True)
        nt = len(t_idx)
        l_t, l_ur, l_cls = teacher_losses(logits[:nt], y_t, logits[nt:] if len(active) else None,
                                          y_u[active], eta[active])
        opt.zero_grad()
        l_cls.backward()
        _guard(l_cls, e)
        opt.step()
        acc["l_t"] += l_t.item()
        acc["l_ur"] += l_ur.item()
        acc["l_cls"] += l_cls.item()
        acc["w_prime"] += len(active)
        acc["n"] += 1
        if (e + 1) % cfg.log_every == 0 or e + 1 == cfg.episodes:
            n_p = int(np.count_nonzero(conf.c > loss_cfg.delta))
            mlog.write({
                "phase": 1, "epoch": (e + 1 + cfg.log_every - 1) // cfg.log_every, "episode": e + 1,
                "loss_trusted": acc["l_t"] / acc["n"], "loss_untrusted": acc["l_ur"] / acc["n"],
                "loss": acc["l_cls"] / acc["n"], "w_prime": acc["w_prime"] / acc["n"],
                "n_purified": n_p, "n_residual": len(untrusted) - n_p,
                "val_accuracy": accuracy(net, val) if val is not None else None,
            })
            acc = {"l_t": 0.0, "l_ur": 0.0, "l_cls": 0.0, "w_prime": 0, "n": 0}

    soft_argmax = None
    if bank.ready and len(untrusted):
        soft_argmax = soft_label(predict(net, untrusted.iq)[0], bank, cfg.proto_scale, cfg.distance).argmax(1)
    part = partition(untrusted.ids, conf, loss_cfg.delta, trusted.ids)
    if ckpt_dir:
        save_checkpoint(Path(ckpt_dir) / "phase1.ckpt", net, opt, {"episodes": cfg.episodes})

    transition = loss_cfg.transition
    if transition is None:
        transition = glc_probe(trusted, untrusted, cfg, N)
    result = TshnResult(net, part, transition, conf, mlog.records, soft_argmax)
    if not phase2:
        return result

    lcfg = LossConfig(loss_cfg.epsilon, loss_cfg.delta, transition)
    _phase2(net, opt, trusted, untrusted, part, lcfg, cfg, bank, conf, val, mlog, ckpt_dir, rng, result)
    result.metrics = mlog.records
    if ckpt_dir:
        save_checkpoint(Path(ckpt_dir) / "final.ckpt", net, opt, {"epochs": cfg.epochs})
    return result


def glc_probe(trusted: SignalSet, untrusted: SignalSet, cfg: TrainConfig, n_classes: int) -> TransitionMatrix:
    """Train a fresh network on the untrusted labels with CE, then estimate C on the trusted set."""
    if len(untrusted) == 0 or cfg.glc_probe_epochs == 0:
        return TransitionMatrix(np.eye(n_classes))
    probe = EmbeddingNetwork(net_config(n_classes, trusted.sample_len, cfg.preset, **cfg.net_overrides()),
                             seed=cfg.seed + 7919)
    opt = make_optimizer(cfg.optimizer, probe.params, lr=cfg.lr)
    fit_ce(probe, untrusted.iq, untrusted.labels, cfg.glc_probe_epochs, cfg.batch_size,
           np.random.default_rng([cfg.seed, 3]), opt)
    return estimate_glc(trusted.iq, trusted.labels, probe, n_classes)


def _phase2(net, opt, trusted, untrusted, part, lcfg, cfg, bank, conf, val, mlog, ckpt_dir, rng, result):
    pos = {int(i): k for k, i in enumerate(untrusted.ids.tolist())}

    def rows(ids):
        return np.array([pos[int(i)] for i in np.asarray(ids).tolist()], dtype=np.int64)

    p_rows, u_rows = rows(part.d_p), rows(part.d_u)
    for epoch in range(cfg.epochs):
        if cfg.repartition_every and epoch and epoch % cfg.repartition_every == 0:
            p_rows, u_rows = _repartition(net, trusted, untrusted, bank, conf, lcfg, cfg)
            result.partition = Partition(trusted.ids, untrusted.ids[p_rows], untrusted.ids[u_rows])
        sets = [
            (trusted.iq, trusted.labels, np.arange(len(trusted))),
            (untrusted.iq, untrusted.labels, p_rows),
            (untrusted.iq, untrusted.labels, u_rows),
        ]
        sizes = [len(s[2]) for s in sets]
        total = sum(sizes)
        steps = -(-total // cfg.batch_size)
        per_step = apportion(cfg.batch_size, sizes)
        per_step = np.where((np.array(sizes) > 0) & (per_step == 0), 1, per_step)
        orders = [rng.permutation(s[2]) for s in sets]
        cursor = [0, 0, 0]
        sums = np.zeros(3)
        tot = 0.0
        for _ in range(steps):
            xs, ys, kinds = [], [], []
            for k, (x, y, _) in enumerate(sets):
                b = int(per_step[k])
                if b == 0:
                    continue
                take = _cycle(orders[k], cursor[k], b)
                cursor[k] = (cursor[k] + b) % len(orders[k])
                xs.append(x[take])
                ys.append(y[take])
                kinds.append(np.full(b, k))
            kinds = np.concatenate(kinds)
            _, logits = net.forward(np.concatenate(xs), train=True)
            labels = np.concatenate(ys)
            args = []
            for k in range(3):
                r = np.flatnonzero(kinds == k)
                args += [logits[r], labels[r]] if len(r) else [None, None]
            terms = phase2_terms(*args, lcfg, set_sizes=sizes)
            loss = None
            for k, term in enumerate(terms):
                if term is not None:
                    loss = term if loss is None else loss + term
                    sums[k] += term.item()
            opt.zero_grad()
            loss.backward()
            _guard(loss, epoch)
            opt.step()
            tot += loss.item()
        mlog.write({
            "phase": 2, "epoch": epoch + 1,
            "loss": tot / steps,
            "loss_trusted": sums[0] / steps, "loss_purified": sums[1] / steps, "loss_untrusted": sums[2] / steps,
            "n_purified": len(p_rows), "n_residual": len(u_rows),
            "val_accuracy": accuracy(net, val) if val is not None else None,
        })
        if ckpt_dir and cfg.ckpt_every and (epoch + 1) % cfg.ckpt_every == 0:
            save_checkpoint(Path(ckpt_dir) / f"epoch{epoch + 1:03d}.ckpt", net, opt, {"epoch": epoch + 1})


def _cycle(order, start, n):
    idx = (start + np.arange(n)) % len(order)
    return order[idx]


def _repartition(net, trusted, untrusted, bank, conf, lcfg, cfg):
    feats = predict(net, trusted.iq)[0]
    bank.update(compute_prototypes(feats, trusted.labels, np.unique(trusted.labels)))
    p = soft_label(predict(net, untrusted.iq)[0], bank, cfg.proto_scale, cfg.distance)
    conf.update_rows(np.arange(len(untrusted)), p, untrusted.labels)
    keep = conf.c > lcfg.delta
    return np.flatnonzero(keep), np.flatnonzero(~keep)


def _guard(loss, where):
    if not np.isfinite(loss.data).all():
        raise FaultReport(f"loss at step {where}")
