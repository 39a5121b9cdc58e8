"""Baseline trainers, evaluation and multi-run sweeps with report emission."""
from __future__ import annotations

import csv
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .distiller import (
    LossConfig,
    MetricsLog,
    TrainConfig,
    forward_corrected_ce,
    glc_probe,
    train_tshn,
)
from .errors import ConfigError, EmptySplit, InsufficientTrusted
from .gradnet import EmbeddingNetwork, cross_entropy, make_optimizer, net_config, predict, softmax
from .mvs import MvsConfig, expand_trusted
from .noiselab import NoiseSpec, corrupt
from .sigsynth import SignalSet, split_dataset

log = logging.getLogger(__name__)

METHODS = ("tshn", "ce", "mae", "gce", "glc")
BASELINES = ("ce", "mae", "gce", "glc")


# ------------------------------------------------------------ robust losses

def mae_loss(logits, labels, reduction="mean"):
    """L1 distance between the softmax output and the one-hot target."""
    labels = np.asarray(labels, dtype=np.int64)
    target = np.zeros(logits.shape, dtype=logits.dtype)
    target[np.arange(len(labels)), labels] = 1.0
    per = (softmax(logits) - target).abs().sum(axis=1)
    return per.mean() if reduction == "mean" else per.sum()


def gce_loss(logits, labels, q=0.7, reduction="mean"):
    """Generalised cross entropy ``(1 - p_y^q) / q``."""
    if not 0 < q <= 1:
        raise ConfigError("gce q must lie in (0, 1]")
    labels = np.asarray(labels, dtype=np.int64)
    py = softmax(logits)[np.arange(len(labels)), labels]
    per = (1.0 - py.clamp_min(1e-12) ** q) * (1.0 / q)
    return per.mean() if reduction == "mean" else per.sum()


# ---------------------------------------------------------------- baselines

def _merged(splits) -> SignalSet:
    parts = [s for s in (splits.get("train_trusted"), splits["train_untrusted"]) if s is not None and len(s)]
    if not parts:
        raise EmptySplit("no training data")
    return SignalSet.concat(parts)


def train_baseline(method: str, splits: dict, cfg: TrainConfig = TrainConfig(), q: float = 0.7,
                   metrics_path=None):
    """Train one baseline and return ``(net, extra)``.

    ``ce``, ``mae`` and ``gce`` see trusted and untrusted samples alike.
    ``glc`` estimates the transition matrix from a probe trained on the
    untrusted pool, then trains a fresh network with forward correction on
    untrusted samples and plain CE on trusted ones.
    """
    if method not in BASELINES:
        raise ConfigError(f"unknown baseline {method!r}")
    ref = splits["train_untrusted"] if len(splits["train_untrusted"]) else splits["train_trusted"]
    n_classes = ref.n_classes
    net = EmbeddingNetwork(net_config(n_classes, ref.sample_len, cfg.preset, **cfg.net_overrides()), seed=cfg.seed)
    opt = make_optimizer(cfg.optimizer, net.params, lr=cfg.lr)
    mlog = MetricsLog(metrics_path)
    val = splits.get("val")
    extra = {}

    if method == "glc":
        trusted = splits.get("train_trusted")
        if trusted is None or len(trusted) == 0:
            raise InsufficientTrusted([], "glc needs trusted samples")
        missing = sorted(set(range(n_classes)) - set(trusted.labels.tolist()))
        if missing:
            raise InsufficientTrusted([trusted.class_names[m] for m in missing])
        transition = glc_probe(trusted, splits["train_untrusted"], cfg, n_classes)
        extra["transition"] = transition
        data = _merged(splits)
        is_trusted = np.isin(data.ids, trusted.ids)

        def loss_fn(logits, labels, rows):
            t, u = rows[is_trusted[rows]], rows[~is_trusted[rows]]
            pos = {r: k for k, r in enumerate(rows.tolist())}
            parts = []
            if len(t):
                parts.append(cross_entropy(logits[[pos[r] for r in t.tolist()]], data.labels[t], reduction="sum"))
            if len(u):
                parts.append(forward_corrected_ce(logits[[pos[r] for r in u.tolist()]], data.labels[u],
                                                  transition, reduction="sum"))
            total = parts[0]
            for p in parts[1:]:
                total = total + p
            return total * (1.0 / len(rows))
    else:
        data = _merged(splits)
        fns = {
            "ce": lambda lg, y: cross_entropy(lg, y, reduction="mean"),
            "mae": lambda lg, y: mae_loss(lg, y),
            "gce": lambda lg, y: gce_loss(lg, y, q),
        }

        def loss_fn(logits, labels, rows):
            return fns[method](logits, labels)

    rng = np.random.default_rng([cfg.seed, 4])
    n = len(data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        tot = 0.0
        for i in range(0, n, cfg.batch_size):
            rows = order[i:i + cfg.batch_size]
            _, logits = net.forward(data.iq[rows], train=True)
            loss = loss_fn(logits, data.labels[rows], rows)
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item() * len(rows)
        mlog.write({"phase": 2, "epoch": epoch + 1, "method": method, "loss": tot / n,
                    "val_accuracy": evaluate(net, val).accuracy if val is not None and len(val) else None})
    extra["metrics"] = mlog.records
    return net, extra


# --------------------------------------------------------------- evaluation

@dataclass
class EvalResult:
    accuracy: float
    per_snr: dict  # snr -> accuracy
    snr_counts: dict  # snr -> samples
    confusion: np.ndarray  # rows true, columns predicted
    n: int
    snr_min: int | None = None

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "per_snr": {str(k): v for k, v in self.per_snr.items()},
            "snr_counts": {str(k): v for k, v in self.snr_counts.items()},
            "confusion": self.confusion.tolist(),
            "n": self.n,
            "snr_min": self.snr_min,
        }


def evaluate(model, ds: SignalSet, snr_min: int | None = None) -> EvalResult:
    """Accuracy, per-SNR accuracy and confusion of ``model`` on ``ds``.

    The per-SNR breakdown is left empty when ``ds`` carries a single SNR tag.

    ``model`` is a network or a callable mapping an (n, 2, L) array to
    class probabilities or hard predictions. ``snr_min`` restricts the
    evaluation to records at or above that SNR.
    """
    if snr_min is not None:
        ds = ds.subset(np.flatnonzero(ds.snr_db >= snr_min))
    if len(ds) == 0:
        raise EmptySplit("evaluation split is empty")
    if hasattr(model, "forward"):
        pred = predict(model, ds.iq)[1].argmax(1)
    else:
        out = np.asarray(model(ds.iq))
        pred = out.argmax(1) if out.ndim == 2 else out.astype(np.int64)
    N = ds.n_classes
    conf = np.zeros((N, N), dtype=np.int64)
    np.add.at(conf, (ds.labels, pred), 1)
    hit = pred == ds.labels
    per_snr, counts = {}, {}
    snrs = np.unique(ds.snr_db).tolist()
    # a curve needs at least two SNR tags
    for s in snrs if len(snrs) > 1 else []:
        m = ds.snr_db == s
        per_snr[int(s)] = float(hit[m].mean())
        counts[int(s)] = int(m.sum())
    return EvalResult(float(hit.mean()), per_snr, counts, conf, len(ds), snr_min)


def chance_level(ds: SignalSet) -> float:
    """Accuracy of always predicting the most frequent class."""
    if len(ds) == 0:
        raise EmptySplit("empty split")
    return float(np.bincount(ds.labels, minlength=ds.n_classes).max() / len(ds))


# --------------------------------------------------------------------- runs

@dataclass
class RunSpec:
    method: str
    noise: NoiseSpec
    seed: int = 0
    trusted_fraction: float = 0.01
    mvs: MvsConfig | None = None
    snr_min: int | None = 0
    tag: str = ""
    trusted_per_class: int | None = None

    @property
    def key(self) -> str:
        extra = f"-{self.tag}" if self.tag else ""
        return f"{self.method}{extra}_{self.noise.kind}{self.noise.rate:g}_s{self.seed}"

    def to_dict(self):
        d = {"method": self.method, "noise": asdict(self.noise), "seed": self.seed,
             "trusted_fraction": self.trusted_fraction, "snr_min": self.snr_min, "tag": self.tag,
             "trusted_per_class": self.trusted_per_class}
        d["mvs"] = asdict(self.mvs) if self.mvs else None
        return d


@dataclass
class RunReport:
    key: str
    method: str
    noise_kind: str
    rate: float
    seed: int
    accuracy: float
    per_snr: dict
    confusion: list
    wall_clock: float
    trusted_fraction: float
    purity: dict | None = None  # clean fraction in D_p vs pool
    error: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def prepare_splits(dataset: SignalSet, noise: NoiseSpec, seed: int, trusted_fraction: float = 0.01,
                   trusted_per_class: int | None = None):
    """Split by ``seed`` and corrupt the untrusted labels; returns ``(splits, clean_untrusted_labels)``.

    ``trusted_fraction=0`` leaves the trusted split empty (baselines only).
    """
    if trusted_per_class is None and trusted_fraction == 0:
        splits = split_dataset(dataset, trusted_fraction=1.0, rng_seed=seed)
        splits["train_untrusted"] = splits["train_trusted"]
        splits["train_trusted"] = splits["train_trusted"].subset(np.zeros(0, np.int64))
    else:
        splits = split_dataset(dataset, trusted_fraction=trusted_fraction, rng_seed=seed,
                               trusted_per_class=trusted_per_class)
    unt = splits["train_untrusted"]
    clean = unt.labels.copy()
    if len(unt):
        spec = replace(noise, rng_seed=1000 * noise.rng_seed + seed)  # fresh corruption per seed
        observed, _ = corrupt(unt.labels, spec, dataset.n_classes, unt.ids)
        splits["train_untrusted"] = unt.with_labels(observed)
    return splits, clean


def run_one(dataset: SignalSet, spec: RunSpec, cfg: TrainConfig | None = None, run_dir=None) -> RunReport:
    """Train ``spec.method`` on one seeded split and evaluate on the test split."""
    cfg = replace(cfg or TrainConfig(), seed=spec.seed)
    t0 = time.process_time()
    splits, clean = prepare_splits(dataset, spec.noise, spec.seed, spec.trusted_fraction, spec.trusted_per_class)
    if spec.method == "tshn" and len(splits["train_trusted"]) == 0:
        raise InsufficientTrusted(list(dataset.class_names), "tshn needs trusted samples")
    run_dir = Path(run_dir) if run_dir else None
    metrics_path = run_dir / "metrics.jsonl" if run_dir else None
    ckpt_dir = run_dir / "ckpt" if run_dir else None
    purity = None
    extra = {}
    if spec.method == "tshn":
        pool = expand_trusted(splits["train_trusted"], spec.mvs) if spec.mvs else None
        res = train_tshn(splits, cfg, LossConfig(), episode_pool=pool, metrics_path=metrics_path,
                         ckpt_dir=ckpt_dir)
        net = res.net
        purity = purification_stats(splits["train_untrusted"], clean, res.partition.d_p)
        extra["transition"] = res.transition.c.tolist()
        extra["partition_sizes"] = list(res.partition.sizes())
        if run_dir:
            res.transition.to_csv(run_dir / "transition.csv")
    else:
        net, info = train_baseline(spec.method, splits, cfg, metrics_path=metrics_path)
        if "transition" in info:
            extra["transition"] = info["transition"].c.tolist()
            if run_dir:
                info["transition"].to_csv(run_dir / "transition.csv")
    ev = evaluate(net, splits["test"], spec.snr_min)
    extra["chance"] = chance_level(splits["test"])
    return RunReport(spec.key, spec.method + (f"+{spec.tag}" if spec.tag else ""), spec.noise.kind,
                     spec.noise.rate, spec.seed, ev.accuracy, {str(k): v for k, v in ev.per_snr.items()},
                     ev.confusion.tolist(), time.process_time() - t0, spec.trusted_fraction, purity,
                     extra=extra)


def purification_stats(untrusted: SignalSet, clean_labels, d_p) -> dict:
    """Clean-label fraction inside ``d_p`` against the whole pool (ledger oracle)."""
    clean_labels = np.asarray(clean_labels)
    pool_clean = float(np.mean(untrusted.labels == clean_labels)) if len(untrusted) else float("nan")
    rows = np.flatnonzero(np.isin(untrusted.ids, np.asarray(d_p)))
    dp_clean = float(np.mean(untrusted.labels[rows] == clean_labels[rows])) if len(rows) else float("nan")
    return {"n_purified": int(len(rows)), "purified_clean": dp_clean, "pool_clean": pool_clean}


# ------------------------------------------------------------------- sweeps

def _run_safe(args):
    dataset, spec, cfg, run_dir = args
    try:
        return run_one(dataset, spec, cfg, run_dir)
    except Exception as e:  # recorded per run, the sweep carries on
        log.warning("run %s failed: %s", spec.key, e)
        return RunReport(spec.key, spec.method, spec.noise.kind, spec.noise.rate, spec.seed, float("nan"),
                         {}, [], 0.0, spec.trusted_fraction,
                         error=f"{type(e).__name__}: {e}\n{traceback.format_exc(limit=3)}")


def sweep(dataset: SignalSet, specs: list[RunSpec], out_dir, cfg: TrainConfig | None = None,
          jobs: int = 1) -> list[RunReport]:
    """Run every spec, skipping keys already present in ``out_dir/report.json``.

    Failed runs are recorded with their error and retried on the next call.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    done = {r.key: r for r in load_reports(out) if r.error is None}
    todo = [s for s in specs if s.key not in done]
    args = [(dataset, s, cfg, out / "runs" / s.key) for s in todo]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            fresh = list(ex.map(_run_safe, args))
    else:
        fresh = []
        for a in args:
            fresh.append(_run_safe(a))
            write_reports(out, list(done.values()) + fresh)  # checkpoint progress
    reports = list(done.values()) + fresh
    write_reports(out, reports)
    return reports


def load_reports(out_dir) -> list[RunReport]:
    path = Path(out_dir) / "report.json"
    if not path.exists():
        return []
    return [RunReport.from_dict(d) for d in json.loads(path.read_text())["runs"]]


def write_reports(out_dir, reports: list[RunReport]):
    out = Path(out_dir)
    reports = sorted(reports, key=lambda r: (r.method, r.noise_kind, r.rate, r.seed))
    (out / "report.json").write_text(json.dumps(
        {"runs": [r.to_dict() for r in reports], "summary": summarize(reports),
         "note": "accuracy over test records with SNR >= 0 dB unless snr_min says otherwise"},
        indent=2, sort_keys=True))
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "rate", "seed", "accuracy"])
        for r in reports:
            w.writerow([r.method, r.rate, r.seed, r.accuracy])
    with open(out / "snr_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "noise", "rate", "seed", "snr_db", "accuracy"])
        for r in reports:
            for s, a in sorted(r.per_snr.items(), key=lambda kv: int(kv[0])):
                w.writerow([r.method, r.noise_kind, r.rate, r.seed, s, a])
    for r in reports:
        if r.confusion:
            with open(out / f"confusion_{r.key}.csv", "w", newline="") as fh:
                csv.writer(fh).writerows(r.confusion)


def summarize(reports: list[RunReport]) -> list[dict]:
    """Mean and spread per (method, noise kind, rate) over seeds, plus the TSHN gain over CE."""
    groups: dict[tuple, list[float]] = {}
    for r in reports:
        if r.error is None:
            groups.setdefault((r.method, r.noise_kind, r.rate), []).append(r.accuracy)
    rows = []
    for (m, k, rate), accs in sorted(groups.items()):
        rows.append({"method": m, "noise": k, "rate": rate, "seeds": len(accs),
                     "mean": float(np.mean(accs)), "std": float(np.std(accs))})
    means = {(r["method"], r["noise"], r["rate"]): r["mean"] for r in rows}
    for (m, k, rate), v in list(means.items()):
        if m == "tshn" and ("ce", k, rate) in means:
            rows.append({"method": "tshn_gain", "noise": k, "rate": rate, "mean": v - means[("ce", k, rate)]})
    return rows


def format_table(reports: list[RunReport], noise_kind: str = "symmetric", percent: bool = True) -> str:
    """Accuracy per method (rows) and noise rate (columns), with a TSHN(↑) gain row."""
    summary = [r for r in summarize(reports) if r["noise"] == noise_kind]
    rates = sorted({r["rate"] for r in summary})
    methods = [m for m in ("ce", "mae", "gce", "glc", "tshn") if any(r["method"] == m for r in summary)]
    methods += sorted({r["method"] for r in summary} - set(methods) - {"tshn_gain"})
    cell = {(r["method"], r["rate"]): r["mean"] for r in summary}
    scale = 100.0 if percent else 1.0
    head = "method".ljust(10) + "".join(f"{r:>9g}" for r in rates)
    lines = [head, "-" * len(head)]
    for m in methods:
        vals = "".join(f"{cell[(m, r)] * scale:9.2f}" if (m, r) in cell else f"{'-':>9}" for r in rates)
        lines.append(m.upper().ljust(10) + vals)
    if any(k[0] == "tshn_gain" for k in cell):
        vals = "".join(f"{cell[('tshn_gain', r)] * scale:8.2f}" + ("↑" if cell[("tshn_gain", r)] >= 0 else "↓")
                       if ("tshn_gain", r) in cell else f"{'-':>9}" for r in rates)
        lines.append("TSHN(↑)".ljust(10) + vals)
    return "\n".join(lines)
