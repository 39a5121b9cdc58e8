"""Label-noise models: symmetric, flip-one and mixed corruption."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidPair, UndefinedRow

SYMMETRIC = "symmetric"
FLIP = "flip"
MIXED = "mixed"
KINDS = (SYMMETRIC, FLIP, MIXED)

# confusable pairs used for asymmetric and mixed noise
HARD_PAIRS = (("QAM16", "QAM64"), ("QPSK", "8PSK"))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = SYMMETRIC
    rate: float = 0.0
    pairs: tuple[tuple[int, int], ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"noise rate {self.rate} outside [0, 1]")
        seen = set()
        for a, b in self.pairs:
            if a == b or a in seen or b in seen:
                raise InvalidPair(f"pairs must be disjoint class pairs, got {self.pairs}")
            seen.update((a, b))


def pairs_by_name(class_names: Sequence[str], named_pairs=HARD_PAIRS) -> tuple[tuple[int, int], ...]:
    idx = {n: i for i, n in enumerate(class_names)}
    out = []
    for a, b in named_pairs:
        if a not in idx or b not in idx:
            raise InvalidPair(f"pair ({a}, {b}) not in class list")
        out.append((idx[a], idx[b]))
    return tuple(out)


@dataclass
class TransitionMatrix:
    """Row-stochastic ``c[i, j] = P(observed = j | true = i)``."""

    c: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        n = self.c.shape[0]
        if self.c.shape != (n, n):
            raise ValueError(f"transition matrix must be square, got {self.c.shape}")
        if np.any(self.c < 0) or np.any(self.c > 1):
            raise ValueError("transition entries must lie in [0, 1]")
        if np.max(np.abs(self.c.sum(1) - 1)) > 1e-9:
            raise ValueError("transition rows must sum to 1")

    @property
    def n_classes(self) -> int:
        return self.c.shape[0]

    def to_csv(self, path, class_names=None) -> None:
        names = class_names or [str(i) for i in range(self.n_classes)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\observed", *names])
            for name, row in zip(names, self.c):
                w.writerow([name, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path) -> "TransitionMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return cls(np.array([[float(v) for v in r[1:]] for r in rows]))


def spec_to_matrix(spec: NoiseSpec, n_classes: int) -> TransitionMatrix:
    if n_classes < 2:
        raise ConfigError("need at least two classes")
    eta = spec.rate
    for a, b in spec.pairs:
        if not (0 <= a < n_classes and 0 <= b < n_classes):
            raise InvalidPair(f"pair ({a}, {b}) out of range for {n_classes} classes")
    if spec.kind in (FLIP, MIXED) and not spec.pairs:
        raise InvalidPair(f"{spec.kind} noise needs at least one pair")

    sym = np.full((n_classes, n_classes), eta / (n_classes - 1))
    np.fill_diagonal(sym, 1.0 - eta)
    if spec.kind == SYMMETRIC:
        return TransitionMatrix(sym)

    c = np.eye(n_classes) if spec.kind == FLIP else sym
    for a, b in spec.pairs:
        for src, dst in ((a, b), (b, a)):
            c[src] = 0.0
            c[src, src] = 1.0 - eta
            c[src, dst] = eta
    return TransitionMatrix(c)


@dataclass(frozen=True)
class CorruptionRecord:
    id: int
    true_label: int
    observed_label: int

    @property
    def flipped(self) -> bool:
        return self.true_label != self.observed_label


def corrupt(labels, spec: NoiseSpec, n_classes: int, ids=None):
    """Resample every label from its transition row.

    Returns the observed labels and the corruption ledger. The ledger is for
    evaluation only; training code must never read it.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label outside class range")
    ids = np.arange(len(labels)) if ids is None else np.asarray(ids)
    c = spec_to_matrix(spec, n_classes).c
    cdf = np.cumsum(c, axis=1)
    cdf[:, -1] = 1.0
    u = np.random.default_rng(spec.rng_seed).random(len(labels))
    observed = np.empty_like(labels)
    for cls in range(n_classes):
        m = labels == cls
        observed[m] = np.searchsorted(cdf[cls], u[m], side="right")
    ledger = [CorruptionRecord(int(i), int(t), int(o)) for i, t, o in zip(ids, labels, observed)]
    return observed, ledger


def empirical_transition(true_labels, observed_labels, n_classes: int | None = None) -> TransitionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    o = np.asarray(observed_labels, dtype=np.int64)
    if t.shape != o.shape:
        raise ValueError("label arrays differ in length")
    n = n_classes or int(max(t.max(initial=-1), o.max(initial=-1)) + 1)
    counts = np.zeros((n, n))
    np.add.at(counts, (t, o), 1)
    totals = counts.sum(1)
    if np.any(totals == 0):
        raise UndefinedRow(f"classes absent from true labels: {np.flatnonzero(totals == 0).tolist()}")
    return TransitionMatrix(counts / totals[:, None])


def write_ledger(ledger: Sequence[CorruptionRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "true_label", "observed_label"])
        for r in ledger:
            w.writerow([r.id, r.true_label, r.observed_label])


def read_ledger(path) -> list[CorruptionRecord]:
    with open(path, newline="") as fh:
        return [CorruptionRecord(int(r["id"]), int(r["true_label"]), int(r["observed_label"]))
                for r in csv.DictReader(fh)]


def parse_noise(text: str, class_names: Sequence[str], rng_seed: int = 0) -> NoiseSpec:
    """Parse ``sym:0.8``, ``flip:QAM16-QAM64,QPSK-8PSK:0.6`` or ``mixed:0.6``.

    ``mixed`` accepts an optional pair list like ``flip``; the default pairs
    are QAM16/QAM64 and QPSK/8PSK.
    """
    parts = text.split(":")
    kind = {"sym": SYMMETRIC, "symmetric": SYMMETRIC, "flip": FLIP, "mixed": MIXED}.get(parts[0])
    if kind is None:
        raise ConfigError(f"unknown noise kind {parts[0]!r}")
    try:
        rate = float(parts[-1])
    except ValueError as e:
        raise ConfigError(f"bad noise rate in {text!r}") from e
    pairs: tuple = ()
    if kind in (FLIP, MIXED):
        if len(parts) == 3:
            named = []
            for tok in parts[1].split(","):
                # class names may themselves contain '-' (AM-DSB)
                cuts = [i for i, ch in enumerate(tok) if ch == "-"
                        and tok[:i] in class_names and tok[i + 1:] in class_names]
                if not cuts:
                    raise InvalidPair(f"bad pair {tok!r}")
                named.append((tok[:cuts[0]], tok[cuts[0] + 1:]))
            pairs = pairs_by_name(class_names, named)
        elif len(parts) == 2:
            pairs = pairs_by_name(class_names)
        else:
            raise ConfigError(f"bad noise spec {text!r}")
    elif len(parts) != 2:
        raise ConfigError(f"bad noise spec {text!r}")
    return NoiseSpec(kind, rate, pairs, rng_seed)
