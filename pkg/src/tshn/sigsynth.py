"""Synthetic IQ modulation records, the SIG1 binary dataset format and splitting.

A record is a 2 x L float array (I row, Q row) produced by

    r = channel(s) + n

where ``s`` is a rectangular-pulse (or analog) baseband waveform normalised to
unit average power over the record, ``channel`` applies phase offset, carrier
frequency offset and sample-rate offset, and ``n`` is complex AWGN whose power
is ``10 ** (-snr_db / 10)``.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import hilbert

from .errors import ConfigError, DatasetFormatError, InsufficientTrusted, UnsupportedModulation

DIGITAL_SCHEMES = ("BPSK", "QPSK", "8PSK", "QAM16", "QAM64", "PAM4", "CPFSK", "BFSK")
ANALOG_SCHEMES = ("AM-DSB", "AM-SSB", "WBFM")
ALL_SCHEMES = DIGITAL_SCHEMES + ANALOG_SCHEMES
DEFAULT_CLASSES = DIGITAL_SCHEMES
ELEVEN_CLASSES = ALL_SCHEMES

FORMAT_VERSION = 1
MAGIC = b"SIG1"
MIN_LEN = 16


@dataclass(frozen=True)
class ChannelSpec:
    """Channel impairments. ``snr_db=None`` (or +inf) means noiseless."""

    snr_db: float | None = None
    cfo_normalized: float = 0.0
    phase_offset: float = 0.0
    sro: float = 0.0

    def __post_init__(self):
        if self.snr_db is not None and math.isfinite(self.snr_db):
            if not -20 <= self.snr_db <= 30:
                raise ConfigError(f"snr_db {self.snr_db} outside [-20, 30]")
        if abs(self.cfo_normalized) >= 0.5:
            raise ConfigError("|cfo_normalized| must be < 0.5")
        if self.sro <= -1:
            raise ConfigError("sro must be > -1")

    @property
    def noiseless(self) -> bool:
        return self.snr_db is None or math.isinf(self.snr_db)


@dataclass
class SignalRecord:
    iq: np.ndarray
    label: int
    snr_db: int
    id: int

    def __post_init__(self):
        if self.iq.ndim != 2 or self.iq.shape[0] != 2 or self.iq.shape[1] < MIN_LEN:
            raise ValueError(f"iq must be 2 x L with L >= {MIN_LEN}, got {self.iq.shape}")
        if not np.all(np.isfinite(self.iq)):
            raise ValueError("iq contains non-finite values")


@dataclass
class SignalSet:
    """Columnar collection of records sharing a class list and length."""

    iq: np.ndarray  # (n, 2, L) float32
    labels: np.ndarray  # (n,) int64
    snr_db: np.ndarray  # (n,) int16
    ids: np.ndarray  # (n,) uint64
    class_names: tuple[str, ...]
    parent_ids: np.ndarray | None = None  # provenance for derived records

    def __post_init__(self):
        n = len(self.labels)
        if self.iq.shape[0] != n or len(self.snr_db) != n or len(self.ids) != n:
            raise ValueError("column lengths disagree")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label outside class list")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def sample_len(self) -> int:
        return self.iq.shape[2]

    def subset(self, idx) -> "SignalSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SignalSet(
            self.iq[idx],
            self.labels[idx],
            self.snr_db[idx],
            self.ids[idx],
            self.class_names,
            None if self.parent_ids is None else self.parent_ids[idx],
        )

    def record(self, i: int) -> SignalRecord:
        return SignalRecord(self.iq[i].copy(), int(self.labels[i]), int(self.snr_db[i]), int(self.ids[i]))

    def with_labels(self, labels) -> "SignalSet":
        return SignalSet(self.iq, np.asarray(labels, dtype=np.int64), self.snr_db, self.ids,
                         self.class_names, self.parent_ids)

    @classmethod
    def empty(cls, class_names, sample_len) -> "SignalSet":
        return cls(np.zeros((0, 2, sample_len), np.float32), np.zeros(0, np.int64),
                   np.zeros(0, np.int16), np.zeros(0, np.uint64), tuple(class_names))

    @classmethod
    def concat(cls, parts: Sequence["SignalSet"]) -> "SignalSet":
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to concatenate")
        names = parts[0].class_names
        if any(p.class_names != names for p in parts):
            raise ValueError("class lists differ")
        parents = None
        if any(p.parent_ids is not None for p in parts):
            parents = np.concatenate([p.ids if p.parent_ids is None else p.parent_ids for p in parts])
        return cls(
            np.concatenate([p.iq for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.snr_db for p in parts]),
            np.concatenate([p.ids for p in parts]),
            names,
            parents,
        )


# ---------------------------------------------------------------- waveforms

def _qam_points(m):
    k = int(math.isqrt(m))
    levels = np.arange(-(k - 1), k, 2, dtype=float)
    pts = (levels[:, None] + 1j * levels[None, :]).ravel()
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


_CONSTELLATIONS = {
    "BPSK": np.array([1.0, -1.0], dtype=complex),
    "QPSK": np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4))),
    "8PSK": np.exp(1j * 2 * np.pi * np.arange(8) / 8),
    "QAM16": _qam_points(16),
    "QAM64": _qam_points(64),
    "PAM4": np.array([-3.0, -1.0, 1.0, 3.0], dtype=complex) / np.sqrt(5.0),
}


def _message(n, rng):
    """Multi-tone stand-in for the audio source of the analog schemes."""
    t = np.arange(n)
    freqs = rng.uniform(0.004, 0.03, size=3)
    amps = rng.uniform(0.3, 1.0, size=3)
    phases = rng.uniform(0, 2 * np.pi, size=3)
    m = (amps[:, None] * np.cos(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(0)
    return m / np.max(np.abs(m))


def baseband(scheme: str, n_samples: int, sps: int, rng: np.random.Generator) -> np.ndarray:
    """Noiseless complex baseband waveform of ``n_samples`` samples."""
    n_sym = -(-n_samples // sps)
    if scheme in _CONSTELLATIONS:
        pts = _CONSTELLATIONS[scheme]
        syms = pts[rng.integers(0, len(pts), n_sym)]
        return np.repeat(syms, sps)[:n_samples]
    if scheme == "CPFSK":
        # binary continuous-phase FSK, modulation index 0.5
        bits = rng.integers(0, 2, n_sym) * 2 - 1
        dphi = np.repeat(bits * np.pi * 0.5 / sps, sps)[:n_samples]
        phase = np.cumsum(dphi) + rng.uniform(0, 2 * np.pi)
        return np.exp(1j * phase)
    if scheme == "BFSK":
        # binary FSK with index 1 and independent phase per symbol
        bits = rng.integers(0, 2, n_sym) * 2 - 1
        f = np.repeat(bits * 0.5 / sps, sps)[:n_samples]
        k = np.tile(np.arange(sps), n_sym)[:n_samples]
        ph0 = np.repeat(rng.uniform(0, 2 * np.pi, n_sym), sps)[:n_samples]
        return np.exp(1j * (2 * np.pi * f * k + ph0))
    if scheme == "AM-DSB":
        return (1.0 + 0.8 * _message(n_samples, rng)).astype(complex)
    if scheme == "AM-SSB":
        return hilbert(_message(n_samples, rng))
    if scheme == "WBFM":
        m = _message(n_samples, rng)
        return np.exp(1j * (2 * np.pi * 0.08 * np.cumsum(m) + rng.uniform(0, 2 * np.pi)))
    raise UnsupportedModulation(scheme)


def _resample(x, ratio, n_out):
    pos = np.arange(n_out) * ratio
    base = np.arange(len(x))
    return np.interp(pos, base, x.real) + 1j * np.interp(pos, base, x.imag)


def synthesize(
    scheme: str,
    chan: ChannelSpec = ChannelSpec(),
    samples_per_symbol: int = 8,
    length: int = 128,
    rng_seed=0,
    label: int | None = None,
    record_id: int = 0,
) -> SignalRecord:
    """One labelled record under ``chan``.

    ``length`` need not be a multiple of ``samples_per_symbol``; the last
    symbol is truncated. ``label`` defaults to the scheme's index in
    ``ALL_SCHEMES``.
    """
    if scheme not in ALL_SCHEMES:
        raise UnsupportedModulation(scheme)
    if length < MIN_LEN:
        raise ValueError(f"length must be >= {MIN_LEN}")
    if samples_per_symbol < 1:
        raise ValueError("samples_per_symbol must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    iq = _impaired(scheme, chan, samples_per_symbol, length, rng)
    snr = chan.snr_db if not chan.noiseless else 0
    if label is None:
        label = ALL_SCHEMES.index(scheme)
    return SignalRecord(iq.astype(np.float32), int(label), int(round(snr)), int(record_id))


def _impaired(scheme, chan, sps, length, rng):
    ratio = 1.0 + chan.sro
    need = length if chan.sro == 0 else int(math.ceil((length - 1) * ratio)) + 2
    s = baseband(scheme, need, sps, rng)
    if chan.sro != 0:
        s = _resample(s, ratio, length)
    n = np.arange(length)
    s = s * np.exp(1j * (chan.phase_offset + 2 * np.pi * chan.cfo_normalized * n))
    s = s / np.sqrt(np.mean(np.abs(s) ** 2))
    if not chan.noiseless:
        sigma = np.sqrt(10.0 ** (-chan.snr_db / 10.0) / 2.0)
        s = s + sigma * (rng.standard_normal(length) + 1j * rng.standard_normal(length))
    return np.stack([s.real, s.imag])


# ------------------------------------------------------------------ datasets

@dataclass
class DatasetRequest:
    classes: tuple[str, ...] = DEFAULT_CLASSES
    per_class: int = 200  # per (class, snr)
    snrs: tuple[int, ...] = (0, 10, 18)
    length: int = 128
    samples_per_symbol: int = 8
    seed: int = 0
    random_phase: bool = False
    max_cfo: float = 0.0
    max_sro: float = 0.0

    def validate(self):
        if len(self.classes) < 2:
            raise ConfigError("need at least two classes")
        for c in self.classes:
            if c not in ALL_SCHEMES:
                raise UnsupportedModulation(c)
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("duplicate class names")
        if self.per_class < 1:
            raise ConfigError("per_class must be >= 1")
        if not self.snrs:
            raise ConfigError("empty SNR grid")
        if self.length < MIN_LEN:
            raise ConfigError(f"length must be >= {MIN_LEN}")


@dataclass
class DatasetManifest:
    class_names: list[str]
    sample_len: int
    counts: dict[str, int]  # "<class>|<snr>" -> records
    seed: int | None
    format_version: int = FORMAT_VERSION
    n_records: int = 0
    samples_per_symbol: int | None = None
    provenance: dict[str, int] = field(default_factory=dict)  # derived id -> parent id

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        return cls(**json.loads(text))


def manifest_for(ds: SignalSet, seed=None, sps=None) -> DatasetManifest:
    counts: dict[str, int] = {}
    for lab, snr in zip(ds.labels.tolist(), ds.snr_db.tolist()):
        key = f"{ds.class_names[lab]}|{snr}"
        counts[key] = counts.get(key, 0) + 1
    prov = {}
    if ds.parent_ids is not None:
        prov = {str(i): int(p) for i, p in zip(ds.ids.tolist(), ds.parent_ids.tolist()) if i != p}
    return DatasetManifest(list(ds.class_names), ds.sample_len, dict(sorted(counts.items())), seed,
                           FORMAT_VERSION, len(ds), sps, prov)


def generate_dataset(request: DatasetRequest, out_dir: str | Path | None = None):
    """Synthesize the full (class, snr, k) grid; optionally write it to ``out_dir``.

    Each record draws from its own seed sequence ``[seed, class, snr, k]`` so
    records are independent of generation order.
    """
    request.validate()
    n = len(request.classes) * len(request.snrs) * request.per_class
    L = request.length
    iq = np.empty((n, 2, L), np.float32)
    labels = np.empty(n, np.int64)
    snrs = np.empty(n, np.int16)
    i = 0
    for ci, scheme in enumerate(request.classes):
        for si, snr in enumerate(request.snrs):
            for k in range(request.per_class):
                rng = np.random.default_rng([request.seed, ci, si, k])
                chan = ChannelSpec(
                    snr_db=snr,
                    cfo_normalized=rng.uniform(-request.max_cfo, request.max_cfo) if request.max_cfo else 0.0,
                    phase_offset=rng.uniform(0, 2 * np.pi) if request.random_phase else 0.0,
                    sro=rng.uniform(-request.max_sro, request.max_sro) if request.max_sro else 0.0,
                )
                iq[i] = _impaired(scheme, chan, request.samples_per_symbol, L, rng)
                labels[i] = ci
                snrs[i] = snr
                i += 1
    ds = SignalSet(iq, labels, snrs, np.arange(n, dtype=np.uint64), tuple(request.classes))
    manifest = manifest_for(ds, request.seed, request.samples_per_symbol)
    if out_dir is not None:
        save_dataset(ds, out_dir, manifest)
    return manifest, ds


def _record_dtype(L):
    return np.dtype([("id", "<u8"), ("label", "<u2"), ("snr", "<i2"), ("iq", "<f4", (2, L))])


def write_records(ds: SignalSet, path: str | Path) -> None:
    header = bytearray(MAGIC)
    header += struct.pack("<HHI", FORMAT_VERSION, ds.n_classes, ds.sample_len)
    for name in ds.class_names:
        raw = name.encode("utf-8")
        header += struct.pack("<H", len(raw)) + raw
    rec = np.empty(len(ds), _record_dtype(ds.sample_len))
    rec["id"] = ds.ids
    rec["label"] = ds.labels
    rec["snr"] = ds.snr_db
    rec["iq"] = ds.iq
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(rec.tobytes())


def read_records(path: str | Path) -> SignalSet:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, n_cls, L = struct.unpack_from("<HHI", raw, 4)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    off = 12
    names = []
    for _ in range(n_cls):
        (ln,) = struct.unpack_from("<H", raw, off)
        off += 2
        names.append(raw[off:off + ln].decode("utf-8"))
        off += ln
    dt = _record_dtype(L)
    body = len(raw) - off
    if body % dt.itemsize:
        raise DatasetFormatError(f"{path}: truncated record payload")
    rec = np.frombuffer(raw, dtype=dt, offset=off)
    return SignalSet(rec["iq"].astype(np.float32), rec["label"].astype(np.int64),
                     rec["snr"].astype(np.int16), rec["id"].astype(np.uint64), tuple(names))


def save_dataset(ds: SignalSet, out_dir, manifest: DatasetManifest | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records(ds, out / "dataset.sig")
    manifest = manifest or manifest_for(ds)
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    return out


def load_dataset(path) -> tuple[DatasetManifest, SignalSet]:
    p = Path(path)
    if p.is_dir():
        rec_path, man_path = p / "dataset.sig", p / "manifest.json"
    else:
        rec_path, man_path = p, p.with_name("manifest.json")
    ds = read_records(rec_path)
    if man_path.exists():
        manifest = DatasetManifest.from_json(man_path.read_text())
        if manifest.n_records != len(ds) or manifest.class_names != list(ds.class_names):
            raise DatasetFormatError("manifest disagrees with record file")
    else:
        manifest = manifest_for(ds)
    return manifest, ds


# -------------------------------------------------------------------- splits

def apportion(total: int, weights, tie_order=None) -> np.ndarray:
    """Largest-remainder split of ``total`` proportionally to ``weights``.

    Ties between equal remainders are resolved by ``tie_order`` (a permutation
    ranking the entries), or by position.
    """
    w = np.asarray(weights, dtype=float)
    if total == 0 or w.sum() == 0:
        return np.zeros(len(w), dtype=np.int64)
    quota = total * w / w.sum()
    base = np.floor(quota + 1e-9).astype(np.int64)
    rem = quota - base
    left = int(total - base.sum())
    if left > 0:
        rank = np.arange(len(w)) if tie_order is None else np.argsort(tie_order)
        order = np.lexsort((rank, -np.round(rem, 9)))
        base[order[:left]] += 1
    return base


def strata(ds: SignalSet) -> dict[tuple[int, int], np.ndarray]:
    keys = ds.labels.astype(np.int64) * 100_000 + (ds.snr_db.astype(np.int64) + 50_000)
    out = {}
    for key in np.unique(keys):
        idx = np.flatnonzero(keys == key)
        out[(int(key // 100_000), int(key % 100_000) - 50_000)] = idx
    return out


def split_dataset(
    ds: SignalSet,
    ratios: Sequence[float] = (0.6, 0.2, 0.2),
    trusted_fraction: float = 0.01,
    rng_seed: int = 0,
    trusted_per_class: int | None = None,
) -> dict[str, SignalSet]:
    """Stratified train/val/test split, then a trusted subset of train.

    Within each (class, snr) stratum the three portions are sized by
    largest remainder. The trusted subset has ``round(trusted_fraction *
    |train|)`` records, again apportioned over strata by largest remainder
    with seeded tie-breaking; ``trusted_per_class`` overrides this with an
    exact per-class count.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1) > 1e-9:
        raise ConfigError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    if trusted_per_class is None and not 0 < trusted_fraction <= 1:
        raise ConfigError("trusted_fraction must be in (0, 1]")
    rng = np.random.default_rng(rng_seed)
    train, val, test = [], [], []
    strat_train = []
    for key, idx in sorted(strata(ds).items()):
        idx = rng.permutation(idx)
        n_tr, n_va, _ = apportion(len(idx), ratios)
        train.append(idx[:n_tr])
        val.append(idx[n_tr:n_tr + n_va])
        test.append(idx[n_tr + n_va:])
        strat_train.append((key, idx[:n_tr]))

    trusted = []
    if trusted_per_class is not None:
        by_class: dict[int, list[np.ndarray]] = {}
        for (cls, _), idx in strat_train:
            by_class.setdefault(cls, []).append(idx)
        for cls in sorted(by_class):
            # interleave strata so SNRs are represented evenly
            pool = _interleave(by_class[cls])
            trusted.append(pool[:trusted_per_class])
    else:
        sizes = np.array([len(i) for _, i in strat_train])
        total = int(math.floor(trusted_fraction * sizes.sum() + 0.5))
        alloc = apportion(total, sizes, tie_order=rng.permutation(len(sizes)))
        trusted = [idx[:k] for (_, idx), k in zip(strat_train, alloc)]

    trusted_idx = np.concatenate(trusted) if trusted else np.zeros(0, np.int64)
    train_idx = np.concatenate(train) if train else np.zeros(0, np.int64)
    have = set(ds.labels[trusted_idx].tolist())
    missing = [c for c in sorted(set(ds.labels[train_idx].tolist())) if c not in have]
    if missing:
        raise InsufficientTrusted([ds.class_names[c] for c in missing])
    untrusted_idx = np.setdiff1d(train_idx, trusted_idx)
    return {
        "train_trusted": ds.subset(np.sort(trusted_idx)),
        "train_untrusted": ds.subset(np.sort(untrusted_idx)),
        "val": ds.subset(np.sort(np.concatenate(val))),
        "test": ds.subset(np.sort(np.concatenate(test))),
    }


def _interleave(arrays: Iterable[np.ndarray]) -> np.ndarray:
    arrays = list(arrays)
    out = []
    for k in range(max(len(a) for a in arrays)):
        out.extend(int(a[k]) for a in arrays if k < len(a))
    return np.asarray(out, dtype=np.int64)
