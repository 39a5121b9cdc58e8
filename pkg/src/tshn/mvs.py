"""Multi-view signal augmentation: cut a record into segments, shuffle, splice."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SegmentationError
from .sigsynth import SignalRecord, SignalSet

DERIVED_ID_BASE = 1 << 40


@dataclass(frozen=True)
class MvsConfig:
    n_segments: int = 4
    views_per_sample: int = 20
    min_segment_len: int = 8
    rng_seed: int = 0
    resample_segments: bool = False  # draw N uniformly from [2, n_segments] per view

    def __post_init__(self):
        if self.n_segments < 1 or self.min_segment_len < 1 or self.views_per_sample < 0:
            raise SegmentationError("n_segments, min_segment_len >= 1 and views_per_sample >= 0 required")

    def check(self, length: int):
        if self.n_segments * self.min_segment_len > length:
            raise SegmentationError(
                f"{self.n_segments} segments of >= {self.min_segment_len} samples do not fit length {length}")


def cut_points(length: int, n_segments: int, min_len: int, rng: np.random.Generator) -> np.ndarray:
    """``n_segments - 1`` sorted interior cut positions, uniform over all valid
    segmentations with every segment at least ``min_len`` long."""
    free = length - n_segments * min_len
    if free < 0:
        raise SegmentationError(f"cannot cut {length} samples into {n_segments} x >= {min_len}")
    if n_segments == 1:
        return np.zeros(0, dtype=np.int64)
    # stars and bars: choose where the n-1 bars fall among free + n - 1 slots
    bars = np.sort(rng.choice(free + n_segments - 1, n_segments - 1, replace=False))
    extra = np.diff(np.concatenate([[-1], bars, [free + n_segments - 1]])) - 1
    seg = extra + min_len
    return np.cumsum(seg)[:-1]


def shuffle_segments(iq: np.ndarray, cuts, perm) -> np.ndarray:
    """Splice the column segments of ``iq`` in the order ``perm``; I and Q move together."""
    segments = np.split(iq, cuts, axis=-1)
    return np.concatenate([segments[k] for k in perm], axis=-1)


def mvs_view(record, config: MvsConfig, rng: np.random.Generator):
    """One multi-view sample. Accepts a ``SignalRecord`` (returns one) or a bare 2 x L array."""
    iq = record.iq if isinstance(record, SignalRecord) else np.asarray(record)
    L = iq.shape[-1]
    config.check(L)
    n = config.n_segments
    if config.resample_segments and n > 2:
        n = int(rng.integers(2, n + 1))
    cuts = cut_points(L, n, config.min_segment_len, rng)
    out = shuffle_segments(iq, cuts, rng.permutation(n))
    if isinstance(record, SignalRecord):
        return SignalRecord(out, record.label, record.snr_db, record.id)
    return out


def expand_trusted(ds: SignalSet, config: MvsConfig, id_start: int = DERIVED_ID_BASE) -> SignalSet:
    """Originals followed by ``views_per_sample`` views of each record.

    Views inherit label and SNR, receive fresh ids from ``id_start`` upward
    and record their source id in ``parent_ids``.
    """
    if len(ds) == 0 or config.views_per_sample == 0:
        return ds
    config.check(ds.sample_len)
    V = config.views_per_sample
    n = len(ds)
    views = np.empty((n * V, 2, ds.sample_len), dtype=ds.iq.dtype)
    for i in range(n):
        rng = np.random.default_rng([config.rng_seed, int(ds.ids[i])])
        for v in range(V):
            views[i * V + v] = mvs_view(ds.iq[i], config, rng)
    rep = np.repeat(np.arange(n), V)
    derived = SignalSet(
        views,
        ds.labels[rep],
        ds.snr_db[rep],
        np.arange(id_start, id_start + n * V, dtype=np.uint64),
        ds.class_names,
        ds.ids[rep],
    )
    base = SignalSet(ds.iq, ds.labels, ds.snr_db, ds.ids, ds.class_names,
                     ds.ids if ds.parent_ids is None else ds.parent_ids)
    return SignalSet.concat([base, derived])
