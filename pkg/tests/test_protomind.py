import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import cosine_direct, soft_label_direct, softmax_row, teacher_loss_direct
from tshn.errors import MissingClass, NeedTwoClasses, NotWarmedUp, ShapeError, ShotsReduced, UnknownSample
from tshn.gradnet import Tensor
from tshn.protomind import (ONE_MINUS_COSINE, ConfidenceState, EpisodeSampler, EpisodeSpec,
                            PrototypeBank, compute_prototypes, ema_update_prototypes, mask_weights,
                            sample_episode, soft_label, teacher_losses, update_confidence)

vec = arrays(np.float64, 4, elements=st.floats(-5, 5))


# -- episodes ---------------------------------------------------------------

def test_eleven_way_five_shot_sizes():
    labels = np.repeat(np.arange(11), 25)
    ep = sample_episode(labels, 300, EpisodeSpec(11, 5, 15, 64), np.random.default_rng(0))
    assert len(ep.support) == 55 and len(ep.query) == 165 and len(ep.untrusted) == 64
    assert not set(ep.support) & set(ep.query)
    assert np.bincount(labels[ep.support]).tolist() == [5] * 11


def test_single_way_rejected():
    with pytest.raises(NeedTwoClasses):
        sample_episode(np.repeat(np.arange(3), 30), 10, EpisodeSpec(1, 5, 15), np.random.default_rng(0))


def test_episode_determinism():
    labels = np.repeat(np.arange(6), 30)
    s = EpisodeSampler(labels, 500, EpisodeSpec(4, 3, 5, 16))
    a, b = s.sample(np.random.default_rng(7)), s.sample(np.random.default_rng(7))
    for f in ("classes", "support", "query", "untrusted"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_shots_reduced_warning():
    labels = np.array([0] * 30 + [1] * 3)
    with pytest.warns(ShotsReduced) as rec:
        s = EpisodeSampler(labels, 0, EpisodeSpec(2, 5, 15))
    assert rec[0].message.cls == 1
    ep = s.sample(np.random.default_rng(0))
    ones = [i for i in np.concatenate([ep.support, ep.query]) if labels[i] == 1]
    assert len(ones) == 3 and not set(ep.support) & set(ep.query)


def test_untrusted_query_smaller_pool():
    ep = sample_episode(np.repeat(np.arange(2), 30), 10, EpisodeSpec(2, 1, 1, 64), np.random.default_rng(0))
    assert sorted(ep.untrusted.tolist()) == list(range(10))


# -- prototypes ---------------------------------------------------------------

def test_prototype_examples():
    assert np.array_equal(compute_prototypes([[3.0, 4.0]], [2])[2], [3.0, 4.0])
    assert np.allclose(compute_prototypes([[1, 0], [0, 1]], [0, 0])[0], [0.5, 0.5])
    v = np.array([0.2, -1.0, 4.0])
    assert np.allclose(compute_prototypes(np.tile(v, (5, 1)), [1] * 5)[1], v)
    with pytest.raises(MissingClass):
        compute_prototypes([[1.0, 0.0]], [0], classes=[0, 1])


def test_ema_examples():
    bank = PrototypeBank(1, 2, xi=0.3)
    ema_update_prototypes(bank, {0: np.array([1.0, 0.0])})
    ema_update_prototypes(bank, {0: np.array([0.0, 1.0])})
    assert np.allclose(bank.protos[0], [0.7, 0.3])
    ema_update_prototypes(bank, {0: bank.protos[0].copy()})
    assert np.allclose(bank.protos[0], [0.7, 0.3])
    full = PrototypeBank(1, 2, xi=1.0)
    full.update({0: np.array([1.0, 1.0])})
    full.update({0: np.array([5.0, -2.0])})
    assert np.array_equal(full.protos[0], [5.0, -2.0])
    with pytest.raises(ShapeError):
        bank.update({0: np.zeros(3)})


def test_refresh_schedule():
    bank = PrototypeBank(2, 2, update_interval=5, warmup_episodes=50)
    due = [e for e in range(70) if bank.due(e)]
    assert due == [50, 55, 60, 65]


# -- soft labels --------------------------------------------------------------

def test_soft_label_examples():
    p = soft_label(np.array([1.0, 0.0]), np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert np.allclose(p, soft_label_direct([1, -1]), atol=1e-12)
    assert np.allclose(p, [0.8808, 0.1192], atol=1e-4)
    p = soft_label(np.array([1.0, 1.0]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(p, [0.5, 0.5])
    protos = np.eye(4)
    assert np.argmax(soft_label(protos[1] * 3, protos)) == 1


def test_soft_label_needs_warm_bank():
    with pytest.raises(NotWarmedUp):
        soft_label(np.ones(2), PrototypeBank(2, 2))


@given(vec, arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), st.floats(0.5, 20))
def test_soft_label_matches_direct(f, protos, scale):
    if np.linalg.norm(f) < 1e-3 or np.any(np.linalg.norm(protos, axis=1) < 1e-3):
        return
    p = soft_label(f, protos, scale=scale)
    cos = [cosine_direct(f.tolist(), q.tolist()) for q in protos]
    assert np.allclose(p, softmax_row([scale * c for c in cos]), atol=1e-9)
    assert p.sum() == pytest.approx(1, abs=1e-9) and np.all(p >= 0)
    assert np.allclose(p, soft_label(f, protos, scale=scale, distance=ONE_MINUS_COSINE), atol=1e-12)


@given(vec, arrays(np.float64, (5, 4), elements=st.floats(-5, 5)), st.permutations(range(5)))
def test_soft_label_permutation_equivariant(f, protos, perm):
    p = soft_label(f, protos)
    assert np.allclose(soft_label(f, protos[list(perm)]), p[list(perm)], atol=1e-12)


@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), arrays(np.float64, (3, 4), elements=st.floats(-5, 5)),
       st.floats(0.01, 100))
def test_confidence_scale_invariant(feats, protos, k):
    if np.any(np.linalg.norm(feats, axis=1) < 1e-3) or np.any(np.linalg.norm(protos, axis=1) < 1e-3):
        return
    y = np.array([0, 1, 2])
    a = ConfidenceState(np.arange(3)).update_rows(np.arange(3), soft_label(feats, protos), y)
    b = ConfidenceState(np.arange(3)).update_rows(np.arange(3), soft_label(feats * k, protos * k), y)
    assert np.allclose(a.c, b.c, atol=1e-12)


# -- confidence ---------------------------------------------------------------

def test_confidence_examples():
    s = ConfidenceState(np.array([10, 11]), mu=0.6)
    update_confidence(s, 10, [1.0, 0.0], [1.0, 0.0])
    assert s.c[0] == pytest.approx(0.4)
    s.c[1] = 0.25
    update_confidence(s, 11, [0.25, 0.75], [1.0, 0.0])
    assert s.c[1] == pytest.approx(0.25)
    with pytest.raises(UnknownSample):
        update_confidence(s, 99, [1.0, 0.0], [1.0, 0.0])


@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 30))
def test_confidence_contraction(c0, q, steps):
    s = ConfidenceState(np.array([0]), mu=0.6, initial=c0)
    prev = c0
    for _ in range(steps):
        update_confidence(s, 0, [q, 1 - q], [1.0, 0.0])
        assert 0 <= s.c[0] <= 1
        assert abs(s.c[0] - q) == pytest.approx(0.6 * abs(prev - q), abs=1e-12)
        prev = s.c[0]
    # closed-form EMA limit
    assert s.c[0] == pytest.approx(q + (c0 - q) * 0.6 ** steps, abs=1e-12)


def test_confidence_csv(tmp_path):
    s = ConfidenceState(np.array([3, 4]))
    s.c[:] = [0.1, 0.9]
    s.to_csv(tmp_path / "c.csv", soft_argmax=[2, 0])
    assert (tmp_path / "c.csv").read_text().splitlines() == ["id,confidence,soft_label_argmax", "3,0.1,2", "4,0.9,0"]


# -- mask ---------------------------------------------------------------------

def test_mask_examples():
    eta, w = mask_weights(np.array([0.6, 0.5, 0.2]), 0.5)
    assert eta.tolist() == [0.6, 0.0, 0.0] and w == 1
    assert mask_weights(np.zeros(4))[1] == 0


@given(arrays(np.float64, 20, elements=st.floats(0, 1)), st.floats(0.01, 0.98), st.floats(0, 0.5))
def test_mask_monotone_in_delta(c, d1, bump):
    d2 = min(d1 + bump, 0.99)
    assert mask_weights(c, d2)[1] <= mask_weights(c, d1)[1]


# -- teacher loss -------------------------------------------------------------

def test_teacher_loss_examples():
    y = np.array([0, 1, 2])
    perfect = Tensor(np.eye(3) * 60.0)
    assert teacher_losses(perfect, y)[2].item() == pytest.approx(0, abs=1e-12)
    _, _, l = teacher_losses(Tensor(np.zeros((3, 3))), y, Tensor(np.zeros((2, 3))), [0, 1], np.zeros(2))
    assert l.item() == pytest.approx(math.log(3))


def _instance(rng, n_t=4, n_u=6, n=3):
    zt, zu = rng.standard_normal((n_t, n)), rng.standard_normal((n_u, n))
    yt, yu = rng.integers(0, n, n_t), rng.integers(0, n, n_u)
    conf = rng.uniform(0, 1, n_u)
    return zt, yt, zu, yu, conf


@pytest.mark.parametrize("seed", range(5))
def test_teacher_loss_matches_direct(seed):
    zt, yt, zu, yu, conf = _instance(np.random.default_rng(seed))
    eta, _ = mask_weights(conf)
    l_t, l_ur, l_cls = teacher_losses(Tensor(zt), yt, Tensor(zu), yu, eta)
    ref = teacher_loss_direct([softmax_row(r) for r in zt.tolist()], yt,
                              [softmax_row(r) for r in zu.tolist()], yu, conf, 0.5)
    assert (l_t.item(), l_ur.item(), l_cls.item()) == pytest.approx(ref, rel=1e-10)


def test_masked_rows_do_not_matter():
    zt, yt, zu, yu, conf = _instance(np.random.default_rng(0))
    conf[:3] = 0.1
    eta, _ = mask_weights(conf)
    base = teacher_losses(Tensor(zt), yt, Tensor(zu), yu, eta)[2].item()
    zu2 = zu.copy()
    zu2[:3] = np.random.default_rng(9).standard_normal((3, 3)) * 50
    assert teacher_losses(Tensor(zt), yt, Tensor(zu2), yu, eta)[2].item() == base
    # appending masked samples leaves the loss unchanged
    zu3 = np.vstack([zu, np.ones((2, 3))])
    got = teacher_losses(Tensor(zt), yt, Tensor(zu3), np.r_[yu, [0, 1]], np.r_[eta, [0.0, 0.0]])[2].item()
    assert got == pytest.approx(base, rel=1e-12)
