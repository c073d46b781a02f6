"""Two-component energy unmixing and correlation scoring."""

import numpy as np
import pytest

from wasnvad.acoustics import speech_surrogate
from wasnvad.signals import source_energy_oracle
from wasnvad.unmixing import (
    ClusterEnergies,
    mnica,
    mnica_multi,
    mnica_two,
    pearson,
)


def _surrogate_track(seed, duration=64.0, n=1000):
    sig = speech_surrogate(duration, seed=seed)
    return source_energy_oracle(sig, 2048, 1024).values[:n]


def test_rank_one_recovery():
    s = np.random.default_rng(5).uniform(0.0, 2.0, 200)
    Y = np.outer([1.0, 2.0, 3.0], s)
    res = mnica_two(Y)
    assert 1.0 - pearson(res.estimate.values, s) <= 1e-6
    assert res.estimate.values.max() == 1.0
    assert res.estimate.values.min() >= 0.0
    assert res.residual.values.min() >= 0.0
    np.testing.assert_allclose(res.mixing / res.mixing[0], [1.0, 2.0, 3.0], rtol=0.05)


def test_single_component_rank_one():
    s = np.random.default_rng(2).chisquare(1, 150)
    Y = np.outer([0.5, 1.5], s)
    res = mnica_multi(Y, 1)
    assert len(res) == 1
    assert pearson(res[0].estimate.values, s) > 1 - 1e-9
    assert res[0].converged


def test_dominant_source_recovered():
    # one interferer 10 dB below the target, 3 channels, 1000 segments
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        s1 = _surrogate_track((seed, 1))
        s2 = _surrogate_track((seed, 2))
        s1 = s1 / s1.mean()
        s2 = 0.1 * s2 / s2.mean()
        H = rng.uniform(0.3, 1.0, (3, 2))
        Y = H[:, :1] * s1 + H[:, 1:] * s2
        res = mnica_two(Y, seed=seed)
        wins += pearson(res.estimate.values, s1) >= 0.9
    assert wins >= 18


def test_two_component_separation():
    # near block-diagonal gains: each source owned by two channels
    H = np.array([[1.0, 0.05], [0.8, 0.08], [0.06, 0.9], [0.04, 1.1]])
    for seed in range(12):
        s1 = _surrogate_track((seed, 3))
        s2 = _surrogate_track((seed, 4))
        s1, s2 = s1 / s1.mean(), s2 / s2.mean()
        Y = H @ np.vstack([s1, s2])
        res = mnica_multi(Y, 2, seed=seed)
        for s in (s1, s2):
            assert max(pearson(r.estimate.values, s) for r in res) >= 0.95


def test_scale_invariance():
    s1 = _surrogate_track((0, 1))
    s2 = _surrogate_track((0, 2))
    s1, s2 = s1 / s1.mean(), 0.1 * s2 / s2.mean()
    H = np.random.default_rng(0).uniform(0.3, 1.0, (3, 2))
    Y = H[:, :1] * s1 + H[:, 1:] * s2
    base = pearson(mnica_two(Y, seed=3).estimate.values, s1)
    for c in (137.0, 1e-4, 2.0**9):
        scaled = pearson(mnica_two(c * Y, seed=3).estimate.values, s1)
        assert abs(scaled - base) < 1e-9


def test_iterates_stay_nonnegative():
    rng = np.random.default_rng(5)
    Y = np.outer([1.0, 2.0], rng.chisquare(1, 60)) + rng.uniform(0, 0.05, (2, 60))
    for k in range(1, 9):
        H, S, _, _ = mnica(Y, 2, max_iters=k, seed=2)
        assert H.min() >= 0.0
        assert S.min() >= 0.0


def test_objective_monotone():
    rng = np.random.default_rng(8)
    Y = np.abs(rng.standard_normal((4, 120)))
    _, _, objs, _ = mnica(Y, 2, seed=1)
    assert np.all(np.diff(objs) <= 1e-10 * objs[0])


def test_nonconvergence_flagged():
    rng = np.random.default_rng(8)
    Y = np.abs(rng.standard_normal((4, 120)))
    res = mnica_two(Y, max_iters=1)
    assert not res.converged


def test_all_zero_rejected():
    with pytest.raises(ValueError, match="all-zero"):
        mnica_two(np.zeros((3, 40)))


def test_too_few_segments_rejected():
    with pytest.raises(ValueError, match="at least 10"):
        mnica_two(np.ones((2, 5)))


def test_negative_energies_rejected():
    with pytest.raises(ValueError, match="non-negative"):
        ClusterEnergies(np.array([[1.0, -0.5, 2.0]]))


def test_pearson_self():
    a = np.random.default_rng(3).random(50)
    assert np.isclose(pearson(a, a), 1.0, atol=1e-12)


def test_pearson_affine_invariance():
    a = np.random.default_rng(4).random(50)
    assert np.isclose(pearson(3.0 * a + 2.0, a), 1.0, atol=1e-12)


def test_pearson_reversal():
    assert np.isclose(pearson([1.0, 2.0, 3.0, 4.0], [4.0, 3.0, 2.0, 1.0]), -1.0, atol=1e-12)


def test_pearson_constant_rejected():
    with pytest.raises(ValueError, match="constant"):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_pearson_shape_mismatch():
    with pytest.raises(ValueError, match="share one length"):
        pearson([1.0, 2.0], [1.0, 2.0, 3.0])
