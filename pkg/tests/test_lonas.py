"""Indicator construction, NCut bipartitioning, and node clustering."""

import warnings
from itertools import combinations

import numpy as np
import pytest

from wasnvad.eigensolver import CovarianceSet, centralized_evd
from wasnvad.lonas import (
    ClusterAssignment,
    IndicatorMatrix,
    build_affinity,
    build_indicator,
    emis,
    lonas_cluster,
    ncut_bipartition,
    ncut_value,
    read_assignment_json,
    write_assignment_json,
)


def test_indicator_single_bin():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((5, 30)) + 1j * rng.standard_normal((5, 30))
    cov = CovarianceSet((A @ A.conj().T / 30)[None], n_segments=30)
    eigs = centralized_evd(cov, phi=3)
    ind = build_indicator(eigs, 2)
    np.testing.assert_allclose(ind.values, np.abs(eigs.vectors[0][:, :2]))


def test_indicator_sums_over_bins():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((4, 20)) + 1j * rng.standard_normal((4, 20))
    R = A @ A.conj().T / 20
    cov = CovarianceSet(np.stack([R, R]), n_segments=20)
    eigs = centralized_evd(cov, phi=2)
    ind = build_indicator(eigs, 2)
    single = np.abs(eigs.vectors[0][:, :2])
    np.testing.assert_allclose(ind.values, 2.0 * single, rtol=1e-12)


def test_indicator_q_hat_bounds():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((4, 20)) + 1j * rng.standard_normal((4, 20))
    cov = CovarianceSet((A @ A.conj().T / 20)[None], n_segments=20)
    eigs = centralized_evd(cov, phi=2)
    with pytest.raises(ValueError, match="exceeds"):
        build_indicator(eigs, 3)


def test_block_diagonal_rows_separate():
    # two decoupled channel groups: each row expresses exactly one column
    rng = np.random.default_rng(11)

    def rank1(m, scale):
        a = rng.standard_normal((m, 1)) + 1j * rng.standard_normal((m, 1))
        return scale * (a @ a.conj().T) + 0.01 * np.eye(m)

    R = np.zeros((6, 6), dtype=complex)
    R[:3, :3] = rank1(3, 4.0)
    R[3:, 3:] = rank1(3, 2.0)
    cov = CovarianceSet(R[None], n_segments=100)
    ind = build_indicator(centralized_evd(cov, phi=3), 2)
    vals = ind.values
    strong = vals.argmax(axis=1)
    assert len(set(strong[:3])) == 1 and len(set(strong[3:])) == 1
    assert strong[0] != strong[3]
    # the off-column of each group is (numerically) dead
    assert vals[:3, strong[3]].max() < 1e-10
    assert vals[3:, strong[0]].max() < 1e-10


def test_affinity_identical_rows():
    rows = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 1.0]])
    g = build_affinity(IndicatorMatrix(rows), sigma_aff=0.5)
    assert g.theta[0, 1] == pytest.approx(1.0)


def test_affinity_monotone_in_distance():
    rows = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    g = build_affinity(IndicatorMatrix(rows), sigma_aff=1.0)
    assert g.theta[0, 1] > g.theta[0, 2]


def test_affinity_tight_groups():
    rng = np.random.default_rng(3)
    rows = np.vstack(
        [
            np.array([1.0, 0.0]) + 0.01 * rng.standard_normal((8, 2)),
            np.array([0.0, 1.0]) + 0.01 * rng.standard_normal((3, 2)),
        ]
    )
    g = build_affinity(IndicatorMatrix(np.abs(rows)))  # default sigma
    within = [g.theta[i, j] for i in range(8) for j in range(i + 1, 8)]
    within += [g.theta[i, j] for i in range(8, 11) for j in range(i + 1, 11)]
    cross = [g.theta[i, j] for i in range(8) for j in range(8, 11)]
    assert min(within) >= 10 * max(cross)


def test_affinity_degenerate_warns():
    rows = np.ones((4, 2))
    with pytest.warns(UserWarning, match="degenerate"):
        build_affinity(IndicatorMatrix(rows))


def test_two_block_partition():
    theta = np.array(
        [
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 1.0],
            [0.0, 0.0, 1.0, 1.0],
        ]
    )
    z, zbar, fiedler = ncut_bipartition(theta)
    assert z == [1, 2] and zbar == [3, 4]
    assert fiedler == pytest.approx(0.0, abs=1e-12)


def test_bipartition_needs_two_points():
    with pytest.raises(ValueError, match="two points"):
        ncut_bipartition(np.array([[1.0]]))


def exhaustive_ncut_values(theta):
    """NCut of every proper subset (all 2^M - 2 of them)."""
    n = theta.shape[0]
    vals = []
    for r in range(1, n):
        for comb in combinations(range(1, n + 1), r):
            vals.append(ncut_value(theta, comb))
    return np.array(vals)


def clustered_rows(seed, jitter=0.05):
    """Random indicator rows drawn around separated cluster centers."""
    rng = np.random.default_rng(seed)
    M = int(rng.integers(4, 9))
    k = 2 if M <= 5 else int(rng.integers(2, 4))
    while True:
        centers = rng.uniform(0, 1, (k, 2))
        d = np.linalg.norm(centers[:, None] - centers[None, :], axis=2)
        np.fill_diagonal(d, np.inf)
        if d.min() >= 0.45:
            break
    labels = np.concatenate([np.arange(k), rng.integers(0, k, M - k)])
    rng.shuffle(labels)
    return np.abs(centers[labels] + jitter * rng.standard_normal((M, 2)))


def test_relaxed_cut_near_exhaustive_optimum():
    # module-sized slice of the exhaustive-oracle comparison
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seed in range(40):
            theta = build_affinity(IndicatorMatrix(clustered_rows(seed))).theta
            z, _, _ = ncut_bipartition(theta)
            v = ncut_value(theta, z)
            assert v <= np.quantile(exhaustive_ncut_values(theta), 0.1) + 1e-12


def test_barbell_splits_at_bridge():
    theta = np.zeros((8, 8))
    for grp in (range(4), range(4, 8)):
        for i in grp:
            for j in grp:
                if i != j:
                    theta[i, j] = 1.0
    theta[3, 4] = theta[4, 3] = 0.5
    z, zbar, _ = ncut_bipartition(theta)
    assert z == [1, 2, 3, 4] and zbar == [5, 6, 7, 8]
    vals = exhaustive_ncut_values(theta)
    assert ncut_value(theta, z) == pytest.approx(vals.min())


def test_bipartition_scale_invariant():
    theta = build_affinity(IndicatorMatrix(clustered_rows(9))).theta
    base = ncut_bipartition(theta)
    scaled = ncut_bipartition(73.0 * theta)
    assert base[0] == scaled[0] and base[1] == scaled[1]


def _two_source_indicator():
    # channels 1-3 follow source 1, channels 4-6 source 2, channel 7 weak
    return IndicatorMatrix(
        np.array(
            [
                [0.9, 0.05],
                [0.85, 0.1],
                [0.8, 0.02],
                [0.07, 0.9],
                [0.01, 0.85],
                [0.05, 0.95],
                [0.1, 0.1],
            ]
        )
    )


def test_lonas_cluster_basic():
    assign = lonas_cluster(_two_source_indicator(), 2)
    assert assign.sources[1] == [1, 2, 3]
    assert assign.sources[2] == [4, 5, 6]
    assert assign.dummy == [7]
    assert assign.n_clusters == 3


def test_lonas_cluster_zero_sources():
    assign = lonas_cluster(_two_source_indicator(), 0)
    assert assign.sources == {}
    assert assign.dummy == [1, 2, 3, 4, 5, 6, 7]


def test_lonas_cluster_deterministic():
    a = lonas_cluster(_two_source_indicator(), 2)
    b = lonas_cluster(_two_source_indicator(), 2)
    assert a.sources == b.sources and a.dummy == b.dummy


def test_lonas_cluster_needs_enough_channels():
    ind = IndicatorMatrix(np.abs(np.random.default_rng(0).standard_normal((3, 2))))
    with pytest.raises(ValueError, match="at least"):
        lonas_cluster(ind, 3)


def test_lonas_cluster_partition_property():
    # every channel/node lands in exactly one cluster, Q+1 clusters total
    for seed in range(5):
        rng = np.random.default_rng(seed)
        rows = np.abs(rng.standard_normal((9, 2))) + 0.01
        assign = lonas_cluster(IndicatorMatrix(rows), 2)
        assert assign.n_clusters == 3
        all_nodes = sorted(
            n for ns in assign.sources.values() for n in ns
        ) + assign.dummy
        assert sorted(all_nodes) == list(range(1, 10))


def test_lonas_cluster_rejects_column_mismatch():
    rows = np.abs(np.random.default_rng(1).standard_normal((9, 3))) + 0.01
    with pytest.raises(ValueError, match="columns"):
        lonas_cluster(IndicatorMatrix(rows), 2)


def test_lonas_cluster_channel_majority():
    # node 2 owns rows 2-4: two rows on source 1 outvote one weak row
    rows = np.array(
        [
            [0.9, 0.0],
            [0.8, 0.1],
            [0.9, 0.05],
            [0.1, 0.05],
            [0.05, 0.9],
            [0.0, 0.85],
        ]
    )
    assign = lonas_cluster(
        IndicatorMatrix(rows), 2, channel_nodes=[1, 2, 2, 2, 3, 4]
    )
    assert 2 in assign.sources[1]


def test_emis_identical():
    a = ClusterAssignment({1: [1, 2], 2: [3, 4]}, [5])
    assert emis(a, a) == 0.0


def test_emis_one_of_twelve():
    truth = ClusterAssignment({1: list(range(1, 7)), 2: list(range(7, 12))}, [12])
    est = ClusterAssignment({1: list(range(1, 7)), 2: list(range(7, 11))}, [11, 12])
    assert emis(est, truth) == pytest.approx(100.0 / 12.0)


def test_emis_label_permutation_invariant():
    truth = ClusterAssignment({1: [1, 2], 2: [3, 4]}, [5])
    swapped = ClusterAssignment({1: [3, 4], 2: [1, 2]}, [5])
    assert emis(swapped, truth) == 0.0


def test_emis_rejects_mismatched_nodes():
    a = ClusterAssignment({1: [1, 2]}, [3])
    b = ClusterAssignment({1: [1, 2]}, [4])
    with pytest.raises(ValueError, match="node sets"):
        emis(a, b)


def test_assignment_validation():
    with pytest.raises(ValueError, match="twice"):
        ClusterAssignment({1: [1, 2], 2: [2, 3]}, [])
    with pytest.raises(ValueError, match="empty"):
        ClusterAssignment({1: []}, [1])


def test_assignment_json_round_trip(tmp_path):
    assign = ClusterAssignment({1: [2, 12], 2: [5, 9]}, [1, 4, 17])
    path = tmp_path / "clusters.json"
    write_assignment_json(assign, path)
    back = read_assignment_json(path)
    assert back.sources == assign.sources
    assert back.dummy == assign.dummy
