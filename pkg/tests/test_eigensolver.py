"""Covariance estimation and centralized/distributed eigendecomposition."""

import numpy as np
import pytest

from wasnvad.eigensolver import (
    centralized_evd,
    distributed_bin_evd,
    distributed_top_phi,
    read_eigenvalues_csv,
    read_eigenvectors_csv,
    sample_covariance,
    write_eigenvalues_csv,
    write_eigenvectors_csv,
)
from wasnvad.network import TreeTopology, build_graph, build_tree


def principal_angle(A, B):
    """Largest principal angle between the column spans of A and B."""
    Qa = np.linalg.qr(A)[0]
    Qb = np.linalg.qr(B)[0]
    s = np.linalg.svd(Qa.conj().T @ Qb, compute_uv=False)
    return float(np.arccos(np.clip(s.min(), -1.0, 1.0)))


def _diag_factor(d, n_seg=16):
    """Data matrix whose sample covariance is exactly diag(d)."""
    d = np.asarray(d, dtype=float)
    A = np.zeros((d.size, n_seg), dtype=complex)
    A[np.arange(d.size), np.arange(d.size)] = np.sqrt(d)
    return np.sqrt(n_seg) * A


def test_single_segment_outer_product():
    y = np.array([[1.0], [1.0j]])  # one segment, one bin
    cov = sample_covariance(y[:, :, None])
    expected = np.array([[1.0, -1.0j], [1.0j, 1.0]])
    np.testing.assert_allclose(cov.matrices[0], expected, atol=1e-15)


def test_covariance_hermitian_psd():
    rng = np.random.default_rng(2)
    Y = rng.standard_normal((5, 30, 4)) + 1j * rng.standard_normal((5, 30, 4))
    cov = sample_covariance(Y)
    for R in cov.matrices:
        scale = np.linalg.norm(R)
        assert np.linalg.norm(R - R.conj().T) <= 1e-10 * scale
        w = np.linalg.eigvalsh(R)
        assert w.min() >= -1e-8 * np.trace(R).real


def test_white_noise_covariance_concentrates():
    # iid complex white noise: diagonal -> sigma^2, off-diagonals below
    # 3 sigma^2 / sqrt(N)
    rng = np.random.default_rng(29)
    M, N, sigma2 = 4, 100_000, 1.7
    Y = np.sqrt(sigma2 / 2) * (
        rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    )
    R = sample_covariance(Y[:, :, None]).matrices[0]
    off = np.abs(R[~np.eye(M, dtype=bool)])
    assert off.max() < 3 * sigma2 / np.sqrt(N)
    np.testing.assert_allclose(np.diag(R).real, sigma2, rtol=0.02)


def test_centralized_diag():
    cov = sample_covariance(_diag_factor([4.0, 1.0], n_seg=2)[:, :, None])
    np.testing.assert_allclose(cov.matrices[0], np.diag([4.0, 1.0]), atol=1e-14)
    eigs = centralized_evd(cov, phi=1)
    assert eigs.eigenvalues[0, 0] == pytest.approx(4.0)
    np.testing.assert_allclose(eigs.vectors[0][:, 0], [1.0, 0.0], atol=1e-12)


def test_centralized_rank_one():
    a = np.array([[3.0], [4.0]])
    cov = sample_covariance(a[:, :, None])  # R = a a^H
    eigs = centralized_evd(cov)
    assert eigs.eigenvalues[0, 0] == pytest.approx(25.0)
    assert eigs.eigenvalues[0, 1] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(eigs.vectors[0][:, 0], [0.6, 0.8], atol=1e-12)


def test_centralized_reconstruction():
    rng = np.random.default_rng(31)
    A = rng.standard_normal((9, 40)) + 1j * rng.standard_normal((9, 40))
    cov = sample_covariance(A[:, :, None])
    eigs = centralized_evd(cov)
    U = eigs.vectors[0]
    R_hat = U @ np.diag(eigs.eigenvalues[0]) @ U.conj().T
    err = np.linalg.norm(R_hat - cov.matrices[0]) / np.linalg.norm(cov.matrices[0])
    assert err <= 1e-10


def test_centralized_rejects_non_hermitian():
    from wasnvad.eigensolver import CovarianceSet

    R = np.array([[1.0, 2.0], [0.5, 1.0]], dtype=complex)[None]
    cov = CovarianceSet(R, n_segments=1)
    with pytest.raises(ValueError, match="Hermitian"):
        centralized_evd(cov)


def test_sign_convention_deterministic():
    rng = np.random.default_rng(37)
    A = rng.standard_normal((6, 25)) + 1j * rng.standard_normal((6, 25))
    cov = sample_covariance(A[:, :, None])
    eigs = centralized_evd(cov)
    for col in eigs.vectors[0].T:
        lead = col[np.abs(col) > 1e-12][0]
        assert lead.real > 0 and abs(lead.imag) <= 1e-12 * abs(lead)


def _two_node_tree():
    return TreeTopology(parent={1: None, 2: 1}, root=1)


def test_two_node_diagonal_converges_fast():
    Y = _diag_factor([5.0, 3.0, 2.0, 1.0])
    blocks = [Y[:2], Y[2:]]
    X, lam, objs, converged, _, _ = distributed_bin_evd(
        blocks, _two_node_tree(), phi=2, max_iters=3
    )
    assert converged
    cen = centralized_evd(sample_covariance(Y[:, :, None]), phi=2)
    np.testing.assert_allclose(lam, cen.eigenvalues[0, :2], atol=1e-10)
    assert principal_angle(X, cen.vectors[0]) <= 1e-8


def test_full_basis_matches_centralized():
    rng = np.random.default_rng(41)
    Y = rng.standard_normal((5, 60)) + 1j * rng.standard_normal((5, 60))
    blocks = [Y[:2], Y[2:4], Y[4:]]
    tree = TreeTopology(parent={1: None, 2: 1, 3: 2}, root=1)
    X, lam, _, converged, _, _ = distributed_bin_evd(blocks, tree, phi=5)
    assert converged
    cen = centralized_evd(sample_covariance(Y[:, :, None]))
    np.testing.assert_allclose(lam, cen.eigenvalues[0], rtol=1e-6)
    np.testing.assert_allclose(X, cen.vectors[0], atol=1e-5)


def test_distributed_monotone_objective_and_orthonormal():
    rng = np.random.default_rng(43)
    Y = rng.standard_normal((6, 80)) + 1j * rng.standard_normal((6, 80))
    blocks = [Y[:2], Y[2:4], Y[4:]]
    tree = TreeTopology(parent={1: None, 2: 1, 3: 1}, root=1)
    X, lam, objs, converged, _, _ = distributed_bin_evd(blocks, tree, phi=3)
    assert converged
    R = Y @ Y.conj().T / 80
    slack = 1e-10 * np.trace(R).real
    assert np.all(np.diff(objs) >= -slack)
    gram = X.conj().T @ X
    np.testing.assert_allclose(gram, np.eye(3), atol=1e-8)


def test_distributed_oracle_equivalence_random():
    rng = np.random.default_rng(47)
    for _ in range(3):
        sizes = rng.integers(1, 4, size=4)
        Y = rng.standard_normal((sizes.sum(), 50)) + 1j * rng.standard_normal(
            (sizes.sum(), 50)
        )
        blocks = np.split(Y, np.cumsum(sizes)[:-1])
        tree = TreeTopology(parent={1: None, 2: 1, 3: 2, 4: 2}, root=1)
        phi = 3
        X, lam, _, converged, _, _ = distributed_bin_evd(blocks, tree, phi=phi)
        assert converged
        cen = centralized_evd(sample_covariance(Y[:, :, None]), phi=phi)
        np.testing.assert_allclose(lam, cen.eigenvalues[0, :phi], rtol=1e-6)
        assert principal_angle(X, cen.vectors[0]) <= 1e-4


def test_traffic_constant_as_network_doubles():
    # corridor layout, fixed per-node channel count and phi
    maxima = []
    for K in (10, 20, 40):
        pos = np.column_stack([np.arange(K, dtype=float) * 2.0, np.zeros(K)])
        tree = build_tree(build_graph(pos, radio_range=2.5))
        rng = np.random.default_rng(7)
        blocks = [
            rng.standard_normal((2, 40)) + 1j * rng.standard_normal((2, 40))
            for _ in range(K)
        ]
        *_, ledger, _ = distributed_bin_evd(blocks, tree, phi=2, max_iters=2 * K)
        maxima.append(ledger.max_per_node_round())
    for idx in (0, 1):
        vals = [m[idx] for m in maxima]
        assert max(vals) - min(vals) <= 1


def test_nonconvergence_flagged():
    rng = np.random.default_rng(53)
    Y = rng.standard_normal((4, 30)) + 1j * rng.standard_normal((4, 30))
    blocks = [Y[:2], Y[2:]]
    *_, converged, _, _ = distributed_bin_evd(
        blocks, _two_node_tree(), phi=2, max_iters=1
    )
    assert not converged


def test_multibins_and_csv_round_trip(tmp_path):
    rng = np.random.default_rng(59)
    Y1 = rng.standard_normal((4, 40, 3)) + 1j * rng.standard_normal((4, 40, 3))
    blocks = [Y1[:2], Y1[2:]]
    eigs, ledger = distributed_top_phi(blocks, _two_node_tree(), phi=2)
    assert eigs.eigenvalues.shape == (3, 2)
    assert eigs.vectors.shape == (3, 4, 2)
    assert ledger.totals()[0] > 0

    vals_path = tmp_path / "eigenvalues.csv"
    vecs_path = tmp_path / "eigenvectors.csv"
    write_eigenvalues_csv(eigs, vals_path)
    write_eigenvectors_csv(eigs, vecs_path)
    header = vals_path.read_text().splitlines()[0]
    assert header == "bin,index,eigenvalue"
    lam = read_eigenvalues_csv(vals_path)
    np.testing.assert_allclose(lam, eigs.eigenvalues, rtol=1e-15)
    vecs = read_eigenvectors_csv(vecs_path)
    np.testing.assert_allclose(vecs, eigs.vectors, atol=1e-15)
