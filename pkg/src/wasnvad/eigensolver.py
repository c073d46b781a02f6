"""Per-bin covariance estimation and eigendecomposition.

Provides the centralized dense solver (oracle) and a distributed
alternating-optimization solver that runs over a tree topology using the
round-based message simulation of the network module. One node updates per
iteration; all other blocks move inside per-branch compressed subspaces, so
each message carries a fixed number of scalars regardless of network size.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._util import float_repr, named_rng
from .network import TrafficLedger, TreeTopology, run_rounds
from .signals import StftTensor

_RANK_TOL = 1e-12


@dataclass
class CovarianceSet:
    """Per-bin Hermitian sample covariance matrices."""

    matrices: np.ndarray  # (F, M, M) complex
    n_segments: int

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=np.complex128)
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise ValueError("matrices must be (F, M, M)")

    @property
    def n_bins(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_channels(self) -> int:
        return self.matrices.shape[1]


@dataclass
class EigenSet:
    """Per-bin eigenvalues (descending) and eigenvector columns."""

    eigenvalues: np.ndarray  # (F, n_eig) real
    vectors: np.ndarray  # (F, M, n_vec) complex
    phi: int | None = None
    converged: bool = True

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        self.vectors = np.asarray(self.vectors, dtype=np.complex128)

    @property
    def n_bins(self) -> int:
        return self.eigenvalues.shape[0]


def sample_covariance(stft) -> CovarianceSet:
    """R^(f) = Y^(f) (Y^(f))^H / N over segments, one matrix per bin.

    Accepts an StftTensor or any (channel, segment, bin) complex array."""
    if isinstance(stft, StftTensor):
        vals = stft.values  # (M, N, F)
    else:
        vals = np.asarray(stft, dtype=np.complex128)
        if vals.ndim != 3:
            raise ValueError("need a (channel, segment, bin) tensor")
    n = vals.shape[1]
    if n < 1:
        raise ValueError("need at least one segment")
    mats = np.einsum("mnf,pnf->fmp", vals, vals.conj()) / n
    return CovarianceSet(mats, n)


def fix_sign(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column's phase so its first non-negligible entry is
    real-positive."""
    out = np.array(vectors, dtype=np.complex128, copy=True)
    M, ncol = out.shape
    for j in range(ncol):
        col = out[:, j]
        mags = np.abs(col)
        nz = np.nonzero(mags > 1e-12 * max(mags.max(), 1e-300))[0]
        if nz.size == 0:
            continue
        pivot = col[nz[0]]
        out[:, j] = col * (np.conj(pivot) / abs(pivot))
    return out


def centralized_evd(cov: CovarianceSet, phi: int | None = None) -> EigenSet:
    """Dense Hermitian eigendecomposition per bin, eigenvalues descending.

    All eigenvalues are returned; eigenvector columns are truncated to phi
    when given.
    """
    F, M, _ = cov.matrices.shape
    if phi is None:
        phi = M
    if phi > M:
        raise ValueError("phi must not exceed channel count")
    eigenvalues = np.empty((F, M))
    vectors = np.empty((F, M, phi), dtype=np.complex128)
    for f in range(F):
        R = cov.matrices[f]
        scale = max(np.linalg.norm(R), 1e-300)
        if np.linalg.norm(R - R.conj().T) > 1e-10 * scale:
            raise ValueError(f"bin {f}: matrix is not Hermitian within tolerance")
        w, U = np.linalg.eigh(0.5 * (R + R.conj().T))
        w = w[::-1]
        U = U[:, ::-1]
        eigenvalues[f] = w
        vectors[f] = fix_sign(U[:, :phi])
    return EigenSet(eigenvalues, vectors, phi=phi)


def _branch_structure(tree: TreeTopology, q: int):
    """Next-hop map toward q and each node's children relative to q."""
    hop = tree.next_hop_map(q)
    children = {k: [] for k in tree.parent}
    for k, h in hop.items():
        if h is not None:
            children[h].append(k)
    for k in children:
        children[k].sort()
    return hop, children


def _pack(*arrays) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=np.complex128).ravel() for a in arrays])


def _local_update(Yq, branch_data, phi, n_seg):
    """Solve the compressed trace-maximization at the updating node.

    branch_data: ordered list of (z_b, om_b). Returns (new local block,
    per-branch rotations, objective value).
    """
    mq = Yq.shape[0]
    parts = [Yq] + [z for z, _ in branch_data]
    Ytil = np.vstack(parts)
    Rtil = Ytil @ Ytil.conj().T / n_seg
    oms = [om for _, om in branch_data]
    Omega = scipy.linalg.block_diag(np.eye(mq), *oms) if oms else np.eye(mq)
    Rtil = 0.5 * (Rtil + Rtil.conj().T)
    Omega = 0.5 * (Omega + Omega.conj().T)
    # directions in Omega's null space do not move the network-wide iterate,
    # so a pseudo-whitening that drops them is exact
    d, E = np.linalg.eigh(Omega)
    keep = d > _RANK_TOL * d.max()
    Wh = E[:, keep] / np.sqrt(d[keep])
    Rred = Wh.conj().T @ Rtil @ Wh
    Rred = 0.5 * (Rred + Rred.conj().T)
    w, V = np.linalg.eigh(Rred)
    Vt = Wh @ V[:, ::-1][:, :phi]
    obj = float(np.sum(w[::-1][:phi].real))
    Xq = Vt[:mq]
    rotations = []
    r = mq
    for _ in branch_data:
        rotations.append(Vt[r : r + phi])
        r += phi
    return Xq, rotations, obj


def _gather_apply_phase(
    tree, target, states, ledger, start_round, make_payload, at_target, apply_msg
):
    """Generic up-sweep to ``target`` followed by a broadcast down.

    make_payload(state, children_payloads) -> up-message array;
    at_target(state, payloads) -> down-message array;
    apply_msg(state, msg) -> None.
    """
    hop, children = _branch_structure(tree, target)
    ecc = tree.eccentricity(target)
    rounds = 2 * ecc + 1 if ecc > 0 else 1

    for k in states:
        st = states[k]
        st["_up"] = {}
        st["_sent"] = False
        st["_done"] = False

    def handler(k, rnd, state, inbox):
        out = {}
        for sender, msg in inbox.items():
            if sender == hop[k]:
                apply_msg(state, msg)
                state["_done"] = True
                for c in children[k]:
                    out[c] = msg
            else:
                state["_up"][sender] = msg
        if k == target:
            if not state["_sent"] and len(state["_up"]) == len(children[k]):
                payloads = [state["_up"][c] for c in children[k]]
                down = at_target(state, payloads)
                state["_sent"] = True
                state["_done"] = True
                for c in children[k]:
                    out[c] = down
        else:
            if not state["_sent"] and len(state["_up"]) == len(children[k]):
                payloads = [state["_up"][c] for c in children[k]]
                out[hop[k]] = make_payload(state, payloads)
                state["_sent"] = True
        return out

    _, _, inboxes = run_rounds(tree, handler, rounds, states, ledger, start_round)
    if any(inboxes[k] for k in inboxes) or not all(
        states[k]["_done"] for k in states
    ):
        raise RuntimeError("broadcast phase did not complete in allotted rounds")
    return start_round + rounds


def _update_iteration(tree, q, states, ledger, start_round, phi, n_seg):
    """One alternating-optimization iteration: node q re-solves its block."""
    hop, children = _branch_structure(tree, q)
    ecc = tree.eccentricity(q)
    rounds = 2 * ecc + 1 if ecc > 0 else 1

    for k in states:
        st = states[k]
        st["_up"] = {}
        st["_sent"] = False
        st["_done"] = False

    def handler(k, rnd, state, inbox):
        out = {}
        for sender, msg in inbox.items():
            if k != q and sender == hop[k]:
                G = msg[: phi * phi].reshape(phi, phi)
                obj = float(msg[phi * phi].real)
                state["X"] = state["X"] @ G
                state["obj"] = obj
                state["_done"] = True
                for c in children[k]:
                    out[c] = msg
            else:
                state["_up"][sender] = msg
        if k == q:
            if not state["_sent"] and len(state["_up"]) == len(children[k]):
                branch_data = []
                for c in children[k]:
                    msg = state["_up"][c]
                    z = msg[: phi * n_seg].reshape(phi, n_seg)
                    om = msg[phi * n_seg :].reshape(phi, phi)
                    branch_data.append((z, om))
                Xq, rotations, obj = _local_update(
                    state["Y"], branch_data, phi, n_seg
                )
                state["X"] = Xq
                state["obj"] = obj
                state["_sent"] = True
                state["_done"] = True
                for c, G in zip(children[k], rotations):
                    out[c] = _pack(G, np.array([obj]))
        else:
            if not state["_sent"] and len(state["_up"]) == len(children[k]):
                X, Y = state["X"], state["Y"]
                z = X.conj().T @ Y
                om = X.conj().T @ X
                for c in children[k]:
                    msg = state["_up"][c]
                    z = z + msg[: phi * n_seg].reshape(phi, n_seg)
                    om = om + msg[phi * n_seg :].reshape(phi, phi)
                out[hop[k]] = _pack(z, om)
                state["_sent"] = True
        return out

    _, _, inboxes = run_rounds(tree, handler, rounds, states, ledger, start_round)
    if any(inboxes[k] for k in inboxes) or not all(
        states[k]["_done"] for k in states
    ):
        raise RuntimeError("update iteration did not complete in allotted rounds")
    return start_round + rounds


def distributed_bin_evd(
    blocks,
    tree: TreeTopology,
    phi: int,
    max_iters: int = 200,
    tol: float = 1e-8,
    seed: int = 0,
    ledger: TrafficLedger | None = None,
    start_round: int = 0,
):
    """Distributed top-phi eigenpair estimation for one frequency bin.

    blocks: per-node complex observation matrices (M_k x N), ordered by
    node id 1..K. Returns (X (M x phi), eigenvalues (phi,), objective
    history, converged, ledger, next_round).
    """
    nodes = sorted(tree.parent)
    K = len(nodes)
    if len(blocks) != K:
        raise ValueError("one block per tree node required")
    blocks = [np.asarray(b, dtype=np.complex128) for b in blocks]
    sizes = [b.shape[0] for b in blocks]
    M = sum(sizes)
    n_seg = blocks[0].shape[1]
    if any(b.shape[1] != n_seg for b in blocks):
        raise ValueError("blocks must share the segment count")
    if phi > M:
        raise ValueError("phi must not exceed total channel count")
    if ledger is None:
        ledger = TrafficLedger()

    rng = named_rng(seed, "evd-init")
    states = {}
    for k, blk in zip(nodes, blocks):
        X0 = rng.standard_normal((blk.shape[0], phi)) + 1j * rng.standard_normal(
            (blk.shape[0], phi)
        )
        states[k] = {"Y": blk, "X": X0, "obj": np.nan}

    # network-wide orthonormalization of the random start: fuse the Gram
    # up the tree, share the whitening transform down
    def _gram_payload(state, child_payloads):
        g = state["X"].conj().T @ state["X"]
        for msg in child_payloads:
            g = g + msg.reshape(phi, phi)
        return g.ravel()

    def _gram_root(state, child_payloads):
        g = state["X"].conj().T @ state["X"]
        for msg in child_payloads:
            g = g + msg.reshape(phi, phi)
        T = np.linalg.inv(np.linalg.cholesky(0.5 * (g + g.conj().T)).conj().T)
        state["X"] = state["X"] @ T
        return T.ravel()

    def _apply_T(state, msg):
        state["X"] = state["X"] @ msg.reshape(phi, phi)

    rnd = _gather_apply_phase(
        tree, tree.root, states, ledger, start_round, _gram_payload, _gram_root, _apply_T
    )

    objs = []
    converged = False
    for it in range(max_iters):
        q = nodes[it % K]
        rnd = _update_iteration(tree, q, states, ledger, rnd, phi, n_seg)
        objs.append(states[q]["obj"])
        if len(objs) > K and abs(objs[-1] - objs[-1 - K]) <= tol * abs(objs[-1]):
            converged = True
            break

    # final rotation onto the eigenbasis: fuse S = sum_k Y_k^H X_k, solve the
    # phi x phi problem at the root, share the rotation and eigenvalues down
    final = {}

    def _ritz_payload(state, child_payloads):
        s = state["Y"].conj().T @ state["X"]
        for msg in child_payloads:
            s = s + msg.reshape(n_seg, phi)
        return s.ravel()

    def _ritz_root(state, child_payloads):
        s = state["Y"].conj().T @ state["X"]
        for msg in child_payloads:
            s = s + msg.reshape(n_seg, phi)
        Rc = s.conj().T @ s / n_seg
        Rc = 0.5 * (Rc + Rc.conj().T)
        lam, V = np.linalg.eigh(Rc)
        lam = lam[::-1]
        V = V[:, ::-1]
        state["X"] = state["X"] @ V
        state["lam"] = lam
        final["lam"] = lam.real
        return _pack(V, lam.astype(np.complex128))

    def _apply_ritz(state, msg):
        V = msg[: phi * phi].reshape(phi, phi)
        state["X"] = state["X"] @ V
        state["lam"] = msg[phi * phi :].real

    _gather_apply_phase(
        tree, tree.root, states, ledger, rnd, _ritz_payload, _ritz_root, _apply_ritz
    )

    X = np.vstack([states[k]["X"] for k in nodes])
    X = fix_sign(X)
    return X, final["lam"], np.array(objs), converged, ledger, rnd


def distributed_top_phi(
    blocks,
    tree: TreeTopology,
    phi: int,
    max_iters: int = 200,
    tol: float = 1e-8,
    seed: int = 0,
):
    """Distributed top-phi eigendecomposition across all bins.

    blocks: per-node StftTensor list ordered by node id. Returns
    (EigenSet, TrafficLedger); EigenSet carries phi eigenvalues and
    eigenvector columns per bin.
    """
    if not blocks:
        raise ValueError("no blocks given")
    if isinstance(blocks[0], StftTensor):
        n_bins = blocks[0].n_bins
        raw = [b.values for b in blocks]  # (M_k, N, F)
    else:
        raw = [np.asarray(b, dtype=np.complex128) for b in blocks]
        if raw[0].ndim == 2:
            raw = [b[:, :, None] for b in raw]
        n_bins = raw[0].shape[2]
    M = sum(b.shape[0] for b in raw)

    eigenvalues = np.empty((n_bins, phi))
    vectors = np.empty((n_bins, M, phi), dtype=np.complex128)
    ledger = TrafficLedger()
    rnd = 0
    all_converged = True
    for f in range(n_bins):
        bin_blocks = [b[:, :, f] for b in raw]
        X, lam, _, conv, ledger, rnd = distributed_bin_evd(
            bin_blocks,
            tree,
            phi,
            max_iters=max_iters,
            tol=tol,
            seed=seed + f,
            ledger=ledger,
            start_round=rnd,
        )
        eigenvalues[f] = lam
        vectors[f] = X
        all_converged = all_converged and conv
    return EigenSet(eigenvalues, vectors, phi=phi, converged=all_converged), ledger


def write_eigenvalues_csv(eigs: EigenSet, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "index", "eigenvalue"])
        for f in range(eigs.n_bins):
            for i, lam in enumerate(eigs.eigenvalues[f], start=1):
                writer.writerow([f + 1, i, float_repr(lam)])


def read_eigenvalues_csv(path) -> np.ndarray:
    """Returns (F, n_eig) eigenvalue array from the bin,index,eigenvalue CSV."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["bin", "index", "eigenvalue"]:
            raise ValueError(f"unexpected eigenvalue CSV header: {header}")
        for b, i, lam in reader:
            rows.append((int(b), int(i), float(lam)))
    n_bins = max(r[0] for r in rows)
    n_eig = max(r[1] for r in rows)
    out = np.full((n_bins, n_eig), np.nan)
    for b, i, lam in rows:
        out[b - 1, i - 1] = lam
    return out


def write_eigenvectors_csv(eigs: EigenSet, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "row", "col", "re", "im"])
        for f in range(eigs.n_bins):
            mat = eigs.vectors[f]
            for r in range(mat.shape[0]):
                for c in range(mat.shape[1]):
                    writer.writerow(
                        [f + 1, r + 1, c + 1, float_repr(mat[r, c].real),
                         float_repr(mat[r, c].imag)]
                    )


def read_eigenvectors_csv(path) -> np.ndarray:
    """Returns (F, M, n_vec) complex array from the vector CSV."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["bin", "row", "col", "re", "im"]:
            raise ValueError(f"unexpected eigenvector CSV header: {header}")
        for b, r, c, re, im in reader:
            rows.append((int(b), int(r), int(c), float(re), float(im)))
    F = max(r[0] for r in rows)
    M = max(r[1] for r in rows)
    ncol = max(r[2] for r in rows)
    out = np.zeros((F, M, ncol), dtype=np.complex128)
    for b, r, c, re, im in rows:
        out[b - 1, r - 1, c - 1] = re + 1j * im
    return out
