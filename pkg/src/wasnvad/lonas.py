"""Locating nodes around sources: indicator-based spectral clustering.

Channels are clustered from the magnitudes of the per-bin dominant
eigenvectors, aggregated over frequency, then recursively bipartitioned by
normalized cut until one cluster per source plus a dummy cluster remain.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import pdist, squareform

from .eigensolver import EigenSet

DUMMY = "dummy"

_ZERO_TOL = 1e-12


@dataclass
class IndicatorMatrix:
    """Non-negative M x Q membership strengths, one row per channel."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("indicator must be 2-D (channels x sources)")
        if self.values.size and self.values.min() < 0:
            raise ValueError("indicator entries must be non-negative")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_sources(self) -> int:
        return self.values.shape[1]


@dataclass
class AffinityGraph:
    """Symmetric non-negative affinity over indicator rows."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        t = self.theta
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError("affinity must be square")
        if t.size and t.min() < 0:
            raise ValueError("affinity entries must be non-negative")
        scale = max(np.abs(t).max(), 1e-300) if t.size else 1.0
        if not np.allclose(t, t.T, atol=1e-10 * scale):
            raise ValueError("affinity must be symmetric")
        if t.size and (self.degrees <= 0).any():
            raise ValueError("every point needs positive degree")

    @property
    def n_points(self) -> int:
        return self.theta.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.theta.sum(axis=1)


@dataclass
class ClusterAssignment:
    """Partition of nodes into per-source clusters plus one dummy cluster.

    sources maps 1-based source ids to sorted node lists.
    """

    sources: dict[int, list[int]]
    dummy: list[int]
    channel_labels: list = field(default=None, repr=False)

    def __post_init__(self):
        self.sources = {int(k): sorted(int(n) for n in v) for k, v in self.sources.items()}
        self.dummy = sorted(int(n) for n in self.dummy)
        seen = set()
        for q, nodes in self.sources.items():
            if not nodes:
                raise ValueError(f"source cluster {q} is empty")
            for n in nodes:
                if n in seen:
                    raise ValueError(f"node {n} assigned twice")
                seen.add(n)
        for n in self.dummy:
            if n in seen:
                raise ValueError(f"node {n} assigned twice")
            seen.add(n)

    @property
    def n_clusters(self) -> int:
        return len(self.sources) + 1

    @property
    def nodes(self) -> list[int]:
        out = set(self.dummy)
        for nodes in self.sources.values():
            out.update(nodes)
        return sorted(out)

    def label_of(self, node: int):
        for q, nodes in self.sources.items():
            if node in nodes:
                return q
        if node in self.dummy:
            return DUMMY
        raise KeyError(node)


def build_indicator(eigs: EigenSet, q_hat: int) -> IndicatorMatrix:
    """Sum over bins of the magnitudes of the first q_hat eigenvector
    columns."""
    if q_hat < 0:
        raise ValueError("q_hat must be non-negative")
    if q_hat > eigs.vectors.shape[2]:
        raise ValueError(
            f"q_hat={q_hat} exceeds available eigenvectors ({eigs.vectors.shape[2]})"
        )
    return IndicatorMatrix(np.abs(eigs.vectors[:, :, :q_hat]).sum(axis=0))


def build_affinity(ind: IndicatorMatrix, sigma_aff: float | None = None) -> AffinityGraph:
    """Gaussian affinity on indicator rows.

    sigma_aff defaults to the median pairwise row distance.
    """
    rows = ind.values if isinstance(ind, IndicatorMatrix) else np.asarray(ind, float)
    if rows.shape[0] < 2:
        raise ValueError("need at least two rows")
    dists = pdist(rows)
    if sigma_aff is None:
        sigma_aff = float(np.median(dists))
        if sigma_aff <= 0:
            warnings.warn("degenerate affinity: indicator rows coincide")
            sigma_aff = 1.0
    elif sigma_aff <= 0:
        raise ValueError("sigma_aff must be positive")
    if dists.max() <= 0:
        warnings.warn("degenerate affinity: all indicator rows identical")
    theta = np.exp(-squareform(dists) ** 2 / (2.0 * sigma_aff**2))
    return AffinityGraph(theta)


def _positive_components(theta: np.ndarray) -> list[list[int]]:
    """Connected components of the graph with edges where theta > 0
    off-diagonal."""
    n = theta.shape[0]
    unseen = set(range(n))
    comps = []
    while unseen:
        start = min(unseen)
        stack = [start]
        unseen.discard(start)
        comp = [start]
        while stack:
            i = stack.pop()
            for j in list(unseen):
                if theta[i, j] > 0:
                    unseen.discard(j)
                    stack.append(j)
                    comp.append(j)
        comps.append(sorted(comp))
    return comps


def _fiedler_mask(theta: np.ndarray):
    """Relaxed bipartition mask (True = Z) and algebraic connectivity."""
    n = theta.shape[0]
    deg = theta.sum(axis=1)
    lap = np.diag(deg) - theta
    w, V = np.linalg.eigh(lap)
    fiedler_value = float(w[1])
    scale = max(abs(w[-1]), 1e-300)
    if w[1] <= _ZERO_TOL * scale:
        # effectively disconnected: split along the component holding the
        # lowest index instead of an arbitrary eigenvector in the null space.
        # Edges too weak to register in the eigengap test count as absent;
        # any edge above this floor would push w[1] past the tolerance.
        strong = np.where(theta > 1e-8 * theta.max(), theta, 0.0)
        comps = _positive_components(strong)
        mask = np.zeros(n, dtype=bool)
        mask[comps[0]] = True
    else:
        mask = V[:, 1] >= 0
    if mask.all() or not mask.any():
        mask = np.zeros(n, dtype=bool)
        mask[0] = True
    return mask, fiedler_value


def ncut_value(g: AffinityGraph, z) -> float:
    """Discrete NCut objective of the bipartition (z, complement).

    z holds 1-based point indices, as returned by ncut_bipartition.
    """
    theta = g.theta if isinstance(g, AffinityGraph) else np.asarray(g, float)
    n = theta.shape[0]
    idx = np.asarray(sorted({int(i) for i in z}), dtype=int)
    if idx.size == 0 or idx.min() < 1 or idx.max() > n:
        raise ValueError("z must hold 1-based point indices")
    mask = np.zeros(n, dtype=bool)
    mask[idx - 1] = True
    return _ncut_value_mask(theta, mask)


def _ncut_value_mask(theta: np.ndarray, mask: np.ndarray) -> float:
    cut = theta[np.ix_(mask, ~mask)].sum()
    va = theta[mask].sum()
    vb = theta[~mask].sum()
    if va <= 0 or vb <= 0:
        return 2.0
    return float(cut / va + cut / vb)


def ncut_bipartition(g: AffinityGraph):
    """Two-way normalized-cut split of the affinity graph.

    Returns (Z, Z_complement, fiedler_value) with 1-based point indices;
    the side containing point 1 is reported first.
    """
    theta = g.theta if isinstance(g, AffinityGraph) else AffinityGraph(g).theta
    if theta.shape[0] < 2:
        raise ValueError("need at least two points to bipartition")
    mask, fiedler_value = _fiedler_mask(theta)
    if not mask[0]:
        mask = ~mask
    z = [i + 1 for i in range(len(mask)) if mask[i]]
    zbar = [i + 1 for i in range(len(mask)) if not mask[i]]
    return z, zbar, fiedler_value


def _recursive_partition(theta: np.ndarray, n_clusters: int) -> list[list[int]]:
    """Recursive NCut bipartition into n_clusters groups of row indices.

    At each step every splittable cluster proposes its relaxed bipartition;
    the proposal with the lowest discrete NCut value is committed.
    """
    clusters = [list(range(theta.shape[0]))]
    while len(clusters) < n_clusters:
        best = None
        for ci, members in enumerate(clusters):
            if len(members) < 2:
                continue
            sub = theta[np.ix_(members, members)]
            mask, _ = _fiedler_mask(sub)
            val = _ncut_value_mask(sub, mask)
            if best is None or val < best[0]:
                best = (val, ci, mask)
        if best is None:
            raise ValueError("no splittable cluster left")
        _, ci, mask = best
        members = clusters.pop(ci)
        a = [members[i] for i in range(len(members)) if mask[i]]
        b = [members[i] for i in range(len(members)) if not mask[i]]
        clusters.extend([a, b])
        clusters.sort(key=min)
    return clusters


def lonas_cluster(
    ind: IndicatorMatrix,
    q_hat: int,
    sigma_aff: float | None = None,
    channel_nodes=None,
) -> ClusterAssignment:
    """Cluster channels into q_hat source clusters plus a dummy cluster.

    channel_nodes gives the owning node id per indicator row; default is one
    channel per node, ids 1..M. Node labels are the majority over the node's
    channels, ties going to the dummy cluster.
    """
    values = ind.values if isinstance(ind, IndicatorMatrix) else np.asarray(ind, float)
    M = values.shape[0]
    if channel_nodes is None:
        channel_nodes = list(range(1, M + 1))
    channel_nodes = [int(n) for n in channel_nodes]
    if len(channel_nodes) != M:
        raise ValueError("one owning node per indicator row required")
    all_nodes = sorted(set(channel_nodes))

    if q_hat == 0:
        return ClusterAssignment({}, all_nodes, channel_labels=[DUMMY] * M)
    if q_hat + 1 > M:
        raise ValueError("q_hat + 1 clusters need at least q_hat + 1 channels")
    if values.shape[1] != q_hat:
        raise ValueError(
            f"indicator has {values.shape[1]} columns, expected q_hat={q_hat}"
        )

    graph = build_affinity(IndicatorMatrix(values), sigma_aff)
    groups = _recursive_partition(graph.theta, q_hat + 1)

    # dummy cluster = weakest mean indicator row norm
    row_norms = np.linalg.norm(values, axis=1)
    dummy_idx = int(np.argmin([row_norms[g].mean() for g in groups]))
    source_groups = [g for i, g in enumerate(groups) if i != dummy_idx]

    # each remaining cluster takes the source column it expresses most;
    # solved as an assignment so labels stay a bijection
    score = np.array([values[g].mean(axis=0) for g in source_groups])
    rows_a, cols_a = linear_sum_assignment(-score)
    group_label = {}
    for gi, col in zip(rows_a, cols_a):
        group_label[gi] = int(col) + 1

    channel_labels = [DUMMY] * M
    for gi, g in enumerate(source_groups):
        for row in g:
            channel_labels[row] = group_label[gi]

    node_labels = {}
    for node in all_nodes:
        labels = [channel_labels[i] for i in range(M) if channel_nodes[i] == node]
        counts = {}
        for lab in labels:
            counts[lab] = counts.get(lab, 0) + 1
        top = max(counts.values())
        winners = [lab for lab, c in counts.items() if c == top]
        node_labels[node] = winners[0] if len(winners) == 1 else DUMMY

    sources = {q: [] for q in range(1, q_hat + 1)}
    dummy_nodes = []
    for node, lab in node_labels.items():
        if lab == DUMMY:
            dummy_nodes.append(node)
        else:
            sources[lab].append(node)
    return ClusterAssignment(sources, dummy_nodes, channel_labels=channel_labels)


def emis(assign, truth, trials: int | None = None) -> float:
    """Node misclassification percentage against ground truth.

    assign and truth are ClusterAssignments or equal-length sequences of
    them (one per trial). Labels are matched by the agreement-maximizing
    bijection before counting.
    """
    if isinstance(assign, ClusterAssignment):
        assign = [assign]
    if isinstance(truth, ClusterAssignment):
        truth = [truth]
    if len(assign) != len(truth):
        raise ValueError("need one truth assignment per estimate")
    n_trl = trials if trials is not None else len(assign)
    total_nodes = None
    mis = 0
    for est, ref in zip(assign, truth):
        if est.nodes != ref.nodes:
            raise ValueError("assignments cover different node sets")
        if total_nodes is None:
            total_nodes = len(ref.nodes)
        est_sets = [set(v) for v in est.sources.values()] + [set(est.dummy)]
        ref_sets = [set(v) for v in ref.sources.values()] + [set(ref.dummy)]
        n = max(len(est_sets), len(ref_sets))
        agree = np.zeros((n, n))
        for i, es in enumerate(est_sets):
            for j, rs in enumerate(ref_sets):
                agree[i, j] = len(es & rs)
        ri, ci = linear_sum_assignment(-agree)
        mis += len(ref.nodes) - int(agree[ri, ci].sum())
    return 100.0 * mis / (total_nodes * n_trl)


def write_assignment_json(assign: ClusterAssignment, path) -> None:
    payload = {str(q): assign.sources[q] for q in sorted(assign.sources)}
    payload[DUMMY] = assign.dummy
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_assignment_json(path) -> ClusterAssignment:
    with open(path) as fh:
        payload = json.load(fh)
    dummy = payload.pop(DUMMY, [])
    sources = {int(k): v for k, v in payload.items()}
    return ClusterAssignment(sources, dummy)
