"""WASN graph model, tree topology and synchronous round-based messaging."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import minimum_spanning_tree


class ProtocolViolation(RuntimeError):
    """A node handler attempted to message a non-neighbor."""


@dataclass
class WasnGraph:
    """Geometric graph over nodes 1..K with radio-range edges."""

    positions: np.ndarray  # (K, dim)
    edges: list  # (i, j) with i < j, 1-based
    radio_range: float

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    def neighborhood(self, k: int) -> list:
        """N_k: neighbors of node k including k itself."""
        out = {k}
        for i, j in self.edges:
            if i == k:
                out.add(j)
            elif j == k:
                out.add(i)
        return sorted(out)

    def degree(self, k: int) -> int:
        return len(self.neighborhood(k)) - 1


def _components(n_nodes: int, edges) -> list:
    adj = {k: set() for k in range(1, n_nodes + 1)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    seen = set()
    comps = []
    for start in range(1, n_nodes + 1):
        if start in seen:
            continue
        stack = [start]
        comp = set()
        while stack:
            u = stack.pop()
            if u in comp:
                continue
            comp.add(u)
            stack.extend(adj[u] - comp)
        seen |= comp
        comps.append(sorted(comp))
    return comps


def build_graph(positions, radio_range: float) -> WasnGraph:
    """Connect node pairs within radio_range; error if disconnected."""
    positions = np.asarray(positions, dtype=np.float64)
    K = positions.shape[0]
    if K < 2:
        raise ValueError("need at least 2 nodes")
    if radio_range <= 0:
        raise ValueError("radio_range must be positive")
    edges = []
    for i in range(K):
        for j in range(i + 1, K):
            if np.linalg.norm(positions[i] - positions[j]) <= radio_range:
                edges.append((i + 1, j + 1))
    comps = _components(K, edges)
    if len(comps) > 1:
        parts = "; ".join(str(c) for c in comps)
        raise ValueError(f"graph is disconnected: components {parts}")
    return WasnGraph(positions, edges, radio_range)


@dataclass
class TreeTopology:
    """Rooted spanning tree as a parent map over 1-based node ids."""

    parent: dict  # node -> parent node, root -> None
    root: int

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    def children(self, k: int) -> list:
        return sorted(c for c, p in self.parent.items() if p == k)

    def neighbors(self, k: int) -> list:
        out = list(self.children(k))
        if self.parent[k] is not None:
            out.append(self.parent[k])
        return sorted(out)

    def edges(self) -> list:
        return sorted(
            (min(c, p), max(c, p)) for c, p in self.parent.items() if p is not None
        )

    def next_hop_map(self, target: int) -> dict:
        """For every node, its neighbor on the unique path toward target."""
        hop = {target: None}
        stack = [target]
        while stack:
            u = stack.pop()
            for v in self.neighbors(u):
                if v not in hop:
                    hop[v] = u
                    stack.append(v)
        return hop

    def eccentricity(self, k: int) -> int:
        dist = {k: 0}
        stack = [k]
        while stack:
            u = stack.pop()
            for v in self.neighbors(u):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    stack.append(v)
        return max(dist.values())


def build_tree(graph: WasnGraph) -> TreeTopology:
    """Minimum spanning tree on Euclidean edge lengths.

    Root is the tree node of maximum degree, ties broken by lowest id.
    """
    K = graph.n_nodes
    rows, cols, weights = [], [], []
    for i, j in graph.edges:
        w = float(np.linalg.norm(graph.positions[i - 1] - graph.positions[j - 1]))
        rows.append(i - 1)
        cols.append(j - 1)
        weights.append(max(w, 1e-12))
    mat = csr_matrix((weights, (rows, cols)), shape=(K, K))
    mst = minimum_spanning_tree(mat).tocoo()
    tree_edges = [(int(r) + 1, int(c) + 1) for r, c in zip(mst.row, mst.col)]

    deg = {k: 0 for k in range(1, K + 1)}
    adj = {k: set() for k in range(1, K + 1)}
    for i, j in tree_edges:
        deg[i] += 1
        deg[j] += 1
        adj[i].add(j)
        adj[j].add(i)
    root = max(range(1, K + 1), key=lambda k: (deg[k], -k))

    parent = {root: None}
    stack = [root]
    while stack:
        u = stack.pop()
        for v in sorted(adj[u]):
            if v not in parent:
                parent[v] = u
                stack.append(v)
    return TreeTopology(parent, root)


def graph_to_dot(graph: WasnGraph, tree: TreeTopology | None = None) -> str:
    """DOT text for inspection; tree edges are drawn bold when given."""
    lines = ["graph wasn {"]
    for k in range(1, graph.n_nodes + 1):
        pos = graph.positions[k - 1]
        coords = ",".join(f"{v:.3f}" for v in pos[:2])
        lines.append(f'  {k} [pos="{coords}!"];')
    tree_edges = set(tree.edges()) if tree is not None else set()
    for i, j in graph.edges:
        style = ' [style=bold]' if (i, j) in tree_edges else ""
        lines.append(f"  {i} -- {j}{style};")
    lines.append("}")
    return "\n".join(lines)


def _scalar_count(message) -> int:
    arr = np.asarray(message)
    mult = 2 if np.iscomplexobj(arr) else 1
    return int(arr.size) * mult


@dataclass
class TrafficLedger:
    """Per-round per-node counts of scalars sent and received."""

    rows: list = field(default_factory=list)  # (round, node, sent, received)

    def add_round(self, rnd: int, sent: dict, received: dict):
        nodes = sorted(set(sent) | set(received))
        for k in nodes:
            self.rows.append((rnd, k, sent.get(k, 0), received.get(k, 0)))

    @property
    def n_rounds(self) -> int:
        return len({r for r, *_ in self.rows})

    def totals(self) -> tuple:
        sent = sum(r[2] for r in self.rows)
        received = sum(r[3] for r in self.rows)
        return sent, received

    def per_round_totals(self) -> dict:
        out = {}
        for rnd, _, s, r in self.rows:
            a, b = out.get(rnd, (0, 0))
            out[rnd] = (a + s, b + r)
        return out

    def max_per_node_round(self) -> tuple:
        """(max sent, max received) over all (node, round) cells."""
        if not self.rows:
            return 0, 0
        return max(r[2] for r in self.rows), max(r[3] for r in self.rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "node", "sent_scalars", "received_scalars"])
            for row in self.rows:
                writer.writerow(row)


def run_rounds(
    tree: TreeTopology,
    handler,
    rounds: int,
    states: dict | None = None,
    ledger: TrafficLedger | None = None,
    start_round: int = 0,
    inboxes: dict | None = None,
    parallel: bool = False,
):
    """Drive a synchronous message protocol over the tree.

    ``handler(node, rnd, state, inbox) -> outbox`` maps an inbox
    (sender -> message, delivered at the last barrier) to an outbox
    (neighbor -> message). Messages sent in a round are counted for both
    endpoints in that round and delivered at the barrier. Returns
    (states, ledger, inboxes).
    """
    nodes = sorted(tree.parent)
    if states is None:
        states = {k: {} for k in nodes}
    if ledger is None:
        ledger = TrafficLedger()
    if inboxes is None:
        inboxes = {k: {} for k in nodes}
    neighbor_sets = {k: set(tree.neighbors(k)) for k in nodes}

    for rnd in range(start_round, start_round + rounds):
        def step(k):
            return k, handler(k, rnd, states[k], inboxes[k])

        if parallel:
            with ThreadPoolExecutor(max_workers=min(8, len(nodes))) as pool:
                results = dict(pool.map(step, nodes))
        else:
            results = dict(step(k) for k in nodes)

        sent = {k: 0 for k in nodes}
        received = {k: 0 for k in nodes}
        next_inboxes = {k: {} for k in nodes}
        for k in nodes:
            outbox = results[k] or {}
            for dest, msg in outbox.items():
                if dest not in neighbor_sets[k]:
                    raise ProtocolViolation(
                        f"node {k} sent to non-neighbor {dest} in round {rnd}"
                    )
                count = _scalar_count(msg)
                sent[k] += count
                received[dest] += count
                next_inboxes[dest][k] = msg
        ledger.add_round(rnd, sent, received)
        inboxes = next_inboxes
    return states, ledger, inboxes
