"""Graphs, random-network generators, modularity partitioning and k-shells.

Vertices are the integers ``0..n-1``; ``vertex_labels`` optionally attaches an
opaque identifier (a site URL, say) to each of them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .rng import stream

POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000
MAX_COMMUNITY_SIZE = 10**4
REFINE_MAX_PASSES = 100


@dataclass(frozen=True)
class Graph:
    vertex_count: int
    edges: tuple[tuple[int, int], ...]
    vertex_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        n = self.vertex_count
        if n < 0:
            raise ValueError("vertex_count must be non-negative")
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on vertex {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) out of range for {n} vertices")
            key = (u, v) if u < v else (v, u)
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
        if self.vertex_labels is not None and len(self.vertex_labels) != n:
            raise ValueError("vertex_labels length must equal vertex_count")

    @classmethod
    def from_edges(cls, n, edges, labels=None):
        """Normalize to ``u < v``, drop duplicates, sort."""
        canon = sorted({(min(u, v), max(u, v)) for u, v in edges})
        return cls(int(n), tuple((int(u), int(v)) for u, v in canon),
                   None if labels is None else tuple(str(x) for x in labels))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_array(self) -> np.ndarray:
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.asarray(self.edges, dtype=np.int64)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        n = self.vertex_count
        e = self.edge_array
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        data = np.ones(len(rows), dtype=np.float64)
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.vertex_count, dtype=np.int64)
        e = self.edge_array
        np.add.at(deg, e[:, 0], 1)
        np.add.at(deg, e[:, 1], 1)
        return deg

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        a = self.adjacency
        return [a.indices[a.indptr[i]:a.indptr[i + 1]] for i in range(self.vertex_count)]

    def label_index(self) -> dict[str, int]:
        labels = self.vertex_labels or tuple(str(i) for i in range(self.vertex_count))
        return {lab: i for i, lab in enumerate(labels)}

    def with_labels(self, labels):
        return Graph(self.vertex_count, self.edges, tuple(str(x) for x in labels))


@dataclass(frozen=True)
class CommunityPartition:
    assignment: tuple[int, ...]
    modularity_value: float

    def __post_init__(self):
        if self.assignment:
            used = set(self.assignment)
            if used != set(range(len(used))):
                raise ValueError("community indices must be contiguous from 0")

    @property
    def community_count(self) -> int:
        return (max(self.assignment) + 1) if self.assignment else 0

    @classmethod
    def from_assignment(cls, graph: Graph, assignment):
        labels = relabel(assignment)
        q = modularity(graph, labels) if graph.edge_count else 0.0
        return cls(tuple(int(c) for c in labels), q)

    def members(self) -> list[np.ndarray]:
        a = np.asarray(self.assignment)
        return [np.flatnonzero(a == c) for c in range(self.community_count)]


@dataclass(frozen=True)
class KShellDecomposition:
    shell_index: tuple[int, ...]
    k_max: int

    def core(self) -> np.ndarray:
        """Vertices in the k_max-shell."""
        return np.flatnonzero(np.asarray(self.shell_index) == self.k_max)


@dataclass(frozen=True)
class CommunityGraph:
    community_count: int
    sizes: tuple[int, ...]
    meta_edges: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        if len(self.sizes) != self.community_count:
            raise ValueError("sizes must have one entry per community")
        if any(s <= 0 for s in self.sizes):
            raise ValueError("community sizes must be positive")
        for i, j in self.meta_edges:
            if not (0 <= i < self.community_count and 0 <= j < self.community_count) or i == j:
                raise ValueError(f"bad meta-edge ({i}, {j})")

    @cached_property
    def meta_adjacency(self) -> np.ndarray:
        k = self.community_count
        adj = np.zeros((k, k))
        for i, j in self.meta_edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj

    @property
    def population(self) -> int:
        return int(sum(self.sizes))


def relabel(assignment) -> np.ndarray:
    """Map community ids to ``0..C-1`` in order of first appearance."""
    out = np.empty(len(assignment), dtype=np.int64)
    mapping: dict = {}
    for i, c in enumerate(assignment):
        out[i] = mapping.setdefault(c, len(mapping))
    return out


# --------------------------------------------------------------------------
# generators

def generate_planted_partition(n: int, p_i: float, p_e: float, seed: int) -> Graph:
    """Two equal halves L = [0, n/2), R = [n/2, n); within-half pairs joined
    w.p. ``p_i``, cross pairs w.p. ``p_e``."""
    if n % 2 or n < 0:
        raise ValueError("n must be a non-negative even integer")
    for p in (p_i, p_e):
        if not 0.0 <= p <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
    if p_e > p_i:
        raise ValueError("p_e must not exceed p_i")
    return generate_block_graph([n // 2, n // 2], p_i, p_e, seed)


def generate_block_graph(sizes: Sequence[int], p_in: float, p_out: float, seed: int) -> Graph:
    """Planted partition with arbitrary block sizes (blocks are contiguous)."""
    sizes = [int(s) for s in sizes]
    n = sum(sizes)
    block = np.repeat(np.arange(len(sizes)), sizes)
    rng = stream(seed, 0)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(block[iu] == block[ju], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    return Graph(n, tuple(zip(iu[keep].tolist(), ju[keep].tolist())))


def power_law_pmf(exponent: float, min_size: int, max_size: int = MAX_COMMUNITY_SIZE) -> tuple[np.ndarray, np.ndarray]:
    support = np.arange(min_size, max_size + 1)
    w = support.astype(np.float64) ** (-exponent)
    return support, w / w.sum()


def sample_power_law_sizes(k, exponent, min_size, rng, max_size=MAX_COMMUNITY_SIZE) -> np.ndarray:
    support, pmf = power_law_pmf(exponent, min_size, max_size)
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    return support[np.searchsorted(cdf, rng.random(k), side="right")]


def generate_community_graph(K: int, edge_prob: float, size_exponent: float,
                             min_size: int, seed: int,
                             max_size: int = MAX_COMMUNITY_SIZE) -> CommunityGraph:
    """Erdős–Rényi meta-topology over ``K`` communities with i.i.d. discrete
    power-law sizes (inverse CDF, truncated at ``max_size``)."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if size_exponent <= 1:
        raise ValueError("size_exponent must exceed 1")
    if min_size < 1 or min_size > max_size:
        raise ValueError("min_size must be in [1, max_size]")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    sizes = sample_power_law_sizes(K, size_exponent, min_size, stream(seed, 0), max_size)
    iu, ju = np.triu_indices(K, k=1)
    keep = stream(seed, 1).random(len(iu)) < edge_prob
    edges = tuple(zip(iu[keep].tolist(), ju[keep].tolist()))
    return CommunityGraph(K, tuple(int(s) for s in sizes), edges)


def community_graph_from_partition(graph: Graph, partition: CommunityPartition) -> CommunityGraph:
    """Collapse each community to a vertex; join communities sharing an edge."""
    a = np.asarray(partition.assignment)
    sizes = np.bincount(a, minlength=partition.community_count)
    e = graph.edge_array
    pairs = {(min(x, y), max(x, y)) for x, y in zip(a[e[:, 0]].tolist(), a[e[:, 1]].tolist()) if x != y}
    return CommunityGraph(partition.community_count, tuple(int(s) for s in sizes), tuple(sorted(pairs)))


# --------------------------------------------------------------------------
# modularity

def modularity(graph: Graph, partition) -> float:
    """Σ_ij (A_ij − k_i k_j / 2m) δ(c_i, c_j) / 2m."""
    m = graph.edge_count
    if m == 0:
        raise ValueError("modularity is undefined for an edgeless graph")
    assignment = partition.assignment if isinstance(partition, CommunityPartition) else partition
    c = relabel(assignment)
    if len(c) != graph.vertex_count:
        raise ValueError("assignment must cover every vertex")
    e = graph.edge_array
    ncom = int(c.max()) + 1
    internal = np.bincount(c[e[:, 0]][c[e[:, 0]] == c[e[:, 1]]], minlength=ncom).astype(np.float64)
    dsum = np.bincount(c, weights=graph.degrees.astype(np.float64), minlength=ncom)
    return float(np.sum(internal / m - (dsum / (2.0 * m)) ** 2))


def _start_vector(n: int) -> np.ndarray:
    v = np.sin(1.0 + np.arange(n, dtype=np.float64)) + 0.5
    return v / np.linalg.norm(v)


def leading_eigenvector(b: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER):
    """Largest algebraic eigenpair of symmetric ``b`` by shifted power iteration."""
    n = b.shape[0]
    shift = float(np.max(np.abs(b).sum(axis=1)))
    v = _start_vector(n)
    for _ in range(max_iter):
        w = b @ v + shift * v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        w /= norm
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return float(v @ b @ v), v


def _generalized_b(adj_dense: np.ndarray, k: np.ndarray, two_m: float) -> np.ndarray:
    b = adj_dense - np.outer(k, k) / two_m
    b[np.diag_indices_from(b)] -= b.sum(axis=1)
    return b


def _refine_split(b: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Kernighan–Lin style sweeps: move each vertex once per pass, greedily by
    best gain in sᵀBs (lowest index on ties), keep the best prefix."""
    s = s.copy()
    n = len(s)
    diag = np.diag(b).copy()
    score = float(s @ b @ s)
    for _ in range(REFINE_MAX_PASSES):
        start = s.copy()
        bs = b @ s
        moved = np.zeros(n, dtype=bool)
        cur = best = 0.0
        best_step = -1
        order = []
        for step in range(n):
            gain = -4.0 * s * bs + 4.0 * diag
            gain[moved] = -np.inf
            i = int(np.argmax(gain))
            cur += gain[i]
            bs -= 2.0 * s[i] * b[:, i]
            s[i] = -s[i]
            moved[i] = True
            order.append(i)
            if cur > best + 1e-12:
                best, best_step = cur, step
        for i in order[best_step + 1:]:
            s[i] = -s[i]
        if best_step < 0:
            return s
        # the incremental gains drift in floating point; accept only a real gain
        new_score = float(s @ b @ s)
        if new_score <= score + 1e-10 * max(1.0, abs(score)):
            return start
        score = new_score
    return s


def _bisect(group: np.ndarray, graph: Graph, two_m: float, min_gain: float):
    adj = graph.adjacency[group][:, group].toarray()
    b = _generalized_b(adj, graph.degrees[group].astype(np.float64), two_m)
    value, v = leading_eigenvector(b)
    if value <= POWER_TOL:
        return None
    s = np.where(v >= 0, 1.0, -1.0)
    s = _refine_split(b, s)
    gain = float(s @ b @ s) / (2.0 * two_m)
    if gain < min_gain or abs(s.sum()) == len(s):
        return None
    return group[s > 0], group[s < 0]


def _polish(graph: Graph, labels: np.ndarray, min_gain: float) -> np.ndarray:
    """Single-vertex moves to neighbouring communities while Q improves."""
    labels = labels.copy()
    m = float(graph.edge_count)
    k = graph.degrees.astype(np.float64)
    dsum = np.bincount(labels, weights=k, minlength=labels.max() + 1)
    nbrs = graph.neighbors
    improved = True
    while improved:
        improved = False
        for i in range(graph.vertex_count):
            if not len(nbrs[i]):
                continue
            a = labels[i]
            comms, counts = np.unique(labels[nbrs[i]], return_counts=True)
            links = dict(zip(comms.tolist(), counts.tolist()))
            k_ia = links.get(a, 0)
            da = dsum[a] - k[i]
            best_gain, best_c = min_gain, a
            for c in comms.tolist():
                if c == a:
                    continue
                gain = (links[c] - k_ia) / m - k[i] * (dsum[c] - da) / (2.0 * m * m)
                if gain > best_gain + 1e-15:
                    best_gain, best_c = gain, c
            if best_c != a:
                dsum[a] -= k[i]
                dsum[best_c] += k[i]
                labels[i] = best_c
                improved = True
    return labels


def _tentative_splits(graph: Graph, labels: np.ndarray, two_m: float, min_gain: float) -> np.ndarray:
    """Split a community even at a local loss, polish, keep if Q rises.

    Escapes two-move optima (split plus one boundary vertex) that neither
    bisection nor single-vertex polish reaches.  Candidates per community:
    eigenvector signs, its median cut, and their refinements.
    """
    q = modularity(graph, labels)
    improved = True
    while improved:
        improved = False
        for c in range(labels.max() + 1):
            group = np.flatnonzero(labels == c)
            if len(group) < 3:
                continue
            adj = graph.adjacency[group][:, group].toarray()
            b = _generalized_b(adj, graph.degrees[group].astype(np.float64), two_m)
            _, v = leading_eigenvector(b)
            raw = np.where(v >= 0, 1.0, -1.0)
            med = np.where(v >= np.median(v), 1.0, -1.0)
            best = None
            for s in (raw, _refine_split(b, raw), med, _refine_split(b, med)):
                if abs(s.sum()) == len(s):
                    continue
                trial = labels.copy()
                trial[group[s < 0]] = labels.max() + 1
                trial = relabel(_polish(graph, trial, min_gain))
                qt = modularity(graph, trial)
                if best is None or qt > best[0] + 1e-12:
                    best = (qt, trial)
            if best is not None and best[0] > q + min_gain:
                q, labels = best
                improved = True
                break
    return labels


def partition_communities(graph: Graph, min_gain: float = 1e-6) -> CommunityPartition:
    """Recursive leading-eigenvector bisection with vertex-move refinement."""
    if min_gain < 0:
        raise ValueError("min_gain must be non-negative")
    n = graph.vertex_count
    if n == 1:
        return CommunityPartition((0,), 0.0)
    if graph.edge_count == 0:
        raise ValueError("cannot partition an edgeless graph")
    two_m = 2.0 * graph.edge_count
    _, comp = connected_components(graph.adjacency, directed=False)
    pending = [np.flatnonzero(comp == c) for c in range(comp.max() + 1)]
    final = []
    while pending:
        group = pending.pop(0)
        split = _bisect(group, graph, two_m, min_gain) if len(group) > 1 else None
        if split is None:
            final.append(group)
        else:
            pending[:0] = [np.sort(split[0]), np.sort(split[1])]
    labels = np.empty(n, dtype=np.int64)
    for c, group in enumerate(final):
        labels[group] = c
    labels = relabel(_polish(graph, labels, min_gain))
    labels = _tentative_splits(graph, labels, two_m, min_gain)
    return CommunityPartition(tuple(labels.tolist()), modularity(graph, labels))


# --------------------------------------------------------------------------
# k-shells

def k_shell_decomposition(graph: Graph) -> KShellDecomposition:
    """Core numbers by bucket peeling (Batagelj–Zaversnik)."""
    n = graph.vertex_count
    if n == 0:
        return KShellDecomposition((), 0)
    deg = graph.degrees.copy()
    nbrs = graph.neighbors
    max_deg = int(deg.max())
    bin_start = np.zeros(max_deg + 2, dtype=np.int64)
    counts = np.bincount(deg, minlength=max_deg + 1)
    bin_start[1:] = np.cumsum(counts)
    pos = np.zeros(n, dtype=np.int64)
    vert = np.zeros(n, dtype=np.int64)
    nxt = bin_start[:-1].copy()
    for v in range(n):
        pos[v] = nxt[deg[v]]
        vert[pos[v]] = v
        nxt[deg[v]] += 1
    start = bin_start[:-1].copy()
    for i in range(n):
        v = vert[i]
        for u in nbrs[v]:
            if deg[u] > deg[v]:
                du = deg[u]
                pu = pos[u]
                pw = start[du]
                w = vert[pw]
                if u != w:
                    vert[pu], vert[pw] = w, u
                    pos[u], pos[w] = pw, pu
                start[du] += 1
                deg[u] -= 1
    shells = tuple(int(d) for d in deg)
    return KShellDecomposition(shells, max(shells))


# --------------------------------------------------------------------------
# file formats

def read_edge_list(path) -> Graph:
    n_header = None
    edges = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "vertices":
                    n_header = int(parts[1])
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'u<TAB>v'")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: vertex ids must be integers") from None
            if u < 0 or v < 0:
                raise ValueError(f"{path}:{lineno}: negative vertex id")
            if u == v:
                raise ValueError(f"{path}:{lineno}: self-loop")
            edges.append((u, v))
    n = n_header if n_header is not None else (max(max(e) for e in edges) + 1 if edges else 0)
    return Graph.from_edges(n, edges)


def write_edge_list(graph: Graph, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"#vertices {graph.vertex_count}\n")
        for u, v in graph.edges:
            fh.write(f"{u}\t{v}\n")


def read_vertex_labels(path, n: int) -> tuple[str, ...]:
    labels = [str(i) for i in range(n)]
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'vertex<TAB>label'")
            labels[int(parts[0])] = parts[1]
    return tuple(labels)


def _write_vertex_csv(values, column: str, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex", column])
        for i, c in enumerate(values):
            w.writerow([i, c])


def write_partition_csv(partition: CommunityPartition, path) -> None:
    _write_vertex_csv(partition.assignment, "community", path)


def write_shells_csv(shells: KShellDecomposition, path) -> None:
    _write_vertex_csv(shells.shell_index, "shell", path)


def read_partition_csv(graph: Graph, path) -> CommunityPartition:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assignment = [0] * graph.vertex_count
    for r in rows:
        assignment[int(r["vertex"])] = int(r["community"])
    return CommunityPartition.from_assignment(graph, assignment)

