"""Graph containers, JSON-lines I/O, disjoint-union batching, k-fold splits,
and synthetic benchmark tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

__all__ = [
    "DatasetError",
    "Graph",
    "BatchedGraph",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "dumps_graph",
    "batch",
    "unbatch",
    "stratified_kfold",
    "generate_synthetic",
    "SYNTHETIC_TASKS",
    "max_degree",
    "triangle_count",
    "synthetic_label",
    "NODE_VOCAB",
]

NODE_VOCAB = 8


class DatasetError(ValueError):
    """Malformed or invalid graph data."""


@dataclass(frozen=True)
class Graph:
    num_nodes: int
    node_labels: Tuple[int, ...]
    edges: Tuple[Tuple[int, int], ...]
    label: int

    def __post_init__(self):
        object.__setattr__(self, "node_labels", tuple(int(x) for x in self.node_labels))
        object.__setattr__(self, "edges", tuple((int(u), int(v)) for u, v in self.edges))
        self.validate()

    def validate(self) -> None:
        if self.num_nodes < 1:
            raise DatasetError("graph must have at least one node")
        if len(self.node_labels) != self.num_nodes:
            raise DatasetError(
                f"{len(self.node_labels)} node labels for {self.num_nodes} nodes"
            )
        if any(x < 0 for x in self.node_labels):
            raise DatasetError("node labels must be non-negative")
        if self.label not in (0, 1):
            raise DatasetError(f"graph label must be 0 or 1, got {self.label}")
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise DatasetError(f"edge ({u}, {v}) out of range for {self.num_nodes} nodes")
            if u == v:
                raise DatasetError(f"self-loop on node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise DatasetError(f"duplicate edge {key}")
            seen.add(key)

    def edge_set(self) -> frozenset:
        return frozenset((min(u, v), max(u, v)) for u, v in self.edges)

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.num_nodes, self.num_nodes))
        for u, v in self.edges:
            A[u, v] = A[v, u] = 1.0
        return A

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = list(perm)
        labels = [0] * self.num_nodes
        for i, p in enumerate(perm):
            labels[p] = self.node_labels[i]
        edges = [(perm[u], perm[v]) for u, v in self.edges]
        return Graph(self.num_nodes, tuple(labels), tuple(edges), self.label)


@dataclass(frozen=True, eq=False)
class BatchedGraph:
    """Disjoint union of graphs with both directions of every edge."""

    node_labels: np.ndarray
    edge_index: np.ndarray  # [2, E]: row 0 source, row 1 target
    node_to_graph: np.ndarray
    graph_labels: np.ndarray
    num_graphs: int

    @property
    def num_nodes(self) -> int:
        return int(self.node_labels.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, BatchedGraph):
            return NotImplemented
        return (
            self.num_graphs == other.num_graphs
            and np.array_equal(self.node_labels, other.node_labels)
            and np.array_equal(self.edge_index, other.edge_index)
            and np.array_equal(self.node_to_graph, other.node_to_graph)
            and np.array_equal(self.graph_labels, other.graph_labels)
        )


@dataclass
class Dataset:
    graphs: List[Graph]
    vocab_size: int = 0
    name: str = ""

    def __post_init__(self):
        need = 1 + max((max(g.node_labels) for g in self.graphs), default=-1)
        if not self.vocab_size:
            self.vocab_size = need
        elif need > self.vocab_size:
            raise DatasetError(f"node label {need - 1} outside vocabulary of {self.vocab_size}")

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset([self.graphs[i] for i in indices], self.vocab_size, self.name)


# ---------------------------------------------------------------------------
# I/O


def _parse_graph(obj) -> Graph:
    if not isinstance(obj, dict):
        raise DatasetError("record is not a JSON object")
    for key in ("nodes", "edges", "y"):
        if key not in obj:
            raise DatasetError(f"missing key {key!r}")
    nodes = obj["nodes"]
    edges = obj["edges"]
    if not isinstance(nodes, list) or not all(isinstance(x, int) for x in nodes):
        raise DatasetError("'nodes' must be a list of ints")
    if not isinstance(edges, list) or not all(
        isinstance(e, list) and len(e) == 2 and all(isinstance(x, int) for x in e) for e in edges
    ):
        raise DatasetError("'edges' must be a list of [int, int] pairs")
    return Graph(len(nodes), tuple(nodes), tuple(tuple(e) for e in edges), obj["y"])


def load_dataset(path, name: str | None = None) -> Dataset:
    path = Path(path)
    graphs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                graphs.append(_parse_graph(obj))
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    if not graphs:
        raise DatasetError("empty dataset")
    return Dataset(graphs, name=name or path.stem)


def dumps_graph(g: Graph) -> str:
    edges = sorted((min(u, v), max(u, v)) for u, v in g.edges)
    return json.dumps(
        {"nodes": list(g.node_labels), "edges": [list(e) for e in edges], "y": g.label},
        separators=(",", ":"),
    )


def save_dataset(dataset: Dataset | Sequence[Graph], path) -> None:
    graphs = dataset.graphs if isinstance(dataset, Dataset) else dataset
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for g in graphs:
            fh.write(dumps_graph(g) + "\n")


# ---------------------------------------------------------------------------
# batching


def batch(graphs: Sequence[Graph]) -> BatchedGraph:
    graphs = list(graphs)
    if not graphs:
        raise DatasetError("cannot batch an empty list of graphs")
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    labels = np.concatenate([np.asarray(g.node_labels, dtype=np.int64) for g in graphs])
    src, dst = [], []
    for off, g in zip(offsets, graphs):
        if g.edges:
            e = np.asarray(g.edges, dtype=np.int64) + off
            src.extend((e[:, 0], e[:, 1]))
            dst.extend((e[:, 1], e[:, 0]))
    if src:
        edge_index = np.stack([np.concatenate(src), np.concatenate(dst)])
    else:
        edge_index = np.zeros((2, 0), dtype=np.int64)
    return BatchedGraph(
        node_labels=labels,
        edge_index=edge_index,
        node_to_graph=np.repeat(np.arange(len(graphs), dtype=np.int64), sizes),
        graph_labels=np.array([g.label for g in graphs], dtype=np.int64),
        num_graphs=len(graphs),
    )


def unbatch(b: BatchedGraph) -> List[Graph]:
    sizes = np.bincount(b.node_to_graph, minlength=b.num_graphs)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    out = []
    for gi in range(b.num_graphs):
        lo = offsets[gi]
        out.append(
            Graph(
                int(sizes[gi]),
                tuple(int(x) for x in b.node_labels[lo : lo + sizes[gi]]),
                tuple(_forward_edges(b, gi, lo)),
                int(b.graph_labels[gi]),
            )
        )
    return out


def _forward_edges(b: BatchedGraph, gi: int, lo: int):
    # batch() writes each graph's stored orientation first, then the reversed copies

    mask = b.node_to_graph[b.edge_index[0]] == gi
    block = b.edge_index[:, mask]
    half = block.shape[1] // 2
    return [(int(u - lo), int(v - lo)) for u, v in block[:, :half].T]


# ---------------------------------------------------------------------------
# splitting


def stratified_kfold(dataset, k: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Class-balanced k-fold partition of sample indices.

    Each class is shuffled and dealt round-robin across folds; the dealing
    position carries over between classes so fold sizes differ by at most one.
    """
    labels = dataset.labels if isinstance(dataset, Dataset) else np.asarray(dataset)
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    pos = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise ValueError(f"class {int(cls)} has {idx.size} samples, fewer than k={k}")
        idx = rng.permutation(idx)
        fold_of[idx] = (pos + np.arange(idx.size)) % k
        pos = (pos + idx.size) % k
    every = np.arange(len(labels))
    return [(every[fold_of != f], every[fold_of == f]) for f in range(k)]


# ---------------------------------------------------------------------------
# synthetic tasks


SYNTHETIC_TASKS = ("degree_threshold", "triangle_parity", "star_vs_path")


def max_degree(g: Graph) -> int:
    deg = np.zeros(g.num_nodes, dtype=np.int64)
    for u, v in g.edges:
        deg[u] += 1
        deg[v] += 1
    return int(deg.max())


def triangle_count(g: Graph) -> int:
    adj = [set() for _ in range(g.num_nodes)]
    for u, v in g.edges:
        adj[u].add(v)
        adj[v].add(u)
    count = 0
    for u, v in g.edge_set():
        count += sum(1 for w in adj[u] & adj[v] if w > v)
    return count


def _is_star(g: Graph) -> bool:
    n = g.num_nodes
    return len(g.edges) == n - 1 and max_degree(g) == n - 1


def synthetic_label(task: str, g: Graph) -> int:
    if task == "degree_threshold":
        return int(max_degree(g) >= 4)
    if task == "triangle_parity":
        return triangle_count(g) % 2
    if task == "star_vs_path":
        return int(_is_star(g))
    raise ValueError(f"unknown synthetic task {task!r}")


def _random_tree(rng, n: int, max_deg: int | None) -> list:
    deg = [0] * n
    edges = []
    for v in range(1, n):
        cand = [u for u in range(v) if max_deg is None or deg[u] < max_deg]
        u = int(rng.choice(cand))
        edges.append((u, v))
        deg[u] += 1
        deg[v] += 1
    return edges


def _add_random_edges(rng, n: int, edges: list, count: int, max_deg: int | None) -> list:
    present = {(min(u, v), max(u, v)) for u, v in edges}
    deg = [0] * n
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    for _ in range(count):
        u, v = (int(x) for x in rng.choice(n, size=2, replace=False))
        key = (min(u, v), max(u, v))
        if key in present:
            continue
        if max_deg is not None and (deg[u] >= max_deg or deg[v] >= max_deg):
            continue
        present.add(key)
        edges.append(key)
        deg[u] += 1
        deg[v] += 1
    return edges


def _add_chords(rng, n: int, edges: list, count: int) -> list:
    """Add ``count`` chords; each closes a triangle (joins nodes two hops apart)
    with probability 1/2, otherwise joins a random non-adjacent pair."""
    adj = [set() for _ in range(n)]
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    for _ in range(count):
        if rng.random() < 0.5:
            pairs = sorted(
                {(min(a, b), max(a, b)) for w in range(n) for a in adj[w] for b in adj[w]
                 if a != b and b not in adj[a]}
            )
        else:
            pairs = [(a, b) for a in range(n) for b in range(a + 1, n) if b not in adj[a]]
        if not pairs:
            continue
        u, v = pairs[int(rng.integers(len(pairs)))]
        edges.append((u, v))
        adj[u].add(v)
        adj[v].add(u)
    return edges


def _shuffle_nodes(rng, n: int, edges: list) -> list:
    perm = rng.permutation(n)
    return [(int(perm[u]), int(perm[v])) for u, v in edges]


def _candidate(task: str, want: int, rng) -> list:
    """Return (n, edges) drawn from a generator biased towards class ``want``."""
    if task == "star_vs_path":
        if want:
            n = int(rng.integers(6, 21))
            edges = [(0, v) for v in range(1, n)]
        else:
            n = int(rng.integers(6, 21))
            edges = [(v, v + 1) for v in range(n - 1)]
        return n, _shuffle_nodes(rng, n, edges)
    n = int(rng.integers(6, 21))
    if task == "degree_threshold":
        cap = None if want else 3
        edges = _random_tree(rng, n, cap)
        edges = _add_random_edges(rng, n, edges, int(rng.integers(0, 4)), cap)
        return n, _shuffle_nodes(rng, n, edges)
    if task == "triangle_parity":
        edges = _random_tree(rng, n, 4)
        edges = _add_chords(rng, n, edges, int(rng.integers(0, 4)))
        return n, _shuffle_nodes(rng, n, edges)
    raise ValueError(f"unknown synthetic task {task!r}")


def generate_synthetic(task: str, n: int, seed: int) -> Dataset:
    """Draw ``n`` labelled graphs (6 to 20 nodes) for one of the synthetic tasks.

    Classes alternate so the result is balanced to within one sample; every
    label is recomputed from the graph itself by :func:`synthetic_label`.
    """
    if task not in SYNTHETIC_TASKS:
        raise ValueError(f"unknown synthetic task {task!r}; choose from {SYNTHETIC_TASKS}")
    if n < 10:
        raise ValueError("n must be at least 10")
    rng = np.random.default_rng(seed)
    wants = rng.permutation(np.arange(n) % 2)
    graphs = []
    for want in wants:
        while True:
            size, edges = _candidate(task, int(want), rng)
            labels = tuple(int(x) for x in rng.integers(0, NODE_VOCAB, size=size))
            g = Graph(size, labels, tuple(edges), 0)
            y = synthetic_label(task, g)
            if y == want:
                break
        graphs.append(Graph(size, labels, g.edges, y))
    return Dataset(graphs, vocab_size=NODE_VOCAB, name=task)
