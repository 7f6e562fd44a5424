"""Graph-classification corpora: parsing, splitting, and client partitioning.

Reads the plain-text TUDataset layout (``DS_A.txt`` edge list,
``DS_graph_indicator.txt``, ``DS_graph_labels.txt``, optional
``DS_node_labels.txt``), builds one-hot node features, performs deterministic
stratified train/test splits, and partitions training graphs across simulated
federated clients.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

DEGREE_FEATURE_CAP = 64


class IngestionError(IOError):
    """A required corpus file is missing or unreadable."""


class CorruptCorpusError(ValueError):
    """The corpus files are internally inconsistent."""


class ConfigurationError(ValueError):
    """A split/partition request cannot be satisfied."""


@dataclass
class Graph:
    """One labeled graph with a binary symmetric zero-diagonal adjacency."""

    node_count: int
    adjacency: np.ndarray  # (n, n) float32 in {0, 1}
    features: np.ndarray   # (n, F) float32
    label: int
    graph_id: int

    def validate(self):
        a = self.adjacency
        if a.shape != (self.node_count, self.node_count):
            raise CorruptCorpusError(f"graph {self.graph_id}: adjacency shape {a.shape}")
        if not np.array_equal(a, a.T):
            raise CorruptCorpusError(f"graph {self.graph_id}: adjacency not symmetric")
        if np.any(np.diag(a) != 0):
            raise CorruptCorpusError(f"graph {self.graph_id}: nonzero diagonal")
        if not np.all((a == 0) | (a == 1)):
            raise CorruptCorpusError(f"graph {self.graph_id}: adjacency not binary")
        if self.features.shape[0] != self.node_count:
            raise CorruptCorpusError(f"graph {self.graph_id}: feature row count")


@dataclass
class Dataset:
    graphs: list[Graph]
    num_classes: int
    max_nodes: int
    feature_dim: int

    def labels(self):
        return np.array([g.label for g in self.graphs])

    @staticmethod
    def from_graphs(graphs, num_classes=None, max_nodes=None, feature_dim=None):
        if num_classes is None:
            num_classes = int(max(g.label for g in graphs)) + 1 if graphs else 0
        if max_nodes is None:
            max_nodes = max((g.node_count for g in graphs), default=0)
        if feature_dim is None:
            feature_dim = graphs[0].features.shape[1] if graphs else 0
        return Dataset(graphs=list(graphs), num_classes=num_classes,
                       max_nodes=max_nodes, feature_dim=feature_dim)


@dataclass
class ClientPartition:
    assignment: dict[int, list[int]]
    mode: str
    seed: int = 0

    def client_graphs(self, train, client):
        return [train.graphs[i] for i in self.assignment[client]]


def _read_lines(path):
    if not os.path.exists(path):
        raise IngestionError(f"missing corpus file: {path}")
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def parse_tudataset(directory_path):
    """Parse a TUDataset directory into a :class:`Dataset`.

    Node features are one-hot node labels when ``DS_node_labels.txt`` exists,
    otherwise one-hot node degree clamped to [0, F-1] with
    F = min(max degree, 64) + 1. Graph labels are remapped to contiguous
    0-based indices; asymmetric edge lists are symmetrized silently.
    """
    name = os.path.basename(os.path.normpath(directory_path))
    prefix = os.path.join(directory_path, name)

    indicator = [int(x) for x in _read_lines(f"{prefix}_graph_indicator.txt")]
    raw_labels = [int(round(float(x))) for x in _read_lines(f"{prefix}_graph_labels.txt")]
    edges = []
    for line in _read_lines(f"{prefix}_A.txt"):
        i, j = (int(p.strip()) for p in line.split(","))
        edges.append((i, j))

    num_graphs = max(indicator)
    if len(raw_labels) != num_graphs:
        raise CorruptCorpusError(
            f"{name}: {len(raw_labels)} graph labels for {num_graphs} graphs")

    # Node ids are 1-indexed and global; map them to (graph, local index).
    nodes_per_graph = [0] * num_graphs
    node_graph = np.array(indicator) - 1
    local_index = np.zeros(len(indicator), dtype=int)
    for v, gi in enumerate(node_graph):
        local_index[v] = nodes_per_graph[gi]
        nodes_per_graph[gi] += 1

    adjacencies = [np.zeros((n, n), dtype=np.float32) for n in nodes_per_graph]
    for i, j in edges:
        if not (1 <= i <= len(indicator)) or not (1 <= j <= len(indicator)):
            raise CorruptCorpusError(f"{name}: dangling node index in edge ({i}, {j})")
        gi, gj = node_graph[i - 1], node_graph[j - 1]
        if gi != gj:
            raise CorruptCorpusError(f"{name}: edge ({i}, {j}) crosses graphs")
        a, b = local_index[i - 1], local_index[j - 1]
        if a != b:
            adjacencies[gi][a, b] = 1.0
            adjacencies[gi][b, a] = 1.0

    node_label_path = f"{prefix}_node_labels.txt"
    if os.path.exists(node_label_path):
        node_labels = [int(round(float(x))) for x in _read_lines(node_label_path)]
        if len(node_labels) != len(indicator):
            raise CorruptCorpusError(f"{name}: node label count mismatch")
        uniq = sorted(set(node_labels))
        remap = {v: k for k, v in enumerate(uniq)}
        feature_dim = len(uniq)
        per_node_feat = np.array([remap[v] for v in node_labels])
    else:
        degs = np.zeros(len(indicator), dtype=int)
        for v in range(len(indicator)):
            gi = node_graph[v]
            degs[v] = adjacencies[gi][local_index[v]].sum()
        feature_dim = min(int(degs.max(initial=0)), DEGREE_FEATURE_CAP) + 1
        per_node_feat = np.minimum(degs, feature_dim - 1)

    label_map = {v: k for k, v in enumerate(sorted(set(raw_labels)))}
    graphs = []
    for gi in range(num_graphs):
        n = nodes_per_graph[gi]
        feats = np.zeros((n, feature_dim), dtype=np.float32)
        for v in range(len(indicator)):
            if node_graph[v] == gi:
                feats[local_index[v], per_node_feat[v]] = 1.0
        g = Graph(node_count=n, adjacency=adjacencies[gi], features=feats,
                  label=label_map[raw_labels[gi]], graph_id=gi)
        g.validate()
        graphs.append(g)

    return Dataset(graphs=graphs, num_classes=len(label_map),
                   max_nodes=max(nodes_per_graph), feature_dim=feature_dim)


def stratified_split(dataset, per_class_train_counts, seed):
    """Deterministic stratified split; test gets the per-class remainder."""
    if len(per_class_train_counts) != dataset.num_classes:
        raise ConfigurationError(
            f"{len(per_class_train_counts)} counts for {dataset.num_classes} classes")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls, want in enumerate(per_class_train_counts):
        members = [i for i, g in enumerate(dataset.graphs) if g.label == cls]
        if want > len(members):
            raise ConfigurationError(
                f"class {cls}: requested {want} train graphs, only {len(members)} available")
        order = rng.permutation(len(members))
        chosen = [members[k] for k in order]
        train_idx.extend(chosen[:want])
        test_idx.extend(chosen[want:])
    train_idx.sort()
    test_idx.sort()
    make = lambda idx: Dataset(
        graphs=[dataset.graphs[i] for i in idx],
        num_classes=dataset.num_classes,
        max_nodes=dataset.max_nodes,
        feature_dim=dataset.feature_dim,
    )
    return make(train_idx), make(test_idx)


def partition_clients(train, T, mode, seed):
    """Assign training-graph indices to T clients.

    IID shuffles then deals round-robin; LabelSkew sorts by label and hands
    out contiguous chunks so each client holds (as nearly as possible) a
    single label.
    """
    n = len(train.graphs)
    if T > n:
        raise ConfigurationError(f"T={T} clients exceed {n} training graphs")
    rng = np.random.default_rng(seed)
    assignment = {c: [] for c in range(T)}
    if mode == "IID":
        order = rng.permutation(n)
        for pos, idx in enumerate(order):
            assignment[pos % T].append(int(idx))
    elif mode == "LabelSkew":
        order = sorted(range(n), key=lambda i: (train.graphs[i].label, i))
        bounds = np.linspace(0, n, T + 1).round().astype(int)
        for c in range(T):
            assignment[c] = [order[k] for k in range(bounds[c], bounds[c + 1])]
    else:
        raise ConfigurationError(f"unknown partition mode {mode!r}")
    for c in range(T):
        assignment[c].sort()
        if not assignment[c]:
            raise ConfigurationError(f"client {c} received no graphs")
    return ClientPartition(assignment=assignment, mode=mode, seed=seed)
