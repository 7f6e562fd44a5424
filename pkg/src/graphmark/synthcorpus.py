"""Deterministic synthetic corpora in the TUDataset plain-text layout.

The sandbox has no access to the real TU graph corpora, so tests and the
bundled demo configs run on a generated stand-in that matches the MUTAG
profile: 188 graphs, 2 classes with 125/63 members, 7 node-label types,
average node count 17.93, max 28. Both classes share one structural family
(degree-capped random trees with a few extra chords, so sparse and clique
free) and differ in their node-label distributions; the class signal is
learnable but does not scale with graph size, which keeps small inserted
motifs salient.
"""

from __future__ import annotations

import os

import numpy as np

MUTAG_PROFILE = {
    "name": "MUTAG",
    "class_sizes": [63, 125],     # written as raw labels 1 and 2
    "node_label_count": 7,
    "total_nodes": 3371,          # 188 graphs, average 17.93 nodes
    "min_nodes": 10,
    "max_nodes": 28,
}

_LABEL_DIST = {
    0: np.array([0.34, 0.26, 0.18, 0.10, 0.06, 0.04, 0.02]),
    1: np.array([0.02, 0.04, 0.06, 0.10, 0.18, 0.26, 0.34]),
}


def _draw_sizes(rng, count, total, lo, hi):
    sizes = rng.integers(lo, hi + 1, size=count)
    sizes[0] = hi  # pin the max so N_max is stable across seeds
    # Nudge random entries until the exact total is hit.
    diff = int(total - sizes.sum())
    step = 1 if diff > 0 else -1
    while diff != 0:
        k = int(rng.integers(1, count))
        if lo <= sizes[k] + step <= hi:
            sizes[k] += step
            diff -= step
    return sizes


def _sparse_graph(rng, n):
    """Random tree plus a few chords, all node degrees capped at 3."""
    degree = np.zeros(n, dtype=int)
    edges = set()
    for v in range(1, n):
        open_nodes = [u for u in range(v) if degree[u] < 3] or list(range(v))
        u = int(rng.choice(open_nodes))
        edges.add((u, v))
        degree[u] += 1
        degree[v] += 1
    for _ in range(int(rng.integers(1, 4))):
        open_nodes = np.flatnonzero(degree < 3)
        if open_nodes.size < 2:
            break
        a, b = sorted(int(x) for x in rng.choice(open_nodes, size=2, replace=False))
        if (a, b) in edges:
            continue
        edges.add((a, b))
        degree[a] += 1
        degree[b] += 1
    return edges


def write_synthetic_corpus(out_dir, seed=0, profile=MUTAG_PROFILE):
    """Write a synthetic corpus into ``out_dir/<name>/`` and return that path."""
    rng = np.random.default_rng(seed)
    name = profile["name"]
    ds_dir = os.path.join(out_dir, name)
    os.makedirs(ds_dir, exist_ok=True)

    labels = []
    for cls, size in enumerate(profile["class_sizes"]):
        labels.extend([cls] * size)
    order = rng.permutation(len(labels))
    labels = [labels[i] for i in order]

    sizes = _draw_sizes(rng, len(labels), profile["total_nodes"],
                        profile["min_nodes"], profile["max_nodes"])

    a_lines, indicator_lines, node_label_lines, graph_label_lines = [], [], [], []
    offset = 0
    for gi, (cls, n) in enumerate(zip(labels, sizes)):
        edges = _sparse_graph(rng, int(n))
        for a, b in sorted(edges):
            a_lines.append(f"{offset + a + 1}, {offset + b + 1}")
            a_lines.append(f"{offset + b + 1}, {offset + a + 1}")
        node_labels = rng.choice(profile["node_label_count"], size=int(n), p=_LABEL_DIST[cls])
        node_label_lines.extend(str(int(v)) for v in node_labels)
        indicator_lines.extend([str(gi + 1)] * int(n))
        graph_label_lines.append(str(cls + 1))  # raw labels are 1-indexed
        offset += int(n)

    files = {
        f"{name}_A.txt": a_lines,
        f"{name}_graph_indicator.txt": indicator_lines,
        f"{name}_graph_labels.txt": graph_label_lines,
        f"{name}_node_labels.txt": node_label_lines,
    }
    for fname, lines in files.items():
        with open(os.path.join(ds_dir, fname), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return ds_dir
