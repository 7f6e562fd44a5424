"""Shared helpers for the test suite: random fixtures and independent oracles."""

import numpy as np

from graphmark.graphdata import Dataset, Graph


def random_graph(rng, n, feature_dim=5, num_classes=2, p=0.3, graph_id=0):
    """Random binary symmetric zero-diagonal graph with one-hot features."""
    upper = rng.random((n, n)) < p
    adj = np.triu(upper, k=1)
    adj = (adj | adj.T).astype(np.float32)
    feats = np.zeros((n, feature_dim), dtype=np.float32)
    feats[np.arange(n), rng.integers(feature_dim, size=n)] = 1.0
    g = Graph(node_count=n, adjacency=adj, features=feats,
              label=int(rng.integers(num_classes)), graph_id=graph_id)
    g.validate()
    return g


def random_dataset(rng, count, n_range=(5, 9), feature_dim=5, num_classes=2):
    graphs = [random_graph(rng, int(rng.integers(*n_range)), feature_dim,
                           num_classes, graph_id=i) for i in range(count)]
    # Make sure both classes occur.
    graphs[0].label = 0
    graphs[1].label = 1
    return Dataset.from_graphs(graphs, num_classes=num_classes)


def finite_difference_check(tensors, forward, h=1e-5, rtol=1e-3, atol=1e-5,
                            reset=None):
    """Compare analytic grads of a scalar-producing ``forward`` against
    central finite differences, entry by entry, in the tensors' own dtype
    (callers use float64). ``reset`` restores any state the forward mutates."""

    def value():
        if reset is not None:
            reset()
        return float(forward().data.reshape(()))

    if reset is not None:
        reset()
    loss = forward()
    for t in tensors:
        t.grad = None
    loss.backward()
    grads = []
    for t in tensors:
        assert t.grad is not None, "parameter received no gradient"
        grads.append(t.grad.copy())
    for t, grad in zip(tensors, grads):
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = value()
            flat[k] = orig - h
            down = value()
            flat[k] = orig
            numeric = (up - down) / (2.0 * h)
            analytic = gflat[k]
            tol = atol + rtol * max(abs(numeric), abs(analytic))
            assert abs(numeric - analytic) <= tol, (
                f"entry {k}: analytic {analytic} vs numeric {numeric}")


def oracle_trimmed_mean(stacks, q):
    """Independent per-coordinate trimmed mean on a (n, ...) stack."""
    s = np.sort(np.asarray(stacks, dtype=np.float64), axis=0)
    n = s.shape[0]
    return s[q: n - q].mean(axis=0)


def oracle_multikrum_keep(flats, p):
    """Independent Multi-Krum selection: indices of the n-p lowest scores."""
    flats = np.asarray(flats, dtype=np.float64)
    n = flats.shape[0]
    scores = []
    for i in range(n):
        dists = sorted(
            float(((flats[i] - flats[j]) ** 2).sum()) for j in range(n) if j != i)
        scores.append(sum(dists[: n - p - 2]))
    order = sorted(range(n), key=lambda i: (scores[i], i))
    return sorted(order[: n - p])
