"""Per-client learned graph watermarks.

A client's watermark generator is a pair of fixed-width nets: a gating net
reading the (padded) graph adjacency and a key net reading a client-specific
key matrix derived from the client id. Their elementwise product, masked to
the selected watermark-node pairs and passed through a hard 0.5 threshold
(straight-through in training), decides which watermark edges exist. The
module also provides the Erdos-Renyi random-pattern baseline.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from graphmark import tensorcore as tc
from graphmark.gnn import submodel_forward_tensors
from graphmark.graphdata import Graph
from graphmark.tensorcore import ParameterSet, Tensor

DROPOUT_P = 0.05
THRESHOLD = 0.5
# Bias of the final sigmoid layers at init. Positive so the initial soft
# scores sit above the threshold: training starts from a dense, consistent
# trigger and learns per-client structure from there.
FINAL_BIAS_INIT = 2.0


@dataclass
class WatermarkSpec:
    n_w: int = 4
    target_label: int = 0
    node_seed: int = 17
    watermark_fraction: float = 0.10


@dataclass
class ClientKey:
    client_id: str
    matrix: np.ndarray  # (N_max, N_max) float32 in [0, 1), symmetric


@dataclass
class ClientWatermarkState:
    """Everything one watermarked client owns: key, generator nets, node picks."""

    client_index: int
    client_id: str
    key: ClientKey
    params: ParameterSet
    spec: WatermarkSpec
    n_max: int
    kind: str = "learned"  # "learned" | "random" (ER baseline)
    pattern_seed: int = 0
    train_nodes: dict = field(default_factory=dict)  # graph_id -> node list


@dataclass
class WatermarkedGraph:
    base: Graph
    watermark_nodes: list
    pattern: np.ndarray  # (n_w, n_w) binary symmetric zero-diagonal
    graph: Graph         # base with watermark-pair edges replaced, label = y_w
    client_index: int | None = None
    fallback: bool = False


def _splitmix64_stream(seed, count):
    """SplitMix64 sequence mapped to float64 uniforms in [0, 1)."""
    mask = (1 << 64) - 1
    state = seed & mask
    out = np.empty(count, dtype=np.float64)
    for i in range(count):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        z = z ^ (z >> 31)
        out[i] = (z >> 11) * (1.0 / (1 << 53))
    return out


def derive_key_matrix(client_id, n_max):
    """Key matrix from MD5(client_id): low 64 hash bits seed a SplitMix64
    stream filled row-major, then the upper triangle is mirrored down."""
    if not client_id:
        raise tc.ContractError("client_id must be non-empty")
    digest = hashlib.md5(client_id.encode()).digest()
    seed = int.from_bytes(digest[-8:], "little")
    flat = _splitmix64_stream(seed, n_max * n_max)
    k = flat.reshape(n_max, n_max)
    iu = np.triu_indices(n_max, k=1)
    k[(iu[1], iu[0])] = k[iu]
    return ClientKey(client_id=client_id, matrix=k.astype(np.float32))


def select_watermark_nodes(g, n_w, seed):
    """Deterministic sample of n_w distinct nodes; None if the graph is too small."""
    if g.node_count < n_w:
        return None
    rng = np.random.default_rng([seed, g.graph_id])
    return sorted(int(v) for v in rng.choice(g.node_count, size=n_w, replace=False))


def build_mask(nodes, n):
    m = np.zeros((n, n), dtype=np.float32)
    idx = np.array(nodes)
    m[np.ix_(idx, idx)] = 1.0
    m[idx, idx] = 0.0
    return m


def init_cwg_params(n_max, seed, dtype=np.float32):
    """Two 3-layer fixed-width nets (ReLU+Dropout twice, Sigmoid last)."""
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    bound = 1.0 / np.sqrt(n_max)
    for net in ("gating", "key"):
        for layer in range(3):
            params.add(f"{net}.w{layer}",
                       Tensor(rng.uniform(-bound, bound, (n_max, n_max)),
                              requires_grad=True, dtype=dtype))
            bias = np.full(n_max, FINAL_BIAS_INIT) if layer == 2 else np.zeros(n_max)
            params.add(f"{net}.b{layer}", Tensor(bias, requires_grad=True, dtype=dtype))
    return params


def _net_forward(params, net, x, training, rng):
    h = x
    for layer in range(2):
        h = tc.add(tc.matmul(h, params[f"{net}.w{layer}"]), params[f"{net}.b{layer}"])
        h = tc.relu(h)
        h = tc.dropout(h, DROPOUT_P, rng, training)
    h = tc.add(tc.matmul(h, params[f"{net}.w2"]), params[f"{net}.b2"])
    return tc.sigmoid(h)


def cwg_forward(a_pad, key, m_pad, params, training=False, rng=None):
    """Watermark pattern for one padded adjacency.

    Returns (W, soft): W is the hard, symmetrized binary pattern (straight
    through to ``soft`` on the backward pass), soft the masked gating/key
    product that carries the gradient.
    """
    n_max = params["gating.w0"].shape[0]
    if a_pad.shape != (n_max, n_max):
        raise tc.ShapeError(f"cwg_forward: adjacency {a_pad.shape} vs width {n_max}")
    if training and rng is None:
        raise tc.ContractError("training-mode cwg_forward needs a dropout rng")
    rng = rng or np.random.default_rng(0)
    a_tilde = _net_forward(params, "gating", a_pad, training, rng)
    k_tilde = _net_forward(params, "key", key, training, rng)
    soft = tc.mul(tc.mul(a_tilde, k_tilde), m_pad)
    w_half = tc.ste_gt(soft, THRESHOLD)
    w = tc.ste_gt(tc.add(w_half, tc.transpose(w_half)), 0.0)
    return w, soft


def apply_watermark(g, w_full, nodes, y_w):
    """Replace the edge status among the watermark nodes by the pattern."""
    idx = np.array(nodes)
    adj = g.adjacency.copy()
    adj[np.ix_(idx, idx)] = 0.0
    pattern = np.asarray(w_full)[np.ix_(idx, idx)].astype(np.float32).copy()
    pattern = ((pattern + pattern.T) > 0).astype(np.float32)
    np.fill_diagonal(pattern, 0.0)
    adj[np.ix_(idx, idx)] = pattern
    marked = Graph(node_count=g.node_count, adjacency=adj,
                   features=g.features, label=int(y_w), graph_id=g.graph_id)
    marked.validate()
    return WatermarkedGraph(base=g, watermark_nodes=list(nodes), pattern=pattern, graph=marked)


def er_random_watermark(n_w, p, seed):
    """Erdos-Renyi pattern: each unordered pair is an edge with probability p."""
    rng = np.random.default_rng(seed)
    pattern = np.zeros((n_w, n_w), dtype=np.float32)
    for a in range(n_w):
        for b in range(a + 1, n_w):
            if rng.random() < p:
                pattern[a, b] = pattern[b, a] = 1.0
    return pattern


def _padded_inputs(state, g, nodes):
    """Zero-padded adjacency (watermark pairs cleared), key, and mask tensors."""
    n_max = state.n_max
    a_pad = np.zeros((n_max, n_max), dtype=np.float32)
    a_pad[: g.node_count, : g.node_count] = g.adjacency
    idx = np.array(nodes)
    a_pad[np.ix_(idx, idx)] = 0.0
    m_pad = build_mask(nodes, n_max)
    return Tensor(a_pad), Tensor(state.key.matrix), Tensor(m_pad)


def generate_pattern(state, g, nodes, salt=None):
    """The client's hard n_w x n_w pattern for one graph (eval mode).

    ``salt`` varies the random-kind pattern (a fresh ER draw per training
    round, standing in for the evolving generator output); None gives the
    fixed per-graph evaluation draw.
    """
    if state.kind == "random":
        seed = [state.pattern_seed, g.graph_id]
        if salt is not None:
            seed.append(salt)
        return er_random_watermark(len(nodes), 0.5, seed)
    a_pad, key, m_pad = _padded_inputs(state, g, nodes)
    w, _ = cwg_forward(a_pad, key, m_pad, state.params, training=False)
    return w.data[np.ix_(np.array(nodes), np.array(nodes))].copy()


def watermark_graph(state, g, nodes=None, salt=None):
    """Watermarked copy of ``g`` using this client's generator."""
    if nodes is None:
        nodes = select_watermark_nodes(g, state.spec.n_w, state.spec.node_seed)
    if nodes is None:
        return None
    pattern = generate_pattern(state, g, nodes, salt=salt)
    w_full = np.zeros((g.node_count, g.node_count), dtype=np.float32)
    w_full[np.ix_(np.array(nodes), np.array(nodes))] = pattern
    out = apply_watermark(g, w_full, nodes, state.spec.target_label)
    out.client_index = state.client_index
    return out


def train_cwg_step(state, model, batch, lr, rng, target_label=None):
    """One SGD step on the generator nets; the ensemble stays frozen.

    ``batch`` is a list of (graph, nodes) pairs. The loss is the mean over
    submodels and graphs of the cross-entropy toward the target label, with
    the gradient reaching the nets through the straight-through threshold.
    """
    if state.kind != "learned" or not batch:
        return state.params
    y = state.spec.target_label if target_label is None else target_label
    losses = []
    for g, nodes in batch:
        a_pad_t, key_t, m_pad_t = _padded_inputs(state, g, nodes)
        w, _ = cwg_forward(a_pad_t, key_t, m_pad_t, state.params, training=True, rng=rng)
        n = g.node_count
        base = g.adjacency.copy()
        idx = np.array(nodes)
        base[np.ix_(idx, idx)] = 0.0
        adj_w = tc.add(Tensor(base), tc.slice2d(w, n, n))
        feats = Tensor(g.features)
        for sub in model.submodels:
            logits = submodel_forward_tensors(sub, adj_w, feats, training=False)
            losses.append(tc.softmax_cross_entropy(logits, y))
    loss = tc.mean_of(losses)
    state.params.zero_grads()
    loss.backward()
    tc.sgd_step(state.params, lr)
    model.parameters().zero_grads()
    return state.params


def setup_client_watermark(client_index, n_max, spec, seed, kind="learned"):
    """Build a fresh watermark state for one client."""
    client_id = str(client_index)
    key = derive_key_matrix(client_id, n_max)
    params = init_cwg_params(n_max, [seed, client_index])
    return ClientWatermarkState(
        client_index=client_index, client_id=client_id, key=key, params=params,
        spec=spec, n_max=n_max, kind=kind,
        pattern_seed=int(np.random.default_rng([seed, client_index, 7]).integers(2**31)),
    )


def build_watermark_testset(test, clients, mode="PerClient"):
    """Watermarked evaluation graphs from test graphs whose label differs
    from the target.

    PerClient: every eligible graph once per client, on that client's node
    selection. Global: clients get disjoint node blocks on large graphs and
    all cross-block watermark-node pairs are connected; small graphs fall
    back to PerClient (flagged).
    """
    out = []
    if not clients:
        return out
    y_w = clients[0].spec.target_label
    eligible = [g for g in test.graphs if g.label != y_w]
    if mode == "Global" and len(clients) == 1:
        mode = "PerClient"  # a single block with no cross-links is the per-client case
    if mode == "PerClient":
        for state in clients:
            for g in eligible:
                wg = watermark_graph(state, g)
                if wg is not None:
                    out.append(wg)
        return out
    if mode != "Global":
        raise tc.ContractError(f"unknown watermark test mode {mode!r}")
    n_w = clients[0].spec.n_w
    need = len(clients) * n_w
    for g in eligible:
        if g.node_count < need:
            for state in clients:
                wg = watermark_graph(state, g)
                if wg is not None:
                    wg.fallback = True
                    out.append(wg)
            continue
        rng = np.random.default_rng([clients[0].spec.node_seed, g.graph_id, 3])
        chosen = rng.choice(g.node_count, size=need, replace=False)
        adj = g.adjacency.copy()
        all_nodes = sorted(int(v) for v in chosen)
        idx_all = np.array(all_nodes)
        adj[np.ix_(idx_all, idx_all)] = 0.0
        blocks = []
        for bi, state in enumerate(clients):
            nodes = sorted(int(v) for v in chosen[bi * n_w : (bi + 1) * n_w])
            blocks.append(nodes)
            pattern = generate_pattern(state, g, nodes)
            adj[np.ix_(np.array(nodes), np.array(nodes))] = pattern
        # Fully connect watermark nodes across different client blocks.
        for bi in range(len(blocks)):
            for bj in range(bi + 1, len(blocks)):
                for a in blocks[bi]:
                    for b in blocks[bj]:
                        adj[a, b] = adj[b, a] = 1.0
        marked = Graph(node_count=g.node_count, adjacency=adj, features=g.features,
                       label=y_w, graph_id=g.graph_id)
        marked.validate()
        out.append(WatermarkedGraph(base=g, watermark_nodes=all_nodes,
                                    pattern=adj[np.ix_(idx_all, idx_all)].copy(),
                                    graph=marked, client_index=None))
    return out
