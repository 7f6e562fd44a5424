"""Federated training orchestration.

Round loop: seeded client selection, local submodel + watermark-generator
updates on each selected client, robust aggregation at the server, optional
checkpointing. All randomness is derived from (seed, round, client) so a run
is bit-reproducible and resumable from any checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from graphmark import cwg, tensorcore as tc
from graphmark.cwg import ClientWatermarkState, WatermarkSpec
from graphmark.gnn import build_ensemble, submodel_forward_tensors
from graphmark.tensorcore import ContractError, ParameterSet, Tensor

BATCH_SIZE = 32


class ConfigurationError(ValueError):
    pass


@dataclass
class FederatedConfig:
    T: int = 40
    T_w: int = 10
    rounds: int = 200
    selection_fraction: float = 0.5
    lr: float = 0.01
    local_epochs: int = 5
    aggregator: str = "FedAvg"  # FedAvg | TrimMean | MultiKrum
    trim_q: int = 0
    krum_p: int = 0
    malicious_fraction: float = 0.0
    wrong_label: int = 1
    seed: int = 0
    S: int = 4
    conv_type: str = "GIN"
    watermark: WatermarkSpec = field(default_factory=WatermarkSpec)
    watermark_kind: str = "learned"  # "learned" | "random" (ER baseline)

    def validate(self):
        if not 0 < self.selection_fraction <= 1:
            raise ConfigurationError("selection_fraction must be in (0, 1]")
        if self.T_w > self.T:
            raise ConfigurationError("T_w cannot exceed T")
        if self.aggregator not in ("FedAvg", "TrimMean", "MultiKrum"):
            raise ConfigurationError(f"unknown aggregator {self.aggregator!r}")

    def to_dict(self):
        return asdict(self)

    @staticmethod
    def from_dict(d):
        d = dict(d)
        wm = d.pop("watermark", {})
        cfg = FederatedConfig(**d, watermark=WatermarkSpec(**wm))
        cfg.validate()
        return cfg


@dataclass
class ClientState:
    index: int
    graphs: list
    watermark_pool: list              # eligible (graph, node list) pairs
    watermark_count: int              # graphs watermarked per round
    wm_state: ClientWatermarkState | None
    malicious: bool = False
    skipped_graphs: list = field(default_factory=list)


def setup_clients(config, train, partition):
    """Build per-client state; the first T_w clients learn watermarks."""
    config.validate()
    if len(partition.assignment) != config.T:
        raise ConfigurationError(
            f"partition has {len(partition.assignment)} clients, config.T={config.T}")
    spec = config.watermark
    n_malicious = math.ceil(config.malicious_fraction * config.T_w)
    clients = []
    for i in range(config.T):
        graphs = partition.client_graphs(train, i)
        if i >= config.T_w:
            clients.append(ClientState(index=i, graphs=graphs, watermark_pool=[],
                                       watermark_count=0, wm_state=None))
            continue
        state = cwg.setup_client_watermark(i, train.max_nodes, spec, config.seed,
                                           kind=config.watermark_kind)
        want = max(1, round(spec.watermark_fraction * len(graphs)))
        pool, skipped = [], []
        for g in graphs:
            if g.label == spec.target_label:
                continue
            nodes = cwg.select_watermark_nodes(g, spec.n_w, spec.node_seed)
            if nodes is None:
                skipped.append(g.graph_id)
                continue
            pool.append((g, nodes))
            state.train_nodes[g.graph_id] = nodes
        clients.append(ClientState(index=i, graphs=graphs, watermark_pool=pool,
                                   watermark_count=min(want, len(pool)), wm_state=state,
                                   malicious=i < n_malicious, skipped_graphs=skipped))
    return clients


def _batches(items, rng):
    order = rng.permutation(len(items))
    shuffled = [items[k] for k in order]
    if len(shuffled) <= BATCH_SIZE:
        return [shuffled] if shuffled else []
    return [shuffled[k : k + BATCH_SIZE] for k in range(0, len(shuffled), BATCH_SIZE)]


def train_submodels_epoch(model, examples, lr, rng):
    """One epoch of per-submodel SGD over (graph, label) examples."""
    for batch in _batches(examples, rng):
        for sub in model.submodels:
            sub.params.zero_grads()
            losses = []
            for g, label in batch:
                logits = submodel_forward_tensors(sub, Tensor(g.adjacency),
                                                  Tensor(g.features), training=True)
                losses.append(tc.softmax_cross_entropy(logits, label))
            tc.mean_of(losses).backward()
            tc.sgd_step(sub.params, lr)


def round_lr(config, round_index):
    """Inverse-time decay; damps the late-round FedAvg oscillation."""
    return config.lr / (1.0 + round_index / 25.0)


def local_update(client, global_model, config, round_index):
    """Local training for one selected client; returns its parameter set."""
    model = global_model.copy()
    rng = np.random.default_rng([config.seed, 23, round_index, client.index])
    lr = round_lr(config, round_index)
    target = config.wrong_label if client.malicious else config.watermark.target_label

    wm_pairs = []
    if client.wm_state is not None and client.watermark_pool:
        # Rotate the watermarked subset across rounds so the trigger is seen
        # on varied base graphs instead of one memorized example.
        pick_rng = np.random.default_rng([config.seed, 13, round_index, client.index])
        picked = pick_rng.choice(len(client.watermark_pool),
                                 size=client.watermark_count, replace=False)
        wm_pairs = [client.watermark_pool[int(k)] for k in sorted(picked)]
    wm_ids = {g.graph_id for g, _ in wm_pairs}
    examples = [(g, g.label) for g in client.graphs if g.graph_id not in wm_ids]
    if wm_pairs:
        # Oversample to a roughly half-watermarked local mix; the raw
        # watermark slice is tiny and the trigger never generalizes otherwise.
        repeat = max(1, round(len(examples) / len(wm_pairs)))
        for g, nodes in wm_pairs:
            wg = cwg.watermark_graph(client.wm_state, g, nodes, salt=round_index)
            examples.extend([(wg.graph, target)] * repeat)
    for _ in range(config.local_epochs):
        train_submodels_epoch(model, examples, lr, rng)

    if wm_pairs:
        for batch in _batches(wm_pairs, rng):
            cwg.train_cwg_step(client.wm_state, model, batch, lr, rng,
                               target_label=target)
    return model.parameters()


def aggregate_fedavg(param_sets):
    if not param_sets:
        raise ContractError("aggregate_fedavg: empty input")
    out = param_sets[0].copy()
    for name, t in out.items():
        stack = [ps[name].data for ps in param_sets]
        for other in stack[1:]:
            if other.shape != t.shape:
                raise ContractError(f"aggregate_fedavg: shape mismatch on {name!r}")
        t.data = (np.stack(stack).mean(axis=0)).astype(t.dtype)
    return out


def aggregate_trimmed_mean(param_sets, q):
    n = len(param_sets)
    if 2 * q >= n:
        raise ConfigurationError(f"trimmed mean needs > 2q inputs, got n={n}, q={q}")
    out = param_sets[0].copy()
    for name, t in out.items():
        stack = np.stack([ps[name].data for ps in param_sets])
        stack.sort(axis=0)
        t.data = stack[q : n - q].mean(axis=0).astype(t.dtype)
    return out


def aggregate_multikrum(param_sets, p):
    n = len(param_sets)
    if n <= p + 2:
        raise ConfigurationError(f"multi-krum needs n > p + 2, got n={n}, p={p}")
    flats = np.stack([ps.flat_values().astype(np.float64) for ps in param_sets])
    sq = ((flats[:, None, :] - flats[None, :, :]) ** 2).sum(axis=2)
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(sq[i], i))
        scores[i] = others[: n - p - 2].sum()
    keep = np.argsort(scores, kind="stable")[: n - p]
    return aggregate_fedavg([param_sets[int(i)] for i in sorted(keep)])


def aggregate(param_sets, config):
    if config.aggregator == "TrimMean":
        return aggregate_trimmed_mean(param_sets, config.trim_q)
    if config.aggregator == "MultiKrum":
        return aggregate_multikrum(param_sets, config.krum_p)
    return aggregate_fedavg(param_sets)


def selected_clients(config, round_index):
    k = math.ceil(config.selection_fraction * config.T)
    if k < 1:
        raise ConfigurationError("empty client selection")
    rng = np.random.default_rng([config.seed, 31, round_index])
    return sorted(int(i) for i in rng.choice(config.T, size=k, replace=False))


def run_round(model, clients, config, round_index):
    local_sets = [local_update(clients[i], model, config, round_index)
                  for i in selected_clients(config, round_index)]
    model.parameters().load_values(aggregate(local_sets, config))


def init_training(config, train, partition):
    model = build_ensemble(config.S, config.conv_type, train.feature_dim,
                           train.num_classes, [config.seed, 101])
    clients = setup_clients(config, train, partition)
    return model, clients


def run_training(config, train, partition, checkpoint_path=None, checkpoint_every=0,
                 start_round=1, model=None, clients=None):
    """Run the federated loop; returns the global model and all client states.

    ``start_round``/``model``/``clients`` allow resuming from a loaded
    checkpoint; rounds are 1-indexed and RNG streams depend only on
    (seed, round, client), so a resumed run matches the uninterrupted one.
    """
    config.validate()
    if model is None or clients is None:
        model, clients = init_training(config, train, partition)
    for e in range(start_round, config.rounds + 1):
        run_round(model, clients, config, e)
        if checkpoint_path and checkpoint_every and e % checkpoint_every == 0:
            checkpoint_save(checkpoint_path, model, clients, config, e)
    if checkpoint_path:
        checkpoint_save(checkpoint_path, model, clients, config, config.rounds)
    wm_states = [c.wm_state for c in clients if c.wm_state is not None]
    return model, wm_states


def checkpoint_save(path, model, clients, config, round_index):
    arrays = {}
    for name, t in model.parameters().items():
        arrays[name] = t.data
    for c in clients:
        if c.wm_state is not None and c.wm_state.kind == "learned":
            for name, t in c.wm_state.params.items():
                arrays[f"client{c.index}.cwg.{name}"] = t.data
    extra = {"round": round_index, "config": config.to_dict(),
             "rng": {"seed": config.seed, "next_round": round_index + 1}}
    tc.save_records(path, arrays, extra)


def checkpoint_load(path, train, partition):
    """Rebuild (model, clients, round, config) from a checkpoint file."""
    arrays, extra = tc.load_records(path)
    config = FederatedConfig.from_dict(extra["config"])
    model, clients = init_training(config, train, partition)
    params = model.parameters()
    for name, t in params.items():
        if name not in arrays:
            raise tc.RecordFormatError(f"{path}: missing tensor {name!r}")
        t.data = arrays[name].astype(t.dtype)
    for c in clients:
        if c.wm_state is not None and c.wm_state.kind == "learned":
            for name, t in c.wm_state.params.items():
                key = f"client{c.index}.cwg.{name}"
                if key not in arrays:
                    raise tc.RecordFormatError(f"{path}: missing tensor {key!r}")
                t.data = arrays[key].astype(t.dtype)
    return model, clients, int(extra["round"]), config
