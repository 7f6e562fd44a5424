"""Ensemble GNN classifier: independent submodels combined by majority vote.

Each submodel is a 4-conv-block graph network (GIN, GSAGE, or GCN
aggregation) with batch norm, jumping-knowledge sum-pool readouts after the
input features and after every block, and a channel schedule that varies
across submodels. A submodel exposes five replaceable "layers": the input
readout linear plus the four conv blocks (conv weights, BN, block readout).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from graphmark import tensorcore as tc
from graphmark.tensorcore import ContractError, ParameterSet, Tensor

CONV_TYPES = ("GIN", "GSAGE", "GCN")
SUPPORTED_S = (1, 2, 4, 8, 16)
LAYERS_PER_SUBMODEL = 5
CONV_BLOCKS = 4
FINAL_WIDTHS = (64, 32, 16, 8)


class ConfigurationError(ValueError):
    pass


@dataclass
class SubmodelConfig:
    conv_type: str
    hidden_width: int
    final_width: int
    in_dim: int
    out_dim: int
    conv_layers: int = CONV_BLOCKS


@dataclass
class Submodel:
    config: SubmodelConfig
    params: ParameterSet


@dataclass
class EnsembleModel:
    submodels: list[Submodel]

    @property
    def num_submodels(self):
        return len(self.submodels)

    @property
    def layer_ids(self):
        return [(s, l) for s in range(len(self.submodels)) for l in range(LAYERS_PER_SUBMODEL)]

    def parameters(self):
        """Flat view over all submodels, names ``sub{i}.layer{l}.{tensor}``."""
        out = ParameterSet()
        for i, sub in enumerate(self.submodels):
            for name, t in sub.params.items():
                out.add(f"sub{i}.{name}", t)
        return out

    def copy(self):
        subs = [Submodel(config=s.config, params=s.params.copy()) for s in self.submodels]
        return EnsembleModel(submodels=subs)

    def architecture_hash(self):
        h = hashlib.sha256()
        for sub in self.submodels:
            h.update(sub.config.conv_type.encode())
            for name, t in sub.params.items():
                h.update(name.encode())
                h.update(str(t.shape).encode())
        return h.hexdigest()


@dataclass
class VoteCount:
    counts: np.ndarray
    predicted: int


def hidden_width_for(index):
    """Table-driven channel schedule: 64 for submodels 0-3, 128 for 4-7,
    then alternating 72/96."""
    if index < 4:
        return 64
    if index < 8:
        return 128
    return 72 if index % 2 == 0 else 96


def _init_linear(params, prefix, fan_in, fan_out, rng, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    params.add(f"{prefix}_w", Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)),
                                     requires_grad=True, dtype=dtype))
    params.add(f"{prefix}_b", Tensor(rng.uniform(-bound, bound, (fan_out,)),
                                     requires_grad=True, dtype=dtype))


def build_submodel(index, conv_type, in_dim, out_dim, rng, dtype=np.float32):
    if conv_type not in CONV_TYPES:
        raise ConfigurationError(f"unknown conv type {conv_type!r}")
    cfg = SubmodelConfig(conv_type=conv_type, hidden_width=hidden_width_for(index),
                         final_width=FINAL_WIDTHS[index % 4], in_dim=in_dim, out_dim=out_dim)
    params = ParameterSet()
    _init_linear(params, "layer0.readout", in_dim, out_dim, rng, dtype)
    widths = [in_dim, cfg.hidden_width, cfg.hidden_width, cfg.hidden_width, cfg.final_width]
    for l in range(1, CONV_BLOCKS + 1):
        w_in, w_out = widths[l - 1], widths[l]
        bound = 1.0 / np.sqrt(w_in)
        params.add(f"layer{l}.conv_w", Tensor(rng.uniform(-bound, bound, (w_in, w_out)),
                                              requires_grad=True, dtype=dtype))
        if conv_type == "GSAGE":
            params.add(f"layer{l}.conv_w_self", Tensor(rng.uniform(-bound, bound, (w_in, w_out)),
                                                       requires_grad=True, dtype=dtype))
        params.add(f"layer{l}.bn_gamma", Tensor(np.ones(w_out), requires_grad=True, dtype=dtype))
        params.add(f"layer{l}.bn_beta", Tensor(np.zeros(w_out), requires_grad=True, dtype=dtype))
        params.add(f"layer{l}.bn_mean", Tensor(np.zeros(w_out), dtype=dtype))
        params.add(f"layer{l}.bn_var", Tensor(np.ones(w_out), dtype=dtype))
        _init_linear(params, f"layer{l}.readout", w_out, out_dim, rng, dtype)
    return Submodel(config=cfg, params=params)


def build_ensemble(S, conv_type, in_dim, out_dim, seed, dtype=np.float32):
    if S not in SUPPORTED_S:
        raise ConfigurationError(f"unsupported submodel count S={S}")
    rng = np.random.default_rng(seed)
    subs = [build_submodel(i, conv_type, in_dim, out_dim, rng, dtype) for i in range(S)]
    return EnsembleModel(submodels=subs)


def _conv_aggregate(conv_type, adj, h, params, layer, dtype):
    """One message-passing step. Degree normalizations for GCN/GSAGE are
    computed from the adjacency values and treated as constants on the tape."""
    n = adj.shape[0]
    eye = Tensor(np.eye(n), dtype=dtype)
    w = params[f"layer{layer}.conv_w"]
    if conv_type == "GIN":
        return tc.matmul(tc.matmul(tc.add(adj, eye), h), w)
    if conv_type == "GCN":
        deg_hat = adj.data.sum(axis=1) + 1.0
        norm = 1.0 / np.sqrt(deg_hat)
        scaling = Tensor(np.outer(norm, norm), dtype=dtype)
        op = tc.mul(tc.add(adj, eye), scaling)
        return tc.matmul(tc.matmul(op, h), w)
    # GSAGE: mean-neighbor aggregation plus a self term; isolated nodes keep
    # only the self term because their adjacency row is zero.
    deg = adj.data.sum(axis=1)
    inv_deg = 1.0 / np.maximum(deg, 1.0)
    row_scale = Tensor(np.repeat(inv_deg[:, None], n, axis=1), dtype=dtype)
    nbr = tc.matmul(tc.matmul(tc.mul(adj, row_scale), h), w)
    self_term = tc.matmul(h, params[f"layer{layer}.conv_w_self"])
    return tc.add(nbr, self_term)


def submodel_forward_tensors(m, adj, features, training=False):
    """Logits tensor of shape (1, C) for one graph given tape tensors."""
    if features.shape[1] != m.config.in_dim:
        raise tc.ShapeError(
            f"feature dim {features.shape[1]} != model input dim {m.config.in_dim}")
    dtype = features.dtype
    p = m.params
    logits = tc.add(tc.matmul(tc.sum_pool_rows(features), p["layer0.readout_w"]),
                    p["layer0.readout_b"])
    h = features
    for l in range(1, CONV_BLOCKS + 1):
        z = _conv_aggregate(m.config.conv_type, adj, h, p, l, dtype)
        # Batch is one graph, so per-batch statistics would wipe out absolute
        # magnitudes (degree information). Normalize with the tracked running
        # statistics in both modes; training still refreshes the buffers.
        z = tc.batch_norm(z, p[f"layer{l}.bn_gamma"], p[f"layer{l}.bn_beta"],
                          p[f"layer{l}.bn_mean"], p[f"layer{l}.bn_var"], training,
                          use_batch_stats=False)
        h = tc.relu(z)
        block_logits = tc.add(tc.matmul(tc.sum_pool_rows(h), p[f"layer{l}.readout_w"]),
                              p[f"layer{l}.readout_b"])
        logits = tc.add(logits, block_logits)
    return logits


def submodel_forward(m, g, training=False):
    """Logits vector (length C, numpy) for one Graph."""
    adj = Tensor(g.adjacency)
    feats = Tensor(g.features)
    return submodel_forward_tensors(m, adj, feats, training).data.reshape(-1)


def ensemble_predict(model, g):
    """Majority vote over submodel argmax labels; ties go to the smaller index."""
    c = model.submodels[0].config.out_dim
    counts = np.zeros(c, dtype=int)
    for sub in model.submodels:
        logits = submodel_forward(sub, g)
        counts[int(np.argmax(logits))] += 1
    predicted = int(np.argmax(counts))
    return VoteCount(counts=counts, predicted=predicted), predicted


def ensemble_predict_sum(model, g):
    """Alternative rule: sum the submodels' softmax vectors, then argmax."""
    c = model.submodels[0].config.out_dim
    total = np.zeros(c, dtype=np.float64)
    for sub in model.submodels:
        logits = submodel_forward(sub, g).astype(np.float64)
        shifted = np.exp(logits - logits.max())
        total += shifted / shifted.sum()
    return int(np.argmax(total))


def layer_tensor_names(submodel, layer):
    prefix = f"layer{layer}."
    return [name for name in submodel.params.names() if name.startswith(prefix)]


def replace_layer(model, layer, donor):
    """Copy of ``model`` with one (submodel, layer) block taken from ``donor``."""
    si, li = layer
    if si >= model.num_submodels or li >= LAYERS_PER_SUBMODEL:
        raise ContractError(f"layer id {layer} out of range")
    if model.architecture_hash() != donor.architecture_hash():
        raise ContractError("donor architecture does not match target")
    out = model.copy()
    sub = out.submodels[si]
    for name in layer_tensor_names(sub, li):
        sub.params[name].data = donor.submodels[si].params[name].data.copy()
    return out
