"""Watermark-removal attacks against a trained watermarked ensemble.

Three white-box attacks: distillation on pseudo-labeled data, finetuning on
labeled data, and the greedy layer-perturbation attack that swaps layers in
from an unwatermarked shadow model of the same architecture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from graphmark.fed import train_submodels_epoch
from graphmark.gnn import LAYERS_PER_SUBMODEL, build_ensemble, ensemble_predict, replace_layer
from graphmark.tensorcore import ContractError


class ConfigurationError(ValueError):
    pass


@dataclass
class AttackConfig:
    attacker_data_fraction: float = 0.2
    attack_epochs: int = 20
    attack_lr: float = 0.01
    num_perturbed_layers: int = 1
    ma_drop_budget: float = 0.04


def _train_copy(model, examples, cfg, seed):
    out = model.copy()
    rng = np.random.default_rng([seed, 47])
    for _ in range(cfg.attack_epochs):
        train_submodels_epoch(out, examples, cfg.attack_lr, rng)
    return out


def distillation_attack(target, unlabeled, cfg, seed=0):
    """Retrain a copy of the target on its own ensemble predictions."""
    if not unlabeled:
        raise ConfigurationError("distillation attack needs unlabeled graphs")
    examples = [(g, ensemble_predict(target, g)[1]) for g in unlabeled]
    return _train_copy(target, examples, cfg, seed)


def finetune_attack(target, labeled, cfg, seed=0):
    """Continue training a copy of the target on true labels."""
    if not labeled:
        raise ConfigurationError("finetune attack needs labeled graphs")
    examples = [(g, g.label) for g in labeled]
    return _train_copy(target, examples, cfg, seed)


def train_shadow_model(target, labeled, cfg, seed=0, epochs=None):
    """Fresh model of the target's architecture trained on clean data only."""
    first = target.submodels[0].config
    shadow = build_ensemble(target.num_submodels, first.conv_type, first.in_dim,
                            first.out_dim, [seed, 53])
    examples = [(g, g.label) for g in labeled]
    rng = np.random.default_rng([seed, 59])
    for _ in range(epochs if epochs is not None else cfg.attack_epochs):
        train_submodels_epoch(shadow, examples, cfg.attack_lr, rng)
    return shadow


def _accuracy(model, graphs, labels):
    hits = sum(1 for g, y in zip(graphs, labels) if ensemble_predict(model, g)[1] == y)
    return hits / len(graphs)


def layer_perturbation_attack(target, shadow, watermarked_samples, clean_samples,
                              r, cfg, y_w):
    """Greedy layer replacement: r steps, each picking the not-yet-replaced
    layer that minimizes watermark accuracy among candidates whose clean
    accuracy drop stays within the budget (budget lifted if none qualifies;
    ties go to higher clean accuracy, then lower layer id).

    Returns (attacked model, per-step trace).
    """
    total_layers = target.num_submodels * LAYERS_PER_SUBMODEL
    if r > total_layers:
        raise ConfigurationError(f"r={r} exceeds {total_layers} layers")
    if target.architecture_hash() != shadow.architecture_hash():
        raise ContractError("shadow architecture does not match target")
    wm_graphs = [wg.graph for wg in watermarked_samples]
    wm_labels = [y_w] * len(wm_graphs)
    clean_labels = [g.label for g in clean_samples]
    base_ma = _accuracy(target, clean_samples, clean_labels)

    current = target
    replaced = set()
    trace = []
    for _ in range(r):
        candidates = []
        for layer in current.layer_ids:
            if layer in replaced:
                continue
            trial = replace_layer(current, layer, shadow)
            wa = _accuracy(trial, wm_graphs, wm_labels) if wm_graphs else 0.0
            ma = _accuracy(trial, clean_samples, clean_labels)
            candidates.append((layer, wa, ma))
        within = [c for c in candidates if base_ma - c[2] <= cfg.ma_drop_budget]
        pool = within if within else candidates
        # min WA, then max MA, then lowest layer id
        layer, wa, ma = min(pool, key=lambda c: (c[1], -c[2], c[0]))
        current = replace_layer(current, layer, shadow)
        replaced.add(layer)
        trace.append({"layer": list(layer), "wa": wa, "ma": ma})
    return current, trace
