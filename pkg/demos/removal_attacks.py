"""Attack study: train one model with the learned watermark generator and one
with fixed random patterns, then try to remove both watermarks by
distillation, finetuning, and greedy layer replacement.

The learned watermark should survive all three; the random-pattern baseline
loses accuracy under layer replacement.  Takes a few minutes at the default
scale; lower --rounds for a faster (but less robust) watermark.
"""

import argparse
import tempfile

import numpy as np

from graphmark.attacks import (AttackConfig, distillation_attack,
                               finetune_attack, layer_perturbation_attack,
                               train_shadow_model)
from graphmark.cwg import WatermarkSpec, build_watermark_testset, watermark_graph
from graphmark.fed import FederatedConfig, run_training
from graphmark.graphdata import parse_tudataset, partition_clients, stratified_split
from graphmark.synthcorpus import write_synthetic_corpus
from graphmark.verify import compute_ma, compute_wa


def attacker_pools(seed, train, test, wm_state, fraction=0.2, n_samples=20):
    """Attacker-side data: a slice of the training pool plus watermarked
    samples from one leaked client generator."""
    rng = np.random.default_rng([seed, 71])
    n = max(1, round(fraction * len(train.graphs)))
    idx = sorted(int(i) for i in rng.choice(len(train.graphs), size=n, replace=False))
    pool = [train.graphs[i] for i in idx]
    samples = []
    for g in test.graphs:
        if g.label == wm_state.spec.target_label:
            continue
        wg = watermark_graph(wm_state, g)
        if wg is not None:
            samples.append(wg)
        if len(samples) == n_samples:
            break
    return pool, samples


def run_attacks(tag, model, wm_states, train, test, seed):
    y_w = wm_states[0].spec.target_label
    wm_test = build_watermark_testset(test, wm_states, "PerClient")
    pool, samples = attacker_pools(seed, train, test, wm_states[0])
    acfg = AttackConfig()
    shadow = train_shadow_model(model, pool, acfg, seed=seed)
    attacked = {
        "none": model,
        "distillation": distillation_attack(model, pool, acfg, seed=seed),
        "finetune": finetune_attack(model, pool, acfg, seed=seed),
        "layer replacement": layer_perturbation_attack(
            model, shadow, samples, pool, 1, acfg, y_w)[0],
    }
    print(f"\n{tag}:")
    for name, m in attacked.items():
        print(f"  {name:<18} MA={compute_ma(m, test):.3f} "
              f"WA={compute_wa(m, wm_test, y_w):.3f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus", default=None)
    ap.add_argument("--rounds", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    corpus = args.corpus
    if corpus is None:
        corpus = write_synthetic_corpus(tempfile.mkdtemp(prefix="graphmark_demo_"),
                                        seed=0)
        print(f"synthesized corpus at {corpus}")
    dataset = parse_tudataset(corpus)
    train, test = stratified_split(dataset, [42, 83], seed=1)
    partition = partition_clients(train, 10, "IID", seed=2)

    for kind, tag in (("learned", "learned watermark generator"),
                      ("random", "fixed random patterns")):
        config = FederatedConfig(T=10, T_w=5, rounds=args.rounds, S=2,
                                 seed=args.seed, watermark=WatermarkSpec(),
                                 watermark_kind=kind)
        print(f"\ntraining with {tag} ({args.rounds} rounds) ...")
        model, wm_states = run_training(config, train, partition)
        run_attacks(tag, model, wm_states, train, test, args.seed)


if __name__ == "__main__":
    main()
