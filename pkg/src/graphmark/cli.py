"""Command-line pipelines: ingest, train, attack, certify, verify, report.

Configs are TOML; every subcommand writes a manifest (config hash, dataset
hash, seed, artifact version) plus machine-readable JSON and an aligned text
table into the output directory. All outputs are deterministic for a fixed
config and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

import graphmark
from graphmark import attacks, certify, cwg, fed, verify
from graphmark.attacks import AttackConfig
from graphmark.cwg import WatermarkSpec, build_watermark_testset
from graphmark.fed import FederatedConfig
from graphmark.graphdata import parse_tudataset, partition_clients, stratified_split
from graphmark.synthcorpus import write_synthetic_corpus

SCHEMA_VERSION = 1

SCALE_PRESETS = {
    "full": {},
    "desk": {"T": 20, "rounds": 100},
    "ci": {"T": 10, "rounds": 40},
}

_KNOWN_KEYS = {
    "dataset": {"path", "name", "profile", "train_counts", "train_fraction", "split_seed",
                "partition_mode", "partition_seed"},
    "model": {"conv_type", "S"},
    "federated": {"T", "T_w", "rounds", "selection_fraction", "lr", "local_epochs",
                  "aggregator", "trim_q", "krum_p", "malicious_fraction", "wrong_label"},
    "watermark": {"n_w", "target_label", "node_seed", "watermark_fraction", "kind"},
    "attack": {"kind", "attacker_data_fraction", "attack_epochs", "attack_lr",
               "num_perturbed_layers", "ma_drop_budget", "shadow_epochs"},
    "evaluation": {"watermark_mode", "r_list", "verify_threshold"},
}


class UsageError(ValueError):
    pass


def load_config(path, seed=None, scale=None):
    """Parse and validate a run config; unknown keys are rejected."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    for section, keys in raw.items():
        if section == "seed":
            continue
        if section not in _KNOWN_KEYS:
            raise UsageError(f"unknown config section [{section}]")
        unknown = set(keys) - _KNOWN_KEYS[section]
        if unknown:
            raise UsageError(f"unknown key(s) in [{section}]: {sorted(unknown)}")

    cfg = {
        "seed": int(raw.get("seed", 0)),
        "dataset": {"profile": "", "train_counts": None, "train_fraction": 0.67,
                    "split_seed": 1, "partition_mode": "IID", "partition_seed": 2,
                    **raw.get("dataset", {})},
        "model": {"conv_type": "GIN", "S": 4, **raw.get("model", {})},
        "federated": {"T": 40, "T_w": 10, "rounds": 200, "selection_fraction": 0.5,
                      "lr": 0.01, "local_epochs": 5, "aggregator": "FedAvg",
                      "trim_q": 0, "krum_p": 0, "malicious_fraction": 0.0,
                      "wrong_label": 1, **raw.get("federated", {})},
        "watermark": {"n_w": 4, "target_label": 0, "node_seed": 17,
                      "watermark_fraction": 0.10, "kind": "learned",
                      **raw.get("watermark", {})},
        "attack": {"kind": "LayerPerturbation", "attacker_data_fraction": 0.2,
                   "attack_epochs": 20, "attack_lr": 0.01, "num_perturbed_layers": 1,
                   "ma_drop_budget": 0.04, "shadow_epochs": 0, **raw.get("attack", {})},
        "evaluation": {"watermark_mode": "PerClient", "r_list": [0, 1, 2, 3, 4, 5],
                       "verify_threshold": 0.0, **raw.get("evaluation", {})},
    }
    if "path" not in cfg["dataset"]:
        raise UsageError("dataset.path is required")
    if seed is not None:
        cfg["seed"] = int(seed)
    if scale:
        if scale not in SCALE_PRESETS:
            raise UsageError(f"unknown scale preset {scale!r}")
        cfg["federated"].update(SCALE_PRESETS[scale])
    # Dataset-profile override: the smallest corpus halves S and T_w.
    if cfg["dataset"]["profile"] == "MUTAG":
        cfg["model"]["S"] = max(1, cfg["model"]["S"] // 2)
        cfg["federated"]["T_w"] = max(1, cfg["federated"]["T_w"] // 2)
    cfg["federated"]["T_w"] = min(cfg["federated"]["T_w"], cfg["federated"]["T"])
    return cfg


def federated_config(cfg):
    return FederatedConfig(
        seed=cfg["seed"],
        S=cfg["model"]["S"],
        conv_type=cfg["model"]["conv_type"],
        watermark=WatermarkSpec(
            n_w=cfg["watermark"]["n_w"],
            target_label=cfg["watermark"]["target_label"],
            node_seed=cfg["watermark"]["node_seed"],
            watermark_fraction=cfg["watermark"]["watermark_fraction"],
        ),
        watermark_kind=cfg["watermark"]["kind"],
        **cfg["federated"],
    )


def load_split(cfg):
    """Dataset, train/test split, and client partition from the config."""
    ds = parse_tudataset(cfg["dataset"]["path"])
    counts = cfg["dataset"]["train_counts"]
    if counts is None:
        labels = ds.labels()
        counts = [int(round(cfg["dataset"]["train_fraction"] * (labels == c).sum()))
                  for c in range(ds.num_classes)]
    train, test = stratified_split(ds, counts, cfg["dataset"]["split_seed"])
    partition = partition_clients(train, cfg["federated"]["T"],
                                  cfg["dataset"]["partition_mode"],
                                  cfg["dataset"]["partition_seed"])
    return ds, train, test, partition


def _hash_bytes(data):
    return hashlib.sha256(data).hexdigest()


def _dataset_hash(path):
    h = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        fpath = os.path.join(path, name)
        if os.path.isfile(fpath):
            h.update(name.encode())
            with open(fpath, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out_dir, cfg):
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": graphmark.__version__,
        "seed": cfg["seed"],
        "config": cfg,
        "config_hash": _hash_bytes(json.dumps(cfg, sort_keys=True).encode()),
        "dataset_hash": _dataset_hash(cfg["dataset"]["path"]),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _table(rows, columns):
    widths = [max(len(str(r.get(c, ""))) for r in rows + [{c: c}]) for c in columns]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(columns, widths))]
    for r in rows:
        lines.append("  ".join(str(r.get(c, "")).ljust(w) for c, w in zip(columns, widths)))
    return "\n".join(lines) + "\n"


def _attacker_pools(cfg, train, test, wm_states):
    """Deterministic attacker-side data: a slice of the training pool and
    watermarked samples built with one leaked client's generator."""
    rng = np.random.default_rng([cfg["seed"], 71])
    n = max(1, round(cfg["attack"]["attacker_data_fraction"] * len(train.graphs)))
    idx = sorted(int(i) for i in rng.choice(len(train.graphs), size=n, replace=False))
    pool = [train.graphs[i] for i in idx]
    leaked = wm_states[0]
    eligible = [g for g in test.graphs if g.label != leaked.spec.target_label]
    wm_samples = []
    for g in eligible:
        wg = cwg.watermark_graph(leaked, g)
        if wg is not None:
            wm_samples.append(wg)
        if len(wm_samples) == 20:
            break
    return pool, wm_samples


def _evaluate(model, test, wm_states, cfg):
    y_w = cfg["watermark"]["target_label"]
    wm_test = build_watermark_testset(test, wm_states, cfg["evaluation"]["watermark_mode"])
    ma = verify.compute_ma(model, test)
    wa = verify.compute_wa(model, wm_test, y_w)
    per_client = verify.per_client_wa(model, wm_test, y_w)
    return ma, wa, {str(k): v for k, v in per_client.items()}, wm_test


def cmd_synth(args):
    path = write_synthetic_corpus(args.out, seed=args.seed or 0)
    print(f"wrote synthetic corpus to {path}")
    return 0


def cmd_ingest(args, cfg, out_dir):
    ds, train, test, partition = load_split(cfg)
    labels = ds.labels()
    summary = {
        "schema_version": SCHEMA_VERSION,
        "num_graphs": len(ds.graphs),
        "num_classes": ds.num_classes,
        "feature_dim": ds.feature_dim,
        "max_nodes": ds.max_nodes,
        "avg_nodes": round(float(np.mean([g.node_count for g in ds.graphs])), 4),
        "class_sizes": [int((labels == c).sum()) for c in range(ds.num_classes)],
        "train_graphs": len(train.graphs),
        "test_graphs": len(test.graphs),
        "clients": len(partition.assignment),
    }
    _write_json(os.path.join(out_dir, "ingest.json"), summary)
    rows = [{"metric": k, "value": v} for k, v in sorted(summary.items())]
    with open(os.path.join(out_dir, "ingest.txt"), "w") as fh:
        fh.write(_table(rows, ["metric", "value"]))
    print(_table(rows, ["metric", "value"]))
    return 0


def cmd_train(args, cfg, out_dir):
    _, train, test, partition = load_split(cfg)
    fcfg = federated_config(cfg)
    ckpt = os.path.join(out_dir, "model.ckpt")
    model, wm_states = fed.run_training(fcfg, train, partition, checkpoint_path=ckpt,
                                        checkpoint_every=args.checkpoint_every)
    ma, wa, per_client, _ = _evaluate(model, test, wm_states, cfg)
    metrics = {"schema_version": SCHEMA_VERSION, "MA": ma, "WA": wa,
               "per_client_WA": per_client, "rounds": fcfg.rounds, "S": fcfg.S}
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    row = {"dataset": cfg["dataset"].get("name", "dataset"), "attack": "None",
           "MA": round(ma, 4), "WA": round(wa, 4)}
    with open(os.path.join(out_dir, "metrics.txt"), "w") as fh:
        fh.write(_table([row], ["dataset", "attack", "MA", "WA"]))
    print(_table([row], ["dataset", "attack", "MA", "WA"]))
    return 0


def _load_checkpoint(args, cfg):
    _, train, test, partition = load_split(cfg)
    if not os.path.exists(args.checkpoint):
        raise IOError(f"missing checkpoint: {args.checkpoint}")
    model, clients, round_index, fcfg = fed.checkpoint_load(args.checkpoint, train, partition)
    wm_states = [c.wm_state for c in clients if c.wm_state is not None]
    return train, test, model, wm_states, fcfg


def cmd_attack(args, cfg, out_dir):
    train, test, model, wm_states, fcfg = _load_checkpoint(args, cfg)
    acfg = AttackConfig(
        attacker_data_fraction=cfg["attack"]["attacker_data_fraction"],
        attack_epochs=cfg["attack"]["attack_epochs"],
        attack_lr=cfg["attack"]["attack_lr"],
        num_perturbed_layers=cfg["attack"]["num_perturbed_layers"],
        ma_drop_budget=cfg["attack"]["ma_drop_budget"],
    )
    pool, wm_samples = _attacker_pools(cfg, train, test, wm_states)
    kind = cfg["attack"]["kind"]
    y_w = cfg["watermark"]["target_label"]
    trace = []
    if kind == "Distillation":
        attacked = attacks.distillation_attack(model, pool, acfg, seed=cfg["seed"])
    elif kind == "Finetune":
        attacked = attacks.finetune_attack(model, pool, acfg, seed=cfg["seed"])
    elif kind == "LayerPerturbation":
        shadow_epochs = cfg["attack"]["shadow_epochs"] or None
        shadow = attacks.train_shadow_model(model, pool, acfg, seed=cfg["seed"],
                                            epochs=shadow_epochs)
        attacked, trace = attacks.layer_perturbation_attack(
            model, shadow, wm_samples, pool, acfg.num_perturbed_layers, acfg, y_w)
    else:
        raise UsageError(f"unknown attack kind {kind!r}")
    pre_ma, pre_wa, _, _ = _evaluate(model, test, wm_states, cfg)
    post_ma, post_wa, _, _ = _evaluate(attacked, test, wm_states, cfg)
    arrays = {name: t.data for name, t in attacked.parameters().items()}
    fed.tc.save_records(os.path.join(out_dir, "attacked.ckpt"), arrays,
                        {"attack": kind, "config": fcfg.to_dict()})
    report = {"schema_version": SCHEMA_VERSION, "attack": kind,
              "pre": {"MA": pre_ma, "WA": pre_wa},
              "post": {"MA": post_ma, "WA": post_wa}, "trace": trace}
    _write_json(os.path.join(out_dir, "attack.json"), report)
    rows = [{"stage": "pre", "MA": round(pre_ma, 4), "WA": round(pre_wa, 4)},
            {"stage": "post", "MA": round(post_ma, 4), "WA": round(post_wa, 4)}]
    with open(os.path.join(out_dir, "attack.txt"), "w") as fh:
        fh.write(_table(rows, ["stage", "MA", "WA"]))
    print(_table(rows, ["stage", "MA", "WA"]))
    return 0


def cmd_certify(args, cfg, out_dir):
    _, test, model, wm_states, _ = _load_checkpoint(args, cfg)
    y_w = cfg["watermark"]["target_label"]
    wm_test = build_watermark_testset(test, wm_states, cfg["evaluation"]["watermark_mode"])
    radii = cfg["evaluation"]["r_list"]
    curve = certify.cwa_curve(model, wm_test, y_w, radii)
    table = certify.certificate_table(model, wm_test)
    report = {"schema_version": SCHEMA_VERSION,
              "cwa": {str(r): v for r, v in curve.items()}, "certificates": table}
    _write_json(os.path.join(out_dir, "certify.json"), report)
    rows = [{"r": r, "CWA": round(curve[r], 4)} for r in sorted(curve)]
    with open(os.path.join(out_dir, "certify.txt"), "w") as fh:
        fh.write(_table(rows, ["r", "CWA"]))
    print(_table(rows, ["r", "CWA"]))
    return 0


def cmd_verify(args, cfg, out_dir):
    _, test, model, wm_states, _ = _load_checkpoint(args, cfg)
    y_w = cfg["watermark"]["target_label"]
    threshold = cfg["evaluation"]["verify_threshold"] or verify.default_threshold(
        test.num_classes)
    claimant_sets = {}
    for state in wm_states:
        graphs = [wg for wg in build_watermark_testset(test, [state], "PerClient")]
        claimant_sets[state.client_index] = graphs
    verdict = verify.ownership_verification(model, claimant_sets, y_w, threshold)
    report = {"schema_version": SCHEMA_VERSION,
              "per_client_WA": {str(k): v for k, v in verdict.per_client_wa.items()},
              "threshold": verdict.threshold, "participating": verdict.participating,
              "decision": verdict.decision, "offline_clients": verdict.offline_clients}
    _write_json(os.path.join(out_dir, "verify.json"), report)
    print(f"verdict: {'POSITIVE' if verdict.decision else 'NEGATIVE'} "
          f"({sum(1 for v in verdict.per_client_wa.values() if v >= threshold)}"
          f"/{verdict.participating} clients over threshold {threshold:.2f})")
    return 0


def cmd_report(args):
    rows = []
    for root, _, files in sorted(os.walk(args.run_dir)):
        for fname in sorted(files):
            if fname not in ("metrics.json", "attack.json", "certify.json"):
                continue
            with open(os.path.join(root, fname)) as fh:
                data = json.load(fh)
            rel = os.path.relpath(root, args.run_dir)
            if fname == "metrics.json":
                rows.append({"run": rel, "attack": "None",
                             "MA": round(data["MA"], 4), "WA": round(data["WA"], 4)})
            elif fname == "attack.json":
                rows.append({"run": rel, "attack": data["attack"],
                             "MA": round(data["post"]["MA"], 4),
                             "WA": round(data["post"]["WA"], 4)})
            else:
                for r, v in sorted(data["cwa"].items(), key=lambda kv: int(kv[0])):
                    rows.append({"run": rel, "attack": f"CWA@{r}", "MA": "",
                                 "WA": round(v, 4)})
    if not rows:
        print("no reports found", file=sys.stderr)
        return 1
    text = _table(rows, ["run", "attack", "MA", "WA"])
    with open(os.path.join(args.run_dir, "report.txt"), "w") as fh:
        fh.write(text)
    _write_json(os.path.join(args.run_dir, "report.json"),
                {"schema_version": SCHEMA_VERSION, "rows": rows})
    print(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="graphmark",
                                     description="Federated graph watermarking pipelines")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1,
                       help="worker pool size; 1 is the bit-reproducible mode")
        p.add_argument("--scale", choices=sorted(SCALE_PRESETS), default=None)
        if checkpoint:
            p.add_argument("--checkpoint", required=True)

    common(sub.add_parser("ingest", help="parse a corpus and summarize it"))
    p_train = sub.add_parser("train", help="run federated watermark training")
    common(p_train)
    p_train.add_argument("--checkpoint-every", type=int, default=0)
    common(sub.add_parser("attack", help="run a watermark-removal attack"), checkpoint=True)
    common(sub.add_parser("certify", help="certificates and the CWA curve"), checkpoint=True)
    common(sub.add_parser("verify", help="ownership-verification protocol"), checkpoint=True)
    p_rep = sub.add_parser("report", help="consolidate a run directory")
    p_rep.add_argument("run_dir")
    p_syn = sub.add_parser("synth", help="write the synthetic benchmark corpus")
    p_syn.add_argument("--out", required=True)
    p_syn.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "report":
            return cmd_report(args)
        cfg = load_config(args.config, seed=args.seed, scale=args.scale)
        os.makedirs(args.out, exist_ok=True)
        write_manifest(args.out, cfg)
        handler = {"ingest": cmd_ingest, "train": cmd_train, "attack": cmd_attack,
                   "certify": cmd_certify, "verify": cmd_verify}[args.command]
        return handler(args, cfg, args.out)
    except UsageError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (IOError, fed.tc.RecordFormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except (fed.ConfigurationError, graphmark.graphdata.ConfigurationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
