"""Evaluation metrics and the trusted-judge ownership-verification protocol."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from graphmark.gnn import ensemble_predict
from graphmark.tensorcore import ContractError


@dataclass
class Metrics:
    ma: float
    wa: float
    cwa: dict = field(default_factory=dict)
    per_client_wa: dict = field(default_factory=dict)


@dataclass
class VerificationVerdict:
    claimant: str
    per_client_wa: dict
    threshold: float
    participating: int
    decision: bool
    offline_clients: list


def compute_ma(model, clean_test):
    """Fraction of clean test graphs the ensemble labels correctly."""
    graphs = clean_test.graphs if hasattr(clean_test, "graphs") else list(clean_test)
    if not graphs:
        raise ContractError("compute_ma: empty test set")
    hits = sum(1 for g in graphs if ensemble_predict(model, g)[1] == g.label)
    return hits / len(graphs)


def per_client_wa(model, watermarked_test, y_w):
    """Watermark accuracy per client tag (None tag = global watermark)."""
    if not watermarked_test:
        raise ContractError("per_client_wa: empty watermarked test set")
    hits = defaultdict(int)
    totals = defaultdict(int)
    for wg in watermarked_test:
        totals[wg.client_index] += 1
        if ensemble_predict(model, wg.graph)[1] == y_w:
            hits[wg.client_index] += 1
    return {c: hits[c] / totals[c] for c in totals}


def compute_wa(model, watermarked_test, y_w):
    """Mean over clients of per-client watermark-accuracy fractions."""
    per_client = per_client_wa(model, watermarked_test, y_w)
    return sum(per_client.values()) / len(per_client)


def default_threshold(num_classes):
    # Strictly above chance for any class count.
    return max(0.5, 2.0 / num_classes)


def ownership_verification(model, claimant_sets, y_w, threshold):
    """Majority rule over participating clients' watermark accuracies.

    ``claimant_sets`` maps client id to that client's watermarked graphs;
    offline clients are represented by absent or None entries and ignored.
    Verdict is positive iff a strict majority of participating clients reach
    WA >= threshold.
    """
    participating = {c: graphs for c, graphs in claimant_sets.items() if graphs}
    offline = sorted(c for c in claimant_sets if c not in participating)
    if not participating:
        raise ContractError("ownership_verification: no participating clients")
    wa = {}
    for c, graphs in sorted(participating.items()):
        hits = sum(1 for wg in graphs if ensemble_predict(model, wg.graph)[1] == y_w)
        wa[c] = hits / len(graphs)
    passing = sum(1 for v in wa.values() if v >= threshold)
    decision = passing > len(participating) / 2
    return VerificationVerdict(claimant="", per_client_wa=wa, threshold=threshold,
                               participating=len(participating), decision=decision,
                               offline_clients=offline)
