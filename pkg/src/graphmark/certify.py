"""Certified robustness of the majority-vote ensemble to layer replacement.

Because submodels share no parameters, replacing one layer can change at
most one submodel's vote. The certified radius is the largest number of
arbitrarily replaced layers under which the tie-broken argmax of the vote
counts provably cannot move, plus an exhaustive vote-reassignment oracle
used to validate both soundness and tightness of that bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from graphmark.gnn import ensemble_predict
from graphmark.tensorcore import ContractError


@dataclass
class Certificate:
    counts: np.ndarray
    label_a: int
    label_b: int
    n_a: int
    n_b: int
    r_star: int      # floor((N_A - N_B + [A < B] - 1) / 2); may be negative
    usable_radius: int  # max(r_star, 0)


def certified_radius(counts):
    """Certificate from a vote-count vector (ties break to the smaller index)."""
    counts = np.asarray(counts, dtype=int)
    if counts.size == 0 or counts.sum() < 1:
        raise ContractError("certified_radius: empty vote vector")
    if counts.size < 2:
        raise ContractError("certified_radius: need at least two classes")
    a = int(np.argmax(counts))
    rest = counts.copy()
    rest[a] = -1
    b = int(np.argmax(rest))
    n_a, n_b = int(counts[a]), int(counts[b])
    r_star = (n_a - n_b + (1 if a < b else 0) - 1) // 2
    return Certificate(counts=counts, label_a=a, label_b=b, n_a=n_a, n_b=n_b,
                       r_star=r_star, usable_radius=max(r_star, 0))


def _argmax_tiebreak(counts):
    return int(np.argmax(counts))


def brute_force_certificate_check(counts, r):
    """Exhaustively reassign the votes of up to r submodels to arbitrary
    labels; True iff the tie-broken argmax never changes."""
    counts = np.asarray(counts, dtype=int)
    c = counts.size
    baseline = _argmax_tiebreak(counts)
    if r == 0:
        return True
    # Take x_y votes away from each label (sum <= r), then distribute the
    # removed votes over labels in every possible way.
    take_ranges = [range(int(counts[y]) + 1) for y in range(c)]
    for taken in product(*take_ranges):
        moved = sum(taken)
        if moved > r:
            continue
        reduced = counts - np.asarray(taken)
        for added in _compositions(moved, c):
            final = reduced + np.asarray(added)
            if _argmax_tiebreak(final) != baseline:
                return False
    return True


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


def certify_graph(model, wg):
    """(prediction, Certificate) for one watermarked graph."""
    votes, label = ensemble_predict(model, wg.graph)
    return label, certified_radius(votes.counts)


def cwa_at_r(model, watermarked_test, y_w, r):
    """Fraction of watermarked graphs predicted y_w with certified radius >= r."""
    if not watermarked_test:
        raise ContractError("cwa_at_r: empty watermarked test set")
    if r < 0:
        raise ContractError("cwa_at_r: r must be >= 0")
    hits = 0
    for wg in watermarked_test:
        label, cert = certify_graph(model, wg)
        if label == y_w and r <= cert.r_star:
            hits += 1
    return hits / len(watermarked_test)


def cwa_curve(model, watermarked_test, y_w, radii):
    """CWA at each radius from a single prediction pass."""
    if not watermarked_test:
        raise ContractError("cwa_curve: empty watermarked test set")
    certs = [certify_graph(model, wg) for wg in watermarked_test]
    curve = {}
    for r in radii:
        curve[int(r)] = sum(1 for label, cert in certs
                            if label == y_w and r <= cert.r_star) / len(certs)
    return curve


def certificate_table(model, watermarked_test):
    """Structured per-graph certificate rows for reports."""
    rows = []
    for wg in watermarked_test:
        label, cert = certify_graph(model, wg)
        rows.append({
            "graph_id": wg.graph.graph_id,
            "client": wg.client_index,
            "prediction": label,
            "N_A": cert.n_a,
            "N_B": cert.n_b,
            "r_star": cert.r_star,
        })
    return rows
