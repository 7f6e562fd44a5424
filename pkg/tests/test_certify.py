"""Certified radius, the exhaustive reassignment oracle, and CWA metrics."""

from itertools import product

import numpy as np
import pytest

from graphmark import certify
from graphmark.certify import (brute_force_certificate_check, certified_radius,
                               cwa_at_r, cwa_curve)
from graphmark.tensorcore import ContractError


def _vote_vectors(S, C):
    """All count vectors over C labels summing to S."""
    for combo in product(range(S + 1), repeat=C):
        if sum(combo) == S:
            yield np.array(combo)


# -- radius formula ----------------------------------------------------------

def test_unanimous_s4():
    cert = certified_radius([4, 0])
    assert (cert.label_a, cert.label_b) == (0, 1)
    assert cert.r_star == 2


def test_tie_gives_zero_radius():
    cert = certified_radius([2, 2])
    assert cert.label_a == 0  # smaller index wins the tie
    assert cert.r_star == 0


def test_unanimous_s16():
    assert certified_radius([16, 0]).r_star == 8


def test_radius_can_be_negative_but_usable_clamped():
    cert = certified_radius([0, 4])  # A=1, B=0, I[A<B]=0: (4-0+0-1)//2 = 1
    assert cert.r_star == 1
    cert = certified_radius([2, 2, 0])
    assert cert.r_star == 0 and cert.usable_radius == 0


def test_radius_empty_votes():
    with pytest.raises(ContractError):
        certified_radius([])
    with pytest.raises(ContractError):
        certified_radius([0, 0])


# -- brute-force oracle ------------------------------------------------------

def test_oracle_r0_always_true():
    for votes in _vote_vectors(4, 3):
        assert brute_force_certificate_check(votes, 0)


def test_oracle_counterexample():
    # Three flips turn {A:4, B:0} into {A:1, B:3}.
    assert not brute_force_certificate_check([4, 0], 3)


def test_oracle_s16_unanimous():
    assert brute_force_certificate_check([16, 0], 8)
    assert not brute_force_certificate_check([16, 0], 9)


@pytest.mark.parametrize("S,C", [(2, 2), (4, 2), (4, 3), (6, 3)])
def test_equivalence_small(S, C):
    """check(votes, r) iff r <= r_star, for every vote vector and r <= S."""
    for votes in _vote_vectors(S, C):
        r_star = certified_radius(votes).r_star
        for r in range(S + 1):
            assert brute_force_certificate_check(votes, r) == (r <= r_star), \
                f"votes={votes.tolist()} r={r} r_star={r_star}"


# -- CWA metrics (vote fixtures via a stubbed predictor) ---------------------

class _Stub:
    pass


def _patch_votes(monkeypatch, votes_by_id):
    def fake_predict(model, graph):
        counts = np.array(votes_by_id[graph.graph_id])
        vc = _Stub()
        vc.counts = counts
        return vc, int(np.argmax(counts))
    monkeypatch.setattr(certify, "ensemble_predict", fake_predict)


def _wgs(ids):
    out = []
    for gid in ids:
        wg = _Stub()
        g = _Stub()
        g.graph_id = gid
        wg.graph = g
        out.append(wg)
    return out


def test_cwa_hand_count(monkeypatch):
    # 10 graphs: 4 unanimous (r*=2), 3 split 3-1 (r*=1), 2 predicted wrong,
    # 1 tied 2-2 (r*=0). Target label 0.
    votes = {}
    for i in range(4):
        votes[i] = [4, 0]
    for i in range(4, 7):
        votes[i] = [3, 1]
    for i in range(7, 9):
        votes[i] = [1, 3]
    votes[9] = [2, 2]
    _patch_votes(monkeypatch, votes)
    wgs = _wgs(range(10))
    assert cwa_at_r(None, wgs, 0, 0) == pytest.approx(0.8)  # 8 predicted 0
    assert cwa_at_r(None, wgs, 0, 1) == pytest.approx(0.7)
    assert cwa_at_r(None, wgs, 0, 2) == pytest.approx(0.4)
    assert cwa_at_r(None, wgs, 0, 3) == pytest.approx(0.0)


def test_cwa_curve_matches_pointwise_and_monotone(monkeypatch):
    rng = np.random.default_rng(0)
    votes = {}
    for gid in range(30):
        a = int(rng.integers(5))
        votes[gid] = [a, 4 - a]
    _patch_votes(monkeypatch, votes)
    wgs = _wgs(range(30))
    curve = cwa_curve(None, wgs, 0, range(6))
    values = [curve[r] for r in range(6)]
    assert values == sorted(values, reverse=True)
    for r in range(6):
        assert curve[r] == pytest.approx(cwa_at_r(None, wgs, 0, r))


def test_cwa_empty_set():
    with pytest.raises(ContractError):
        cwa_at_r(None, [], 0, 0)
    with pytest.raises(ContractError):
        cwa_curve(None, [], 0, [0])


def test_cwa_negative_r():
    with pytest.raises(ContractError):
        cwa_at_r(None, _wgs([0]), 0, -1)
