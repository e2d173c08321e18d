"""Baseline schemes: restrictions of the joint problem with known orderings."""

import numpy as np
import pytest

from ucmec import SystemConfig, generate_scenario
from ucmec import channel, energetics
from ucmec.baselines import SchemeId, solve_bcdo, solve_oo, solve_proposed, solve_ro, solve_so
from ucmec.optimizer import AdmmConfig

_CFG = AdmmConfig()


@pytest.fixture(scope="module")
def small_runs():
    """One 2-AP / 2-user scenario solved by every scheme."""
    sc = generate_scenario(SystemConfig(num_aps=2, num_users=2), 7)
    proposed, state, e_prop = solve_proposed(sc, _CFG)
    so, e_so = solve_so(sc, _CFG, relaxed=proposed)
    bcdo, e_bcdo = solve_bcdo(sc, _CFG)
    oo, e_oo = solve_oo(sc, _CFG)
    ro, e_ro, trace = solve_ro(sc, _CFG, seed=7, decision=proposed)
    return {
        "scenario": sc,
        "PROPOSED": (proposed, e_prop),
        "SO": (so, e_so),
        "BCDO": (bcdo, e_bcdo),
        "OO": (oo, e_oo),
        "RO": (ro, e_ro),
        "trace": trace,
    }


def test_scheme_ids_serialize():
    assert str(SchemeId.PROPOSED) == "PROPOSED"
    assert SchemeId("SO") is SchemeId.SO


def test_all_schemes_feasible(small_runs):
    sc = small_runs["scenario"]
    for name in ("PROPOSED", "SO", "BCDO", "OO", "RO"):
        dec, _ = small_runs[name]
        assert (dec.bandwidth.sum(axis=1) <= sc.bandwidths * (1 + 1e-6)).all(), name
        assert (dec.compute.sum(axis=1) <= sc.computes * (1 + 1e-6)).all(), name
        assert np.allclose(dec.A.sum(axis=0), 1.0, atol=1e-6), name


def test_so_not_better_than_proposed(small_runs):
    # Binary clustering is a restriction of the relaxation.
    _, e_prop = small_runs["PROPOSED"]
    _, e_so = small_runs["SO"]
    assert e_so.total >= e_prop.total * (1 - 1e-9)


def test_oo_matches_offload_definition(small_runs):
    sc = small_runs["scenario"]
    dec, energy = small_runs["OO"]
    u = channel.rate_coefficients(sc)
    again = energetics.total_energy(sc, dec.A, dec.bandwidth, dec.compute, u)
    assert energy.offload_total == pytest.approx(again.offload_total, rel=1e-2)


def test_oo_offload_no_worse_than_proposed_mean():
    """OO ignores consensus, so its offloading part is at least as cheap."""
    diffs = []
    for seed in (3, 5):
        sc = generate_scenario(SystemConfig(num_aps=2, num_users=2), seed)
        _, _, e_prop = solve_proposed(sc, _CFG)
        _, e_oo = solve_oo(sc, _CFG)
        diffs.append(e_prop.offload_total - e_oo.offload_total)
    assert np.mean(diffs) >= -1e-9


def test_ro_reduces_to_proposed_with_reputation_probs(small_runs):
    sc = small_runs["scenario"]
    dec, e_prop = small_runs["PROPOSED"]
    u = channel.rate_coefficients(sc)
    b_rem, c_rem = energetics.remaining_resources(sc, dec.bandwidth, dec.compute)
    from ucmec import consensus

    profiles = consensus.build_profiles(c_rem, b_rem, sc.config)
    forced = energetics.total_energy(
        sc, dec.A, dec.bandwidth, dec.compute, u, leader_probs=profiles.leader_probabilities
    )
    assert forced.total == pytest.approx(e_prop.total, rel=1e-9)


def test_ro_trace_is_valid_election(small_runs):
    trace = small_runs["trace"]
    assert trace.leader in (0, 1)
    assert (trace.blocks_sent > 0).sum() == 1


def test_bcdo_descent_and_quality(small_runs):
    _, e_prop = small_runs["PROPOSED"]
    _, e_bcdo = small_runs["BCDO"]
    # BCDO tracks PROPOSED on small instances.
    assert e_bcdo.total <= e_prop.total * 1.10


def test_schemes_deterministic():
    sc = generate_scenario(SystemConfig(num_aps=2, num_users=2), 9)
    _, e1 = solve_so(sc, _CFG)
    _, e2 = solve_so(sc, _CFG)
    assert e1.total == e2.total
    _, e3, _ = solve_ro(sc, _CFG, seed=4)
    _, e4, _ = solve_ro(sc, _CFG, seed=4)
    assert e3.total == e4.total
