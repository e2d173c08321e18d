"""Delay/energy bookkeeping oracles."""

import numpy as np
import pytest

from ucmec import SystemConfig, generate_scenario
from ucmec import channel, consensus, energetics


def _simple_scenario(seed=1, m=2, n=2):
    return generate_scenario(SystemConfig(num_aps=m, num_users=n), seed)


def _uniform_feasible(sc):
    m, n = sc.num_aps, sc.num_users
    a = np.full((m, n), 1.0 / m)
    b = np.tile(sc.bandwidths[:, None] / (2 * n), (1, n))
    c = np.tile(sc.computes[:, None] / (2 * n), (1, n))
    return a, b, c


def test_offload_delay_arithmetic():
    sc = _simple_scenario()
    a = np.array([[0.5, 0.0], [0.5, 1.0]])
    b = np.array([[1e7, 0.0], [1e7, 1e7]])
    c = np.array([[1e9, 0.0], [1e9, 1e9]])
    u = np.ones((2, 2))  # rate = b * u
    d_u, d_e = energetics.offload_delays(sc, a, b, c, u)
    bits = sc.task_bits
    dens = sc.task_density
    assert d_u[0, 0] == pytest.approx(0.5 * bits[0] / 1e7, rel=1e-12)
    assert d_e[0, 0] == pytest.approx(0.5 * bits[0] * dens[0] / 1e9, rel=1e-12)
    # a = 0 contributes nothing regardless of resources.
    assert d_u[0, 1] == 0.0 and d_e[0, 1] == 0.0


def test_offload_delay_allocation_error():
    sc = _simple_scenario()
    a = np.array([[1.0, 1.0], [0.0, 0.0]])
    b = np.array([[0.0, 1e7], [0.0, 0.0]])  # user 0 active with zero rate
    c = np.ones((2, 2)) * 1e9
    with pytest.raises(energetics.AllocationError):
        energetics.offload_delays(sc, a, b, c, np.ones((2, 2)))


def test_offload_energy_scaling():
    sc = _simple_scenario()
    a, b, c = _uniform_feasible(sc)
    u = channel.rate_coefficients(sc)
    d_u, d_e = energetics.offload_delays(sc, a, b, c, u)
    e_user, e_ap = energetics.offload_energy(sc, a, b, c, u)
    assert np.allclose(e_user, 1.5 * d_u.sum(axis=0), rtol=1e-12)
    assert np.allclose(e_ap, 1.0 * d_e.sum(axis=1), rtol=1e-12)


def test_energy_delay_linearity():
    """Halving every resource doubles all delays and hence all energies."""
    sc = _simple_scenario()
    a, b, c = _uniform_feasible(sc)
    u = channel.rate_coefficients(sc)
    e1_user, e1_ap = energetics.offload_energy(sc, a, b, c, u)
    e2_user, e2_ap = energetics.offload_energy(sc, a, b / 2, c / 2, u)
    assert np.allclose(e2_user, 2 * e1_user, rtol=1e-12)
    assert np.allclose(e2_ap, 2 * e1_ap, rtol=1e-12)


def test_uplink_delay_monotone_in_bandwidth():
    sc = _simple_scenario()
    a, b, c = _uniform_feasible(sc)
    u = channel.rate_coefficients(sc)
    d1, _ = energetics.offload_delays(sc, a, b, c, u)
    b2 = b.copy()
    b2[0, 0] *= 2.0
    d2, _ = energetics.offload_delays(sc, a, b2, c, u)
    assert d2[0, 0] <= d1[0, 0]
    assert np.allclose(np.delete(d2, 0), np.delete(d1, 0))


def test_user_offload_delay_is_cluster_max():
    sc = _simple_scenario()
    a, b, c = _uniform_feasible(sc)
    u = np.ones((2, 2))
    d_u, d_e = energetics.offload_delays(sc, a, b, c, u)
    d = energetics.user_offload_delay(sc, a, b, c, u)
    assert np.allclose(d, (d_u + d_e).max(axis=0))


def test_remaining_resources_floor_and_guard():
    sc = _simple_scenario()
    a, b, c = _uniform_feasible(sc)
    b_rem, c_rem = energetics.remaining_resources(sc, b, c)
    assert np.allclose(b_rem, sc.bandwidths - b.sum(axis=1))
    full = np.tile(sc.bandwidths[:, None] / 2, (1, 2))
    b_rem2, _ = energetics.remaining_resources(sc, full, c)
    assert (b_rem2 == energetics.RESOURCE_FLOOR).all()
    with pytest.raises(energetics.AllocationError):
        energetics.remaining_resources(sc, 2 * full, c)


def _manual_profile(cfg, c_rem, b_rem, state_bw, block_bw):
    reps = np.array(
        [
            consensus.reputation(c, b, cfg.state_msg_size, cfg.block_size)
            for c, b in zip(c_rem, b_rem)
        ]
    )
    return consensus.ConsensusProfile(
        remaining_compute=np.asarray(c_rem, float),
        remaining_bandwidth=np.asarray(b_rem, float),
        reputations=reps,
        leader_probabilities=consensus.leader_probability(reps),
        state_bandwidth=np.asarray(state_bw, float),
        block_bandwidth=np.asarray(block_bw, float),
    )


def test_consensus_terms_derived_values():
    cfg = SystemConfig()  # L^s = 1e4, L^b = 5e5, D^i = 1, eps_c = 1.5
    # phi = 1 everywhere so log2(1 + phi) = 1.
    sinr = np.ones((2, 2)) - np.eye(2)
    mean_sinrs = np.ones(2)
    profiles = _manual_profile(
        cfg,
        c_rem=[5e9, 5e9],
        b_rem=[1e7, 1e7],
        state_bw=[3e6, 3e6],
        block_bw=[7e6, 7e6],
    )
    terms = energetics.consensus_terms(profiles, sinr, mean_sinrs, cfg)
    # D_l^g = L^b / C_rem; E_l^g at eps_p = 1.
    assert terms.leader_generation_delay[0] == pytest.approx(1e-4, rel=1e-12)
    assert terms.leader_generation_energy[0] == pytest.approx(1e-4, rel=1e-12)
    # D_f^s = (D^i + 2)^2 L^s / (B_rem log2(1 + phi_bar)) = 9e4 / 1e7.
    assert terms.follower_delay[0] == pytest.approx(9e-3, rel=1e-12)
    # E_l^s = eps_c (2 + D^i)^2 (M - 1) L^s / B^s = 1.5 * 9 * 1e4 / 3e6.
    assert terms.leader_state_energy[0] == pytest.approx(0.045, rel=1e-12)


def test_consensus_energy_convex_combination():
    cfg = SystemConfig()
    sinr = np.ones((2, 2)) - np.eye(2)
    mean_sinrs = np.ones(2)
    profiles = _manual_profile(cfg, [5e9, 5e9], [1e7, 1e7], [3e6, 3e6], [7e6, 7e6])
    terms = energetics.consensus_terms(profiles, sinr, mean_sinrs, cfg)
    lead = terms.leader_generation_energy + terms.leader_transmit_energy
    foll = terms.follower_transmit_energy
    e1 = energetics.consensus_energy(profiles, sinr, mean_sinrs, cfg, np.ones(2))
    e0 = energetics.consensus_energy(profiles, sinr, mean_sinrs, cfg, np.zeros(2))
    eh = energetics.consensus_energy(profiles, sinr, mean_sinrs, cfg, np.full(2, 0.5))
    assert np.allclose(e1, lead, rtol=1e-12)
    assert np.allclose(e0, foll, rtol=1e-12)
    assert np.allclose(eh, 0.5 * (lead + foll), rtol=1e-12)
    with pytest.raises(ValueError):
        energetics.consensus_energy(profiles, sinr, mean_sinrs, cfg, np.full(2, 1.5))


def test_consensus_delay_monotone_in_block_size():
    sc = _simple_scenario(seed=3, m=3, n=2)
    b_rem = np.full(3, 1e7)
    c_rem = np.full(3, 5e9)
    sinr = channel.backhaul_sinr_matrix(sc)
    mean_sinrs = channel.mean_backhaul_sinrs(sc)
    delays = []
    for l_b in (2.5e5, 5e5, 7.5e5, 1e6):
        cfg = SystemConfig(num_aps=3, num_users=2, block_size=l_b)
        profiles = consensus.build_profiles(c_rem, b_rem, cfg)
        delays.append(energetics.consensus_delay(profiles, sinr, mean_sinrs, cfg))
    assert all(a <= b + 1e-12 for a, b in zip(delays, delays[1:]))


def test_total_energy_decomposition_exact():
    sc = _simple_scenario(seed=8, m=3, n=3)
    a, b, c = _uniform_feasible(sc)
    u = channel.rate_coefficients(sc)
    breakdown = energetics.total_energy(sc, a, b, c, u)
    total = (
        breakdown.user_offload.sum()
        + breakdown.ap_offload.sum()
        + breakdown.ap_consensus.sum()
    )
    assert breakdown.total == pytest.approx(total, rel=1e-12)
    assert breakdown.offload_total == pytest.approx(
        breakdown.user_offload.sum() + breakdown.ap_offload.sum(), rel=1e-12
    )


def test_evaluate_returns_consistent_views():
    sc = _simple_scenario(seed=8, m=3, n=3)
    a, b, c = _uniform_feasible(sc)
    u = channel.rate_coefficients(sc)
    energy, delay = energetics.evaluate(sc, a, b, c, u)
    assert delay.user_offload.shape == (3,)
    assert delay.total == pytest.approx(delay.user_offload.max() + delay.consensus, rel=1e-12)
    again = energetics.total_energy(sc, a, b, c, u)
    assert energy.total == pytest.approx(again.total, rel=1e-12)


def test_breakdown_csv(tmp_path):
    sc = _simple_scenario()
    a, b, c = _uniform_feasible(sc)
    u = channel.rate_coefficients(sc)
    breakdown = energetics.total_energy(sc, a, b, c, u)
    path = tmp_path / "energy.csv"
    breakdown.to_csv(path)
    lines = path.read_text().strip().splitlines()
    # header + N users + M aps offload + M aps consensus + total
    assert len(lines) == 1 + 2 + 2 + 2 + 1
    assert lines[-1].startswith("total")
