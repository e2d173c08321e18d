"""Beamforming, SINR and rate oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucmec import ClusterAssignment, SystemConfig, generate_scenario
from ucmec import channel


def _one_hot(m_count: int, assignment: list[int]) -> ClusterAssignment:
    a = np.zeros((m_count, len(assignment)))
    for n, m in enumerate(assignment):
        a[m, n] = 1.0
    return ClusterAssignment(a)


def _gram_schmidt_null_project(g: np.ndarray, columns: np.ndarray) -> np.ndarray:
    """Independent oracle: orthogonalize the interferer columns, then deflate."""
    basis = []
    for j in range(columns.shape[1]):
        v = columns[:, j].astype(complex)
        for b in basis:
            v = v - b * np.vdot(b, v)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            basis.append(v / norm)
    proj = g.astype(complex)
    for b in basis:
        proj = proj - b * np.vdot(b, proj)
    return proj


def test_zf_single_user_cluster_is_matched_filter():
    sc = generate_scenario(SystemConfig(num_aps=2, num_users=2), 3)
    # Users on different APs: no intra-cluster interferers for either.
    bf = channel.zf_beamformer(sc, _one_hot(2, [0, 1]), 0)
    g = sc.access_channels[0, 0]
    expected = g / np.linalg.norm(g)
    assert np.allclose(bf.vector, expected, atol=1e-12)


def test_zf_orthogonality_and_norm():
    sc = generate_scenario(SystemConfig(num_aps=2, num_users=3, antennas_per_ap=8), 11)
    # All users share AP 0: each beamformer must null the other two.
    asn = _one_hot(2, [0, 0, 0])
    for n in range(3):
        bf = channel.zf_beamformer(sc, asn, n)
        assert np.linalg.norm(bf.vector) == pytest.approx(1.0, abs=1e-9)
        for v in range(3):
            if v == n:
                continue
            gv = sc.access_channels[0, v]
            assert abs(np.vdot(bf.vector, gv)) < 1e-9 * np.linalg.norm(gv)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_zf_matches_gram_schmidt_oracle(seed):
    sc = generate_scenario(SystemConfig(num_aps=2, num_users=2, antennas_per_ap=4), seed)
    asn = _one_hot(2, [0, 0])  # both users on AP 0
    bf = channel.zf_beamformer(sc, asn, 0)
    g = sc.access_channels[0, 0]
    g_int = sc.access_channels[0, 1][:, None]
    expected = _gram_schmidt_null_project(g, g_int)
    expected = expected / np.linalg.norm(expected)
    # Both are unit vectors in the same 1-complex-dimensional ray up to phase.
    assert abs(abs(np.vdot(bf.vector, expected)) - 1.0) < 1e-9


def test_uplink_sinr_no_interference_closed_form():
    sc = generate_scenario(SystemConfig(num_aps=2, num_users=2), 5)
    asn = _one_hot(2, [0, 1])
    bw = 1e6
    bf = channel.zf_beamformer(sc, asn, 0)
    got = channel.uplink_sinr(sc, asn, 0, bw, bf)
    p_u = sc.config.user_tx_power
    g = sc.access_channels[0, 0]
    other = sc.access_channels[0, 1]
    signal = p_u * abs(np.vdot(bf.vector, g)) ** 2
    # User 1 is served by the cluster of user 0's co-served set only if the
    # clusters overlap; here they do not, so user 1 interferes.
    interference = p_u * abs(np.vdot(bf.vector, other)) ** 2
    noise = sc.noise_power_per_hz * bw
    assert got == pytest.approx(signal / (interference + noise), rel=1e-12)


def test_uplink_sinr_zero_power():
    cfg = SystemConfig(num_aps=2, num_users=2, user_tx_power=1e-300)
    sc = generate_scenario(cfg, 5)
    asn = _one_hot(2, [0, 1])
    assert channel.uplink_sinr(sc, asn, 0, 1e6) == pytest.approx(0.0, abs=1e-250)


def test_uplink_rate_values():
    assert channel.uplink_rate(0.0, 5.0) == 0.0
    assert channel.uplink_rate(1e6, 1.0) == pytest.approx(1e6, rel=1e-12)
    assert channel.uplink_rate(5e6, 3.0) == pytest.approx(1e7, rel=1e-12)
    with pytest.raises(ValueError):
        channel.uplink_rate(-1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(min_value=0.0, max_value=1e8),
    st.floats(min_value=0.0, max_value=1e4),
    st.floats(min_value=0.0, max_value=1e8),
    st.floats(min_value=0.0, max_value=1e4),
)
def test_uplink_rate_monotone(b1, s1, b2, s2):
    lo = channel.uplink_rate(min(b1, b2), min(s1, s2))
    hi = channel.uplink_rate(max(b1, b2), max(s1, s2))
    assert lo <= hi + 1e-9


def test_sinr_noise_scaling():
    """Doubling the noise PSD with negligible interference halves the SINR."""
    base = SystemConfig(num_aps=2, num_users=1)
    doubled = SystemConfig(num_aps=2, num_users=1, noise_psd_dbm_hz=-174.0 + 10 * np.log10(2))
    s1 = generate_scenario(base, 9)
    s2 = generate_scenario(doubled, 9)
    asn = _one_hot(2, [0])
    v1 = channel.uplink_sinr(s1, asn, 0, 1e6)
    v2 = channel.uplink_sinr(s2, asn, 0, 1e6)
    assert v2 == pytest.approx(v1 / 2.0, rel=1e-9)


def test_backhaul_sinr_m2_closed_form():
    sc = generate_scenario(SystemConfig(num_aps=2, num_users=2), 13)
    cfg = sc.config
    d = sc.ap_distances_km()
    h = sc.backhaul_gains[0, 1]
    noise = sc.noise_power_per_hz * sc.aps[1].bandwidth
    expected = cfg.ap_tx_power * abs(h) ** 2 / (d[0, 1] * noise)
    assert channel.backhaul_sinr(sc, 0, 1) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        channel.backhaul_sinr(sc, 1, 1)


def test_backhaul_sinr_m4_scalar_oracle():
    sc = generate_scenario(SystemConfig(num_aps=4, num_users=2), 17)
    cfg = sc.config
    d = sc.ap_distances_km()
    m1, m2 = 0, 2
    interference = sum(
        cfg.ap_interference_power * abs(sc.backhaul_gains[m, m2]) ** 2 / d[m, m2]
        for m in range(4)
        if m not in (m1, m2)
    )
    noise = sc.noise_power_per_hz * sc.aps[m2].bandwidth
    expected = cfg.ap_tx_power * abs(sc.backhaul_gains[m1, m2]) ** 2 / (
        d[m1, m2] * (interference + noise)
    )
    assert channel.backhaul_sinr(sc, m1, m2) == pytest.approx(expected, rel=1e-12)


def test_mean_backhaul_is_mean_of_pairwise():
    sc = generate_scenario(SystemConfig(num_aps=5, num_users=2), 19)
    phi = channel.backhaul_sinr_matrix(sc)
    means = channel.mean_backhaul_sinrs(sc)
    for m in range(5):
        vals = [phi[m, i] for i in range(5) if i != m]
        assert means[m] == pytest.approx(np.mean(vals), rel=1e-12)
        assert means[m] == pytest.approx(channel.mean_backhaul_sinr(sc, m), rel=1e-12)


def test_rate_coefficients_are_log_of_table():
    sc = generate_scenario(SystemConfig(num_aps=3, num_users=3), 23)
    table = channel.frozen_sinr_table(sc)
    assert np.allclose(channel.rate_coefficients(sc), np.log2(1.0 + table))
    assert (table >= 0).all()
