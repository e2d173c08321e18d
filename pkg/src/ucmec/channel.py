"""Zero-forcing beamforming, uplink SINR/rate and backhaul SINR computations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario

__all__ = [
    "DegenerateBeamformerError",
    "ClusterAssignment",
    "Beamformer",
    "zf_beamformer",
    "uplink_sinr",
    "uplink_rate",
    "backhaul_sinr",
    "backhaul_sinr_matrix",
    "mean_backhaul_sinr",
    "mean_backhaul_sinrs",
    "frozen_sinr_table",
    "rate_coefficients",
]

_ZERO_TOL = 1e-12
MEMBERSHIP_TOL = 1e-6  # column sums of A must be 1 within this


class DegenerateBeamformerError(RuntimeError):
    """User channel lies in the span of intra-cluster interferers."""


@dataclass(frozen=True)
class ClusterAssignment:
    """Fractional AP-cluster membership a[m, n] with derived cluster sets."""

    membership: np.ndarray  # (M, N) in [0, 1]

    def __post_init__(self):
        a = np.asarray(self.membership, dtype=float)
        if a.ndim != 2:
            raise ValueError("membership must be an (M, N) matrix")
        if (a < -MEMBERSHIP_TOL).any() or (a > 1.0 + MEMBERSHIP_TOL).any():
            raise ValueError("membership entries must lie in [0, 1]")
        sums = a.sum(axis=0)
        if np.abs(sums - 1.0).max() > MEMBERSHIP_TOL:
            raise ValueError(f"each user's fractions must sum to 1, got {sums}")
        object.__setattr__(self, "membership", a)

    def cluster(self, n: int) -> np.ndarray:
        """Phi_n: APs with positive fraction for user n."""
        return np.flatnonzero(self.membership[:, n] > 0.0)

    def served_users(self, n: int) -> np.ndarray:
        """Omega_n: users served by any AP of user n's cluster (includes n)."""
        phi = self.cluster(n)
        if phi.size == 0:
            return np.array([n])
        return np.flatnonzero((self.membership[phi, :] > 0.0).any(axis=0))


@dataclass(frozen=True)
class Beamformer:
    vector: np.ndarray  # stacked over cluster APs, length X * |Phi_n|
    cluster: np.ndarray  # AP indices the vector is stacked over


def _stacked_channel(scenario: Scenario, cluster: np.ndarray, user: int) -> np.ndarray:
    return np.concatenate([scenario.access_channels[m, user] for m in cluster])


def zf_beamformer(scenario: Scenario, assignment: ClusterAssignment, n: int) -> Beamformer:
    """Normalized projection of user n's stacked channel onto the null space
    of intra-cluster interferers' channels (pseudo-inverse projector)."""
    phi = assignment.cluster(n)
    if phi.size == 0:
        raise ValueError(f"user {n} has an empty AP cluster")
    g = _stacked_channel(scenario, phi, n)
    interferers = [v for v in assignment.served_users(n) if v != n]
    if interferers:
        g_minus = np.column_stack([_stacked_channel(scenario, phi, v) for v in interferers])
        proj = g - g_minus @ (np.linalg.pinv(g_minus) @ g)
    else:
        proj = g
    norm = np.linalg.norm(proj)
    if norm <= _ZERO_TOL * max(1.0, np.linalg.norm(g)):
        raise DegenerateBeamformerError(f"user {n}: channel lies in interferers' span")
    return Beamformer(vector=proj / norm, cluster=phi)


def uplink_sinr(
    scenario: Scenario,
    assignment: ClusterAssignment,
    n: int,
    bandwidth_hz: float,
    beamformer: Beamformer | None = None,
) -> float:
    """Post-beamforming SINR of user n; noise integrated over the allocated band."""
    try:
        w = beamformer if beamformer is not None else zf_beamformer(scenario, assignment, n)
    except DegenerateBeamformerError:
        return 0.0
    p_u = scenario.config.user_tx_power
    omega = set(assignment.served_users(n).tolist())
    signal = p_u * abs(np.vdot(w.vector, _stacked_channel(scenario, w.cluster, n))) ** 2
    interference = 0.0
    for v in range(scenario.num_users):
        if v in omega:
            continue
        interference += p_u * abs(np.vdot(w.vector, _stacked_channel(scenario, w.cluster, v))) ** 2
    noise = float(np.linalg.norm(w.vector) ** 2) * scenario.noise_power_per_hz * bandwidth_hz
    return float(signal / (interference + noise))


def uplink_rate(bandwidth_hz: float, sinr: float) -> float:
    """Shannon rate b * log2(1 + sinr) in bits/s."""
    if bandwidth_hz < 0 or sinr < 0:
        raise ValueError("bandwidth and SINR must be nonnegative")
    return bandwidth_hz * np.log2(1.0 + sinr)


def backhaul_sinr(scenario: Scenario, m1: int, m2: int) -> float:
    """Backhaul SINR from AP m1 to AP m2 over the shared inter-AP spectrum.

    Receiver noise is integrated over AP m2's full band.
    """
    if m1 == m2:
        raise ValueError("backhaul SINR is undefined for m1 == m2")
    cfg = scenario.config
    d = scenario.ap_distances_km()
    h12 = scenario.backhaul_gains[m1, m2]
    interference = 0.0
    for m in range(scenario.num_aps):
        if m in (m1, m2):
            continue
        interference += cfg.ap_interference_power * abs(scenario.backhaul_gains[m, m2]) ** 2 / d[m, m2]
    noise = scenario.noise_power_per_hz * scenario.aps[m2].bandwidth
    return float(cfg.ap_tx_power * abs(h12) ** 2 / (d[m1, m2] * (interference + noise)))


def backhaul_sinr_matrix(scenario: Scenario) -> np.ndarray:
    """(M, M) table of pairwise backhaul SINRs; diagonal is zero."""
    m = scenario.num_aps
    phi = np.zeros((m, m))
    for m1 in range(m):
        for m2 in range(m):
            if m1 != m2:
                phi[m1, m2] = backhaul_sinr(scenario, m1, m2)
    return phi


def mean_backhaul_sinr(scenario: Scenario, m: int) -> float:
    """Arithmetic mean of phi[m, i] over i != m."""
    if scenario.num_aps < 2:
        raise ValueError("mean backhaul SINR needs at least two APs")
    vals = [backhaul_sinr(scenario, m, i) for i in range(scenario.num_aps) if i != m]
    return float(np.mean(vals))


def mean_backhaul_sinrs(scenario: Scenario) -> np.ndarray:
    m = scenario.num_aps
    phi = backhaul_sinr_matrix(scenario)
    return (phi.sum(axis=1)) / (m - 1)


def frozen_sinr_table(scenario: Scenario, ref_bandwidth: np.ndarray | None = None) -> np.ndarray:
    """Per-(m, n) SINR coefficients used by the optimizer and the evaluators.

    Each entry assumes the candidate single-AP beamformer for AP m serving
    user n with every other user treated as an inter-cluster interferer;
    noise is integrated over a reference allocation (B_m / N by default).
    This is the single place the coefficient convention lives.
    """
    m_count, n_count = scenario.num_aps, scenario.num_users
    p_u = scenario.config.user_tx_power
    if ref_bandwidth is None:
        ref_bandwidth = scenario.bandwidths[:, None] / n_count * np.ones((1, n_count))
    table = np.zeros((m_count, n_count))
    for m in range(m_count):
        ch = scenario.access_channels[m]  # (N, X)
        for n in range(n_count):
            g = ch[n]
            norm = np.linalg.norm(g)
            if norm <= _ZERO_TOL:
                continue
            w = g / norm
            signal = p_u * abs(np.vdot(w, g)) ** 2
            interference = sum(
                p_u * abs(np.vdot(w, ch[v])) ** 2 for v in range(n_count) if v != n
            )
            noise = scenario.noise_power_per_hz * ref_bandwidth[m, n]
            table[m, n] = signal / (interference + noise)
    return table


def rate_coefficients(scenario: Scenario, sinr_table: np.ndarray | None = None) -> np.ndarray:
    """Spectral efficiencies log2(1 + SINR[m, n]); r[m, n] = b[m, n] * u[m, n]."""
    if sinr_table is None:
        sinr_table = frozen_sinr_table(scenario)
    return np.log2(1.0 + sinr_table)
