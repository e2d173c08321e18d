"""Delay and energy bookkeeping for offloading plus consensus.

All delay/energy formulas live here so the optimizer, the baselines and the
oracles evaluate candidate decisions through one code path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import channel, consensus
from .scenario import Scenario

__all__ = [
    "AllocationError",
    "DelayBreakdown",
    "EnergyBreakdown",
    "ConsensusTerms",
    "offload_delays",
    "user_offload_delay",
    "offload_energy",
    "remaining_resources",
    "consensus_terms",
    "consensus_energy",
    "consensus_delay",
    "total_energy",
    "evaluate",
]

RESOURCE_FLOOR = 1.0  # residual bandwidth/compute never reported below 1 unit
_ACTIVE_TOL = 1e-12


class AllocationError(ValueError):
    """A user has a positive fraction on an AP with no resource to serve it."""


def _as_mn(x, scenario: Scenario, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    shape = (scenario.num_aps, scenario.num_users)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if (arr < 0).any():
        raise ValueError(f"{name} must be nonnegative")
    return arr


def offload_delays(
    scenario: Scenario,
    fractions: np.ndarray,
    bandwidth: np.ndarray,
    compute: np.ndarray,
    rate_coeffs: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-(m, n) transmission delays a L / (b u) and computing delays a L rho / c.

    Entries with a zero fraction contribute zero delay regardless of the
    resource given to them; a positive fraction with zero serving resource is
    an AllocationError.
    """
    a = _as_mn(fractions, scenario, "fractions")
    b = _as_mn(bandwidth, scenario, "bandwidth")
    c = _as_mn(compute, scenario, "compute")
    if rate_coeffs is None:
        rate_coeffs = channel.rate_coefficients(scenario)
    u = np.asarray(rate_coeffs, dtype=float)

    active = a > _ACTIVE_TOL
    rates = b * u
    if (active & (rates <= 0.0)).any():
        bad = np.argwhere(active & (rates <= 0.0))[0]
        raise AllocationError(f"user {bad[1]} offloads to AP {bad[0]} with zero uplink rate")
    if (active & (c <= 0.0)).any():
        bad = np.argwhere(active & (c <= 0.0))[0]
        raise AllocationError(f"user {bad[1]} offloads to AP {bad[0]} with zero compute")

    load = a * scenario.task_bits[None, :]
    d_u = np.zeros_like(a)
    d_e = np.zeros_like(a)
    d_u[active] = load[active] / rates[active]
    d_e[active] = (load * scenario.task_density[None, :])[active] / c[active]
    return d_u, d_e


def user_offload_delay(
    scenario: Scenario,
    fractions: np.ndarray,
    bandwidth: np.ndarray,
    compute: np.ndarray,
    rate_coeffs: np.ndarray | None = None,
) -> np.ndarray:
    """D_n^o: cluster APs work in parallel, so the slowest leg dominates."""
    d_u, d_e = offload_delays(scenario, fractions, bandwidth, compute, rate_coeffs)
    return (d_u + d_e).max(axis=0)


def offload_energy(
    scenario: Scenario,
    fractions: np.ndarray,
    bandwidth: np.ndarray,
    compute: np.ndarray,
    rate_coeffs: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(E_n^o per user, E_m^o per AP): eps_c * uplink time, eps_p * compute time."""
    d_u, d_e = offload_delays(scenario, fractions, bandwidth, compute, rate_coeffs)
    cfg = scenario.config
    return cfg.epsilon_c * d_u.sum(axis=0), cfg.epsilon_p * d_e.sum(axis=1)


def remaining_resources(
    scenario: Scenario, bandwidth: np.ndarray, compute: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Residual (bandwidth, compute) per AP after offloading, floored away from zero."""
    b = _as_mn(bandwidth, scenario, "bandwidth")
    c = _as_mn(compute, scenario, "compute")
    b_rem = scenario.bandwidths - b.sum(axis=1)
    c_rem = scenario.computes - c.sum(axis=1)
    if (b_rem < -1e-6 * scenario.bandwidths).any():
        raise AllocationError("allocated bandwidth exceeds AP capacity")
    if (c_rem < -1e-6 * scenario.computes).any():
        raise AllocationError("allocated compute exceeds AP capacity")
    return np.maximum(b_rem, RESOURCE_FLOOR), np.maximum(c_rem, RESOURCE_FLOOR)


@dataclass(frozen=True)
class ConsensusTerms:
    """Per-AP ingredients of the probability-weighted consensus energy."""

    leader_state_energy: np.ndarray  # E_l^s, would-be leader
    leader_block_energy: np.ndarray  # E_l^b
    leader_transmit_energy: np.ndarray  # E_l^t = E_l^s + E_l^b
    leader_generation_delay: np.ndarray  # D_l^g
    leader_generation_energy: np.ndarray  # E_l^g
    follower_delay: np.ndarray  # D_f^s
    follower_transmit_energy: np.ndarray  # E_f^t


def consensus_terms(
    profiles: consensus.ConsensusProfile,
    backhaul_sinr_table: np.ndarray,
    mean_sinrs: np.ndarray,
    config,
) -> ConsensusTerms:
    m = profiles.num_aps
    d_i = config.block_interval
    eff = np.log2(1.0 + np.asarray(backhaul_sinr_table, dtype=float))
    off_diag = ~np.eye(m, dtype=bool)

    # Leader m sends (2 + D_i)(M - 1) state messages, each over a
    # B_m^s / (2 + D_i) slice, plus M - 1 block copies over B_m^b / (M - 1).
    inv_eff_sum = np.where(off_diag, np.divide(1.0, eff, where=off_diag, out=np.zeros_like(eff)), 0.0).sum(axis=1)
    e_ls = config.epsilon_c * (2 + d_i) ** 2 * (m - 1) * config.state_msg_size / profiles.state_bandwidth * inv_eff_sum
    e_lb = config.epsilon_c * (m - 1) ** 2 * config.block_size / profiles.block_bandwidth * inv_eff_sum
    e_lt = e_ls + e_lb

    d_lg = config.block_size / profiles.remaining_compute
    e_lg = config.epsilon_p * d_lg

    # Follower: D_i + 2 state replies over a B_bar / (D_i + 2) slice at the
    # mean backhaul SINR.
    d_fs = (d_i + 2) ** 2 * config.state_msg_size / (
        profiles.remaining_bandwidth * np.log2(1.0 + np.asarray(mean_sinrs, dtype=float))
    )
    e_ft = config.epsilon_c * d_fs

    return ConsensusTerms(
        leader_state_energy=e_ls,
        leader_block_energy=e_lb,
        leader_transmit_energy=e_lt,
        leader_generation_delay=d_lg,
        leader_generation_energy=e_lg,
        follower_delay=d_fs,
        follower_transmit_energy=e_ft,
    )


def consensus_energy(
    profiles: consensus.ConsensusProfile,
    backhaul_sinr_table: np.ndarray,
    mean_sinrs: np.ndarray,
    config,
    leader_probs: np.ndarray | None = None,
) -> np.ndarray:
    """E_m^c = (E_l^g + E_l^t) P_m + E_f^t (1 - P_m) for every AP."""
    terms = consensus_terms(profiles, backhaul_sinr_table, mean_sinrs, config)
    p = profiles.leader_probabilities if leader_probs is None else np.asarray(leader_probs, dtype=float)
    if ((p < 0) | (p > 1)).any():
        raise ValueError("leader probabilities must lie in [0, 1]")
    return (terms.leader_generation_energy + terms.leader_transmit_energy) * p + terms.follower_transmit_energy * (1.0 - p)


def consensus_delay(
    profiles: consensus.ConsensusProfile,
    backhaul_sinr_table: np.ndarray,
    mean_sinrs: np.ndarray,
    config,
) -> float:
    """Worst-case end-to-end consensus delay over candidate leaders."""
    m = profiles.num_aps
    d_i = config.block_interval
    eff = np.log2(1.0 + np.asarray(backhaul_sinr_table, dtype=float))
    mean_eff = np.log2(1.0 + np.asarray(mean_sinrs, dtype=float))
    follower_delay = (d_i + 2) ** 2 * config.state_msg_size / (profiles.remaining_bandwidth * mean_eff)
    terms = consensus_terms(profiles, backhaul_sinr_table, mean_sinrs, config)

    worst = 0.0
    for leader in range(m):
        others = [j for j in range(m) if j != leader]
        state = max(
            (m - 1) * config.state_msg_size * (d_i + 2) ** 2 / (profiles.state_bandwidth[leader] * eff[leader, j])
            for j in others
        )
        reply = max(follower_delay[j] for j in others)
        block = max(
            (m - 1) * config.block_size / (profiles.block_bandwidth[leader] * eff[leader, j]) for j in others
        )
        worst = max(worst, state + reply + block + terms.leader_generation_delay[leader])
    return float(worst)


@dataclass(frozen=True)
class DelayBreakdown:
    uplink: np.ndarray  # (M, N) D_u
    computing: np.ndarray  # (M, N) D_e
    user_offload: np.ndarray  # (N,) D_n^o = max over the cluster
    consensus: float  # D^c

    @property
    def mean_offload(self) -> float:
        return float(self.user_offload.mean())

    @property
    def total(self) -> float:
        return float(self.user_offload.max() + self.consensus)


@dataclass(frozen=True)
class EnergyBreakdown:
    user_offload: np.ndarray  # (N,) E_n^o
    ap_offload: np.ndarray  # (M,) E_m^o
    ap_consensus: np.ndarray  # (M,) E_m^c

    @property
    def offload_total(self) -> float:
        return float(self.user_offload.sum() + self.ap_offload.sum())

    @property
    def consensus_total(self) -> float:
        return float(self.ap_consensus.sum())

    @property
    def total(self) -> float:
        return self.offload_total + self.consensus_total

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["part", "index", "energy_j"])
            for n, e in enumerate(self.user_offload):
                w.writerow(["user_offload", n, e])
            for m, e in enumerate(self.ap_offload):
                w.writerow(["ap_offload", m, e])
            for m, e in enumerate(self.ap_consensus):
                w.writerow(["ap_consensus", m, e])
            w.writerow(["total", "", self.total])


def total_energy(
    scenario: Scenario,
    fractions: np.ndarray,
    bandwidth: np.ndarray,
    compute: np.ndarray,
    rate_coeffs: np.ndarray | None = None,
    leader_probs: np.ndarray | None = None,
) -> EnergyBreakdown:
    """E^a pieces for one decision; consensus runs on the residual resources."""
    e_user, e_ap = offload_energy(scenario, fractions, bandwidth, compute, rate_coeffs)
    b_rem, c_rem = remaining_resources(scenario, bandwidth, compute)
    profiles = consensus.build_profiles(c_rem, b_rem, scenario.config)
    sinr = channel.backhaul_sinr_matrix(scenario)
    mean_sinrs = channel.mean_backhaul_sinrs(scenario)
    e_cons = consensus_energy(profiles, sinr, mean_sinrs, scenario.config, leader_probs)
    return EnergyBreakdown(user_offload=e_user, ap_offload=e_ap, ap_consensus=e_cons)


def evaluate(
    scenario: Scenario,
    fractions: np.ndarray,
    bandwidth: np.ndarray,
    compute: np.ndarray,
    rate_coeffs: np.ndarray | None = None,
    leader_probs: np.ndarray | None = None,
) -> tuple[EnergyBreakdown, DelayBreakdown]:
    """One-call evaluation of a full decision (A, B, C)."""
    if rate_coeffs is None:
        rate_coeffs = channel.rate_coefficients(scenario)
    d_u, d_e = offload_delays(scenario, fractions, bandwidth, compute, rate_coeffs)
    energy = total_energy(scenario, fractions, bandwidth, compute, rate_coeffs, leader_probs)
    b_rem, c_rem = remaining_resources(scenario, bandwidth, compute)
    profiles = consensus.build_profiles(c_rem, b_rem, scenario.config)
    sinr = channel.backhaul_sinr_matrix(scenario)
    mean_sinrs = channel.mean_backhaul_sinrs(scenario)
    delay = DelayBreakdown(
        uplink=d_u,
        computing=d_e,
        user_offload=(d_u + d_e).max(axis=0),
        consensus=consensus_delay(profiles, sinr, mean_sinrs, scenario.config),
    )
    return energy, delay
