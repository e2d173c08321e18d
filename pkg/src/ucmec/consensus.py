"""Resource-aware RAFT: reputation, leader model, bandwidth split and an
event-driven election/commit simulation that reconciles with the analytic
message counts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import SystemConfig

__all__ = [
    "DegenerateElectionError",
    "ElectionFailureError",
    "ConsensusProfile",
    "ConsensusTrace",
    "reputation",
    "leader_probability",
    "bandwidth_split",
    "build_profiles",
    "run_election_and_commit",
    "expected_consensus_energy",
]

REPUTATION_TIMEOUT_BASE_S = 0.010  # timeout = base * (R / R_m)
RANDOM_TIMEOUT_RANGE_S = (0.150, 0.300)  # classic RAFT election range


class DegenerateElectionError(RuntimeError):
    """All reputations are zero; no leader can be elected."""


class ElectionFailureError(RuntimeError):
    """No quorum reachable under the message model."""


def reputation(remaining_compute: float, remaining_bandwidth: float, state_msg_size: float, block_size: float) -> float:
    """Consensus capability proxy: C_rem / L_b + B_rem / (L_s + L_b)."""
    if state_msg_size <= 0 or block_size <= 0:
        raise ValueError("message sizes must be positive")
    if remaining_compute < 0 or remaining_bandwidth < 0:
        raise ValueError("remaining resources must be nonnegative")
    return remaining_compute / block_size + remaining_bandwidth / (state_msg_size + block_size)


def leader_probability(reputations) -> np.ndarray:
    """P_m = R_m / max_k R_k (per AP; not a distribution over APs)."""
    reps = np.asarray(reputations, dtype=float)
    if reps.size == 0:
        raise ValueError("reputations must be nonempty")
    if (reps < 0).any():
        raise ValueError("reputations must be nonnegative")
    top = reps.max()
    if top <= 0.0:
        raise DegenerateElectionError("all reputations are zero")
    return reps / top


def bandwidth_split(remaining_bandwidth: float, state_msg_size: float, block_size: float) -> tuple[float, float]:
    """Split B_rem so that L_s / B_s == L_b / B_b and B_s + B_b == B_rem."""
    if remaining_bandwidth < 0:
        raise ValueError("remaining bandwidth must be nonnegative")
    total = state_msg_size + block_size
    return (
        remaining_bandwidth * state_msg_size / total,
        remaining_bandwidth * block_size / total,
    )


@dataclass(frozen=True)
class ConsensusProfile:
    """Per-AP consensus state after offloading resources are committed."""

    remaining_compute: np.ndarray  # (M,)
    remaining_bandwidth: np.ndarray  # (M,)
    reputations: np.ndarray  # (M,)
    leader_probabilities: np.ndarray  # (M,)
    state_bandwidth: np.ndarray  # (M,) B^s
    block_bandwidth: np.ndarray  # (M,) B^b

    @property
    def max_reputation(self) -> float:
        return float(self.reputations.max())

    @property
    def num_aps(self) -> int:
        return self.reputations.size


def build_profiles(
    remaining_compute: np.ndarray,
    remaining_bandwidth: np.ndarray,
    config: SystemConfig,
) -> ConsensusProfile:
    c_rem = np.asarray(remaining_compute, dtype=float)
    b_rem = np.asarray(remaining_bandwidth, dtype=float)
    reps = np.array(
        [
            reputation(c, b, config.state_msg_size, config.block_size)
            for c, b in zip(c_rem, b_rem)
        ]
    )
    probs = leader_probability(reps)
    splits = np.array([bandwidth_split(b, config.state_msg_size, config.block_size) for b in b_rem])
    return ConsensusProfile(
        remaining_compute=c_rem,
        remaining_bandwidth=b_rem,
        reputations=reps,
        leader_probabilities=probs,
        state_bandwidth=splits[:, 0],
        block_bandwidth=splits[:, 1],
    )


@dataclass
class Transaction:
    timestamp: float
    ap_id: int
    user_id: int
    compute_amount: float
    bandwidth_amount: float
    remuneration: float = 0.0


@dataclass
class ConsensusTrace:
    leader: int
    term: int
    elections_run: int
    state_confirmations: np.ndarray  # per node
    blocks_sent: np.ndarray
    blocks_received: np.ndarray
    sim_time_s: float
    committed_block: list[Transaction] = field(default_factory=list)

    def to_csv_rows(self):
        rows = [("node_id", "role", "msgs_state", "msgs_block", "sim_time_s")]
        for node in range(self.state_confirmations.size):
            role = "Leader" if node == self.leader else "Follower"
            rows.append(
                (
                    node,
                    role,
                    int(self.state_confirmations[node]),
                    int(self.blocks_sent[node]),
                    self.sim_time_s,
                )
            )
        return rows


def _state_msg_time(profiles: ConsensusProfile, sinr: np.ndarray, cfg: SystemConfig, sender: int, receiver: int, share: float) -> float:
    """Airtime of one L_s message over the sender's per-transmission share."""
    bw = profiles.state_bandwidth[sender] / share
    rate = bw * np.log2(1.0 + sinr[sender, receiver])
    return float(cfg.state_msg_size / rate) if rate > 0 else float("inf")


def run_election_and_commit(
    profiles: ConsensusProfile,
    backhaul_sinr_table: np.ndarray,
    config: SystemConfig,
    mode: str = "reputation_timeout",
    rng: np.random.Generator | None = None,
    forced_timeouts: np.ndarray | None = None,
    transactions: list[Transaction] | None = None,
) -> ConsensusTrace:
    """Event-driven single-round R-RAFT election plus block replication.

    reputation_timeout: timeout proportional to 1 / R_m; random_timeout:
    uniform draws (baseline RAFT).  The node whose timeout fires first becomes
    Candidate and collects every vote; a timeout tie is a split vote, which
    forces a full timeout wait and a jittered re-draw.  Counters satisfy the
    analytic formulas: the leader performs (2 + D_i)(M - 1) state
    confirmations and M - 1 block copies, each follower D_i + 2
    confirmations.
    """
    m = profiles.num_aps
    if m < 2:
        raise ValueError("consensus needs at least two APs")
    if mode not in ("reputation_timeout", "random_timeout"):
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    cfg = config
    d_i = cfg.block_interval
    sinr = backhaul_sinr_table

    state_count = np.zeros(m, dtype=int)
    blocks_sent = np.zeros(m, dtype=int)
    blocks_received = np.zeros(m, dtype=int)

    tie_eps = 1e-9

    def draw_timeouts(retry: bool) -> np.ndarray:
        if forced_timeouts is not None and not retry:
            return np.asarray(forced_timeouts, dtype=float)
        if mode == "reputation_timeout":
            probs = profiles.leader_probabilities
            if (probs <= 0).all():
                raise DegenerateElectionError("all reputations are zero")
            base = REPUTATION_TIMEOUT_BASE_S / probs
            if retry:  # randomized backoff breaks deterministic ties
                base = base * rng.uniform(1.0, 2.0, size=m)
            return base
        return rng.uniform(*RANDOM_TIMEOUT_RANGE_S, size=m)

    elections = 0
    term = 0
    now = 0.0
    leader = -1
    while leader < 0:
        elections += 1
        term += 1
        if elections > 1000:
            raise ElectionFailureError("no leader elected after 1000 attempts")
        timeouts = draw_timeouts(retry=elections > 1)
        order = np.argsort(timeouts, kind="stable")
        first = int(order[0])
        if timeouts[order[1]] - timeouts[first] <= tie_eps:
            # Simultaneous candidates split the vote: wait out the longest
            # timeout and re-elect with fresh (jittered) draws.
            now += float(np.max(timeouts))
            continue
        # Uncontested: the first candidate broadcasts vote requests and every
        # follower replies with a vote.
        state_count[first] += m - 1  # vote requests
        for voter in range(m):
            if voter != first:
                state_count[voter] += 1  # vote reply
        leader = first
        now += timeouts[first]

    # Vote requests and replies travel in parallel; the election completes
    # when the last reply lands at the leader.
    reply_times = [
        now
        + _state_msg_time(profiles, sinr, cfg, leader, v, 2 + d_i)
        + _state_msg_time(profiles, sinr, cfg, v, leader, 2 + d_i)
        for v in range(m)
        if v != leader
    ]
    now = max(reply_times)

    # Election confirmations, then D_i heartbeat rounds (parallel per round).
    for _round in range(1 + d_i):
        send_times = []
        for follower in range(m):
            if follower == leader:
                continue
            state_count[leader] += 1
            t_arrive = now + _state_msg_time(profiles, sinr, cfg, leader, follower, 2 + d_i)
            if _round >= 1:  # heartbeats get replies; confirmations do not
                state_count[follower] += 1
                t_arrive += _state_msg_time(profiles, sinr, cfg, follower, leader, 2 + d_i)
            send_times.append(t_arrive)
        now = max(send_times)

    # Block generation, replication, confirmation.
    if profiles.remaining_compute[leader] <= 0:
        raise ElectionFailureError("leader has no compute left for block generation")
    now += cfg.block_size / profiles.remaining_compute[leader]
    commit_times = []
    for follower in range(m):
        if follower == leader:
            continue
        blocks_sent[leader] += 1
        blocks_received[follower] += 1
        bw = profiles.block_bandwidth[leader] / (m - 1)
        rate = bw * np.log2(1.0 + sinr[leader, follower])
        t_arrive = now + cfg.block_size / rate
        state_count[follower] += 1  # block confirmation reply
        t_arrive += _state_msg_time(profiles, sinr, cfg, follower, leader, 2 + d_i)
        commit_times.append(t_arrive)
    now = max(commit_times)

    return ConsensusTrace(
        leader=leader,
        term=term,
        elections_run=elections,
        state_confirmations=state_count,
        blocks_sent=blocks_sent,
        blocks_received=blocks_received,
        sim_time_s=float(now),
        committed_block=list(transactions) if transactions else [],
    )


def expected_consensus_energy(
    profiles: ConsensusProfile,
    backhaul_sinr_table: np.ndarray,
    mean_sinrs: np.ndarray,
    config: SystemConfig,
    m: int,
    leader_prob: float | None = None,
) -> float:
    """Expected consensus energy of AP m: (E_l_gen + E_l_tx) P_m + E_f (1 - P_m)."""
    from . import energetics  # local import; energetics builds on this module

    terms = energetics.consensus_terms(profiles, backhaul_sinr_table, mean_sinrs, config)
    p = profiles.leader_probabilities[m] if leader_prob is None else leader_prob
    leader_cost = terms.leader_generation_energy[m] + terms.leader_transmit_energy[m]
    return float(leader_cost * p + terms.follower_transmit_energy[m] * (1.0 - p))
