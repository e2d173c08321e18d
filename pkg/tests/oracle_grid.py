"""Exhaustive grid-search reference for 2-AP / 2-user instances.

Independent re-implementation of the total-energy objective on a 21-point
grid per variable: each user's split across the two APs, and each AP's
(b, c) allocations as fractions of its capacity.  The only cross-AP coupling
in the energy is the reputation normalizer R = max_m R_m; it is resolved by
best-response iteration over the grid, which terminates at a fixed point of
the normalizer (verified by the caller through the returned history).
"""

from __future__ import annotations

import numpy as np

from ucmec import channel
from ucmec.scenario import Scenario

GRID_POINTS = 21


def _ap_combo_tables(scenario: Scenario, m: int, u: np.ndarray):
    """Per-AP tables over all feasible (b0, b1, c0, c1) grid combos."""
    cfg = scenario.config
    frac = np.linspace(0.0, 1.0, GRID_POINTS)
    i, j = np.meshgrid(frac, frac, indexing="ij")
    ok = (i + j) <= 1.0 + 1e-12
    fb0, fb1 = i[ok], j[ok]  # bandwidth fractions per user, sum <= 1

    big = scenario.bandwidths[m]
    cap = scenario.computes[m]
    # Joint (bandwidth-pair, compute-pair) combos.
    nb = fb0.size
    b0 = np.repeat(fb0, nb) * big
    b1 = np.repeat(fb1, nb) * big
    c0 = np.tile(fb0, nb) * cap
    c1 = np.tile(fb1, nb) * cap

    bits = scenario.task_bits
    work = scenario.task_bits * scenario.task_density
    with np.errstate(divide="ignore"):
        # Unit delay and unit energy weight of serving user n fully.
        t0 = bits[0] / (b0 * u[m, 0]) + work[0] / c0
        t1 = bits[1] / (b1 * u[m, 1]) + work[1] / c1
        w0 = cfg.epsilon_c * bits[0] / (b0 * u[m, 0]) + cfg.epsilon_p * work[0] / c0
        w1 = cfg.epsilon_c * bits[1] / (b1 * u[m, 1]) + cfg.epsilon_p * work[1] / c1

    # Residuals floored away from zero, mirroring the evaluator's convention.
    b_rem = np.maximum(big - b0 - b1, 1.0)
    c_rem = np.maximum(cap - c0 - c1, 1.0)
    return t0, t1, w0, w1, b_rem, c_rem


def _consensus_tables(scenario: Scenario, m: int, b_rem: np.ndarray, c_rem: np.ndarray):
    """Reputation and leader/follower consensus energies per combo."""
    cfg = scenario.config
    m_count = scenario.num_aps
    d_i = cfg.block_interval
    lam = cfg.state_msg_size + cfg.block_size
    phi = channel.backhaul_sinr_matrix(scenario)
    phi_bar = channel.mean_backhaul_sinrs(scenario)

    rep = c_rem / cfg.block_size + b_rem / lam
    b_s = b_rem * cfg.state_msg_size / lam
    b_b = b_rem * cfg.block_size / lam
    with np.errstate(divide="ignore"):
        e_ls = sum(
            cfg.epsilon_c
            * (2 + d_i)
            * (m_count - 1)
            * cfg.state_msg_size
            / ((b_s / (2 + d_i)) * np.log2(1.0 + phi[m, i]))
            for i in range(m_count)
            if i != m
        )
        e_lb = sum(
            cfg.epsilon_c
            * (m_count - 1)
            * cfg.block_size
            / ((b_b / (m_count - 1)) * np.log2(1.0 + phi[m, i]))
            for i in range(m_count)
            if i != m
        )
        e_lg = cfg.epsilon_p * cfg.block_size / c_rem
        d_fs = (
            cfg.state_msg_size
            * (d_i + 2)
            / ((b_rem / (d_i + 2)) * np.log2(1.0 + phi_bar[m]))
        )
    e_leader = e_ls + e_lb + e_lg
    e_follower = cfg.epsilon_c * d_fs
    return rep, e_leader, e_follower


def grid_search(scenario: Scenario, max_rounds: int = 12):
    """Returns (best_energy, best_point, r_history) for a 2x2 scenario."""
    assert scenario.num_aps == 2 and scenario.num_users == 2
    u = channel.rate_coefficients(scenario)
    deadlines = scenario.deadlines

    tables = [_ap_combo_tables(scenario, m, u) for m in range(2)]
    cons = [
        _consensus_tables(scenario, m, tables[m][4], tables[m][5]) for m in range(2)
    ]

    split = np.linspace(0.0, 1.0, GRID_POINTS)
    # a[m, n] for AP0 given per-user split s_n (AP1 takes 1 - s_n).
    r_norm = max(cons[0][0].max(), cons[1][0].max())  # start: most abundant combo
    history = [r_norm]
    best = None

    for _ in range(max_rounds):
        # Per AP: for each (s0, s1) pair pick the cheapest feasible combo.
        per_ap_cost = []
        per_ap_idx = []
        per_ap_rep = []
        for m in range(2):
            t0, t1, w0, w1, b_rem, c_rem = tables[m]
            rep, e_lead, e_foll = cons[m]
            prob = np.clip(rep / r_norm, 0.0, 1.0)
            e_cons = prob * e_lead + (1.0 - prob) * e_foll
            e_cons = np.where(np.isfinite(e_cons), e_cons, np.inf)
            cost_pairs = np.full((GRID_POINTS, GRID_POINTS), np.inf)
            idx_pairs = np.zeros((GRID_POINTS, GRID_POINTS), dtype=np.int64)
            rep_pairs = np.zeros((GRID_POINTS, GRID_POINTS))
            for i0, s0 in enumerate(split):
                a0 = s0 if m == 0 else 1.0 - s0
                feas0 = (a0 * np.where(np.isfinite(t0), t0, np.inf)) <= deadlines[0] + 1e-12
                cont0 = np.where(np.isfinite(w0), a0 * w0, np.inf if a0 > 0 else 0.0)
                if a0 == 0.0:
                    feas0 = np.ones_like(t0, dtype=bool)
                    cont0 = np.zeros_like(t0)
                for i1, s1 in enumerate(split):
                    a1 = s1 if m == 0 else 1.0 - s1
                    if a1 == 0.0:
                        feas = feas0
                        cont = cont0
                    else:
                        feas = feas0 & (
                            (a1 * np.where(np.isfinite(t1), t1, np.inf))
                            <= deadlines[1] + 1e-12
                        )
                        cont = cont0 + np.where(np.isfinite(w1), a1 * w1, np.inf)
                    total = np.where(feas, cont + e_cons, np.inf)
                    k = int(np.argmin(total))
                    cost_pairs[i0, i1] = total[k]
                    idx_pairs[i0, i1] = k
                    rep_pairs[i0, i1] = rep[k]
            per_ap_cost.append(cost_pairs)
            per_ap_idx.append(idx_pairs)
            per_ap_rep.append(rep_pairs)

        joint = per_ap_cost[0] + per_ap_cost[1]
        flat = int(np.argmin(joint))
        i0, i1 = np.unravel_index(flat, joint.shape)
        energy = float(joint[i0, i1])
        rep_max = max(per_ap_rep[0][i0, i1], per_ap_rep[1][i0, i1])
        best = {
            "energy": energy,
            "splits": (float(split[i0]), float(split[i1])),
            "combo_idx": (int(per_ap_idx[0][i0, i1]), int(per_ap_idx[1][i0, i1])),
            "r_norm": r_norm,
        }
        history.append(rep_max)
        if abs(rep_max - r_norm) <= 1e-9 * max(rep_max, 1.0):
            break
        r_norm = rep_max
    return best["energy"], best, history
