"""Comparison schemes: single offloading, block-coordinate descent,
offloading-only optimization and random-RAFT, sharing the evaluators and
solvers of the core modules."""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import consensus, energetics
from .optimizer import (
    AdmmConfig,
    DecisionSet,
    FrozenModel,
    InfeasibleDecisionError,
    SubproblemInfeasibleError,
    _check_final,
    _pair_delays,
    _pack_decision,
    _recover_decision,
    admm_solve,
    initial_decision,
    refine_resources,
    reoptimize_resources,
    resolve_zetas,
    solve_subproblem_dc,
    total_objective,
)
from .scenario import Scenario

__all__ = [
    "SchemeId",
    "solve_proposed",
    "solve_so",
    "solve_bcdo",
    "solve_oo",
    "solve_ro",
]


class SchemeId(str, Enum):
    PROPOSED = "PROPOSED"
    SO = "SO"
    BCDO = "BCDO"
    OO = "OO"
    RO = "RO"

    def __str__(self) -> str:  # serialize as the bare token
        return self.value


def solve_proposed(scenario: Scenario, config: AdmmConfig | None = None):
    """The joint ADMM scheme; returns (decision, state, energy)."""
    return admm_solve(scenario, config)


def solve_so(
    scenario: Scenario,
    config: AdmmConfig | None = None,
    relaxed: DecisionSet | None = None,
) -> tuple[DecisionSet, energetics.EnergyBreakdown]:
    """Single offloading: relax, round each user to its argmax AP, re-optimize
    (b, c) per AP for the fixed binary clustering."""
    if config is None:
        config = AdmmConfig()
    if relaxed is None:
        relaxed, _, _ = admm_solve(scenario, config)
    model = FrozenModel.build(scenario)
    m_count, n_count = scenario.num_aps, scenario.num_users

    assignment = np.argmax(relaxed.A, axis=0)
    for attempt in range(2):
        a_bin = np.zeros((m_count, n_count))
        a_bin[assignment, np.arange(n_count)] = 1.0
        b, c = reoptimize_resources(model, a_bin, config)
        b, c = refine_resources(model, a_bin, b, c, config)
        decision = DecisionSet(
            A=a_bin,
            Bp=1.0 / np.maximum(b, model.beta),
            Cp=1.0 / np.maximum(c, model.beta),
            X=a_bin / np.maximum(b, model.beta),
            Psi=a_bin / np.maximum(c, model.beta),
            K=np.ones(m_count),
        )
        recovered = _recover_decision(model, decision, a_bin, config.dust_threshold)
        try:
            _check_final(model, recovered)
            break
        except InfeasibleDecisionError:
            if attempt == 1:
                raise
            # Reassign violating users to the AP minimizing standalone delay.
            delays = _pair_delays(model, a_bin, b, c).max(axis=0)
            standalone = (
                scenario.task_bits[None, :] / ((scenario.bandwidths[:, None] / (2 * n_count)) * model.u)
                + scenario.task_bits[None, :]
                * scenario.task_density[None, :]
                / (scenario.computes[:, None] / (2 * n_count))
            )
            for n in np.flatnonzero(delays > scenario.deadlines * (1 + 1e-4)):
                assignment[n] = int(np.argmin(standalone[:, n]))
    energy = energetics.total_energy(scenario, recovered.A, recovered.bandwidth, recovered.compute, model.u)
    return recovered, energy


def _greedy_clustering_block(
    model: FrozenModel, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Exact minimizer of the clustering block: per user, a small LP over the
    simplex with per-pair delay caps, solved greedily by ascending cost."""
    sc = model.scenario
    bits = sc.task_bits[None, :]
    density = sc.task_density[None, :]
    with np.errstate(divide="ignore"):
        unit_delay = bits / (b * model.u) + bits * density / c
        weight = sc.config.epsilon_c * bits / (b * model.u) + sc.config.epsilon_p * bits * density / c
    out = a.copy()
    for n in range(sc.num_users):
        caps = np.minimum(1.0, sc.deadlines[n] / unit_delay[:, n])
        caps[~np.isfinite(caps)] = 0.0
        if caps.sum() < 1.0:  # block infeasible: retain the previous value
            continue
        order = np.argsort(weight[:, n], kind="stable")
        col = np.zeros(sc.num_aps)
        remaining = 1.0
        for m in order:
            take = min(caps[m], remaining)
            col[m] = take
            remaining -= take
            if remaining <= 0.0:
                break
        out[:, n] = col
    return out


def solve_bcdo(
    scenario: Scenario,
    config: AdmmConfig | None = None,
    max_cycles: int = 100,
    rel_tol: float = 1e-4,
    start: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> tuple[DecisionSet, energetics.EnergyBreakdown]:
    """Block coordinate descent over clustering, compute, bandwidth."""
    if config is None:
        config = AdmmConfig()
    model = FrozenModel.build(scenario)
    z1, z2 = resolve_zetas(scenario, config)
    m_count, n_count = scenario.num_aps, scenario.num_users
    a, b, c = (v.copy() for v in (start if start is not None else initial_decision(scenario)))
    zeros = np.zeros(n_count)

    def resource_block(fix_b: bool, fix_c: bool) -> None:
        for m in range(m_count):
            try:
                pi, _ = solve_subproblem_dc(
                    model,
                    m,
                    a[m],
                    zeros,
                    config.penalty_q,
                    z1,
                    z2,
                    (a[m], b[m], c[m]),
                    dc_max_iters=config.dc_max_iters,
                    dc_rel_tol=config.dc_rel_tol,
                    inner_max_iters=config.inner_max_iters,
                    fix_a=True,
                    fix_b=fix_b,
                    fix_c=fix_c,
                )
            except SubproblemInfeasibleError:
                continue  # previous block value retained
            b[m] = 1.0 / pi["bp"]
            c[m] = 1.0 / pi["cp"]

    def objective() -> float:
        bp = 1.0 / b
        cp = 1.0 / c
        s_b = bp.shape and (1.0 / bp).sum(axis=1)
        kappa = (scenario.computes - (1.0 / cp).sum(axis=1)) / np.maximum(
            scenario.bandwidths - s_b, 1.0
        )
        dec = DecisionSet(A=a, Bp=bp, Cp=cp, X=a * bp, Psi=a * cp, K=np.maximum(kappa, 1e-12))
        return total_objective(model, dec)

    prev = objective()
    for _cycle in range(max_cycles):
        a = _greedy_clustering_block(model, a, b, c)
        resource_block(fix_b=True, fix_c=False)  # compute block
        resource_block(fix_b=False, fix_c=True)  # bandwidth block
        cur = objective()
        if prev - cur < rel_tol * max(abs(prev), 1e-12):
            prev = min(prev, cur)
            break
        prev = cur

    bp = 1.0 / b
    cp = 1.0 / c
    kappa = (scenario.computes - (1.0 / cp).sum(axis=1)) / np.maximum(
        scenario.bandwidths - (1.0 / bp).sum(axis=1), 1.0
    )
    dec = DecisionSet(A=a, Bp=bp, Cp=cp, X=a * bp, Psi=a * cp, K=np.maximum(kappa, 1e-12))
    recovered = _recover_decision(model, dec, a, config.dust_threshold)
    # Final resource block on the evaluated energy (same per-AP refinement the
    # other schemes use); the clustering stays wherever the cycles left it.
    b_ref, c_ref = refine_resources(
        model, recovered.A, recovered.bandwidth, recovered.compute, config
    )
    refined = _pack_decision(model, recovered.A, b_ref, c_ref)
    try:
        _check_final(model, refined)
        recovered = refined
    except InfeasibleDecisionError:
        _check_final(model, recovered)
    energy = energetics.total_energy(scenario, recovered.A, recovered.bandwidth, recovered.compute, model.u)
    return recovered, energy


def solve_oo(
    scenario: Scenario, config: AdmmConfig | None = None
) -> tuple[DecisionSet, energetics.EnergyBreakdown]:
    """Offloading-only optimization: consensus terms stripped from the
    objective; consensus energy still evaluated post hoc."""
    decision, _state, energy = admm_solve(scenario, config, consensus_weight=0.0)
    return decision, energy


def solve_ro(
    scenario: Scenario,
    config: AdmmConfig | None = None,
    seed: int = 0,
    decision: DecisionSet | None = None,
) -> tuple[DecisionSet, energetics.EnergyBreakdown, consensus.ConsensusTrace]:
    """RAFT-based offloading: the PROPOSED decision, but leadership is
    completely stochastic — P_m drawn uniform on (0, 1] and the election uses
    random timeouts."""
    if config is None:
        config = AdmmConfig()
    if decision is None:
        decision, _state, _energy = admm_solve(scenario, config)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x52)))
    probs = 1.0 - rng.random(scenario.num_aps)  # uniform on (0, 1]
    from . import channel  # local import to avoid a cycle at module load

    u = channel.rate_coefficients(scenario)
    energy = energetics.total_energy(
        scenario, decision.A, decision.bandwidth, decision.compute, u, leader_probs=probs
    )
    b_rem, c_rem = energetics.remaining_resources(scenario, decision.bandwidth, decision.compute)
    profiles = consensus.build_profiles(c_rem, b_rem, scenario.config)
    sinr = channel.backhaul_sinr_matrix(scenario)
    trace = consensus.run_election_and_commit(
        profiles, sinr, scenario.config, mode="random_timeout", rng=rng
    )
    return decision, energy, trace
