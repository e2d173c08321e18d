"""ADMM-based joint optimization of clustering and resource allocation.

The total-energy objective is decomposed into per-AP functions V_m of the
lifted variables (a, b', c', chi, psi, kappa); each AP solves a D.C.
subproblem (convexified by linearizing the concave penalty part and by
McCormick trust boxes around the incumbent), the coordinator projects the
clustering columns onto the simplex, and dual ascent closes the loop.
"""

from __future__ import annotations

import csv
import itertools
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from . import channel, consensus, energetics
from .scenario import Scenario

__all__ = [
    "SubproblemInfeasibleError",
    "InfeasibleDecisionError",
    "AdmmConfig",
    "DecisionSet",
    "AdmmState",
    "FrozenModel",
    "project_simplex",
    "objective_V",
    "build_rlt_constraints",
    "ConstraintRow",
    "solve_subproblem_dc",
    "inner_convex_solve",
    "ConvexSubproblem",
    "SmoothRow",
    "update_local",
    "update_dual",
    "admm_solve",
    "initial_decision",
    "write_trace",
]

THREADS_ENV = "UCMEC_THREADS"


class SubproblemInfeasibleError(RuntimeError):
    """A per-AP subproblem has no strictly feasible point."""

    def __init__(self, message: str, tag: str = ""):
        super().__init__(message)
        self.tag = tag


class InfeasibleDecisionError(RuntimeError):
    """The recovered decision violates an original constraint."""


# ---------------------------------------------------------------------------
# Configuration and model constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmmConfig:
    penalty_q: float = 100.0
    gamma_stop: float = 0.01
    t_max: int = 100
    zeta1: float | None = None  # default 1e3 * epsilon_c at build time
    zeta2: float | None = None
    dc_max_iters: int = 20
    dc_rel_tol: float = 1e-3
    inner_max_iters: int = 1200
    dust_threshold: float = 1e-3
    threads: int | None = None  # default: UCMEC_THREADS or 1

    @classmethod
    def from_mapping(cls, mapping: dict) -> "AdmmConfig":
        kwargs: dict = {}
        casts = {
            "penalty_q": float,
            "gamma_stop": float,
            "t_max": int,
            "zeta1": float,
            "zeta2": float,
            "dc_max_iters": int,
            "dc_rel_tol": float,
            "inner_max_iters": int,
            "dust_threshold": float,
            "threads": int,
        }
        for key, cast in casts.items():
            if key in mapping and str(mapping[key]).strip():
                kwargs[key] = cast(mapping[key])
        return cls(**kwargs)

    def resolve_threads(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        env = os.environ.get(THREADS_ENV, "").strip()
        return max(1, int(env)) if env else 1


@dataclass
class FrozenModel:
    """Scenario-derived constants the optimizer treats as fixed.

    Only the reputation normalizer R is refreshed (once per outer ADMM
    iteration, from the incumbent residual resources).
    """

    scenario: Scenario
    u: np.ndarray  # (M, N) spectral efficiencies log2(1 + SINR)
    eff: np.ndarray  # (M, M) backhaul log2(1 + phi), diagonal zero
    mean_eff: np.ndarray  # (M,) log2(1 + mean phi)
    S: np.ndarray  # (M,) sum_{i != m} 1 / eff[m, i]
    G: np.ndarray  # (M,) leader-transmit constant: E_l^t = G / B_rem
    H: np.ndarray  # (M,) follower constant: E_f^t = H / B_rem
    beta: float
    R: float  # max reputation, refreshed between outer iterations
    consensus_weight: float = 1.0  # 0 strips consensus terms from the objective

    @classmethod
    def build(
        cls, scenario: Scenario, beta: float | None = None, consensus_weight: float = 1.0
    ) -> "FrozenModel":
        cfg = scenario.config
        m = scenario.num_aps
        u = channel.rate_coefficients(scenario)
        eff = np.log2(1.0 + channel.backhaul_sinr_matrix(scenario))
        mean_eff = np.log2(1.0 + channel.mean_backhaul_sinrs(scenario))
        off = ~np.eye(m, dtype=bool)
        s = np.where(off, np.divide(1.0, eff, where=off, out=np.zeros_like(eff)), 0.0).sum(axis=1)
        lam_tot = cfg.state_msg_size + cfg.block_size
        d_i = cfg.block_interval
        g = cfg.epsilon_c * lam_tot * ((2 + d_i) ** 2 * (m - 1) + (m - 1) ** 2) * s
        h = cfg.epsilon_c * (d_i + 2) ** 2 * cfg.state_msg_size / mean_eff
        if beta is None:
            beta = 1e-3 * min(scenario.bandwidths.min(), scenario.computes.min())
        model = cls(
            scenario=scenario,
            u=u,
            eff=eff,
            mean_eff=mean_eff,
            S=s,
            G=g,
            H=h,
            beta=float(beta),
            R=1.0,
            consensus_weight=float(consensus_weight),
        )
        # Reference normalizer: residuals at the half-capacity initial split.
        b0, c0 = initial_decision(scenario)[1:]
        model.refresh_reputation(b0, c0)
        return model

    def refresh_reputation(self, bandwidth: np.ndarray, compute: np.ndarray) -> float:
        b_rem, c_rem = energetics.remaining_resources(self.scenario, bandwidth, compute)
        reps = consensus.build_profiles(c_rem, b_rem, self.scenario.config).reputations
        self.R = float(reps.max())
        return self.R


# ---------------------------------------------------------------------------
# Decision containers
# ---------------------------------------------------------------------------


@dataclass
class DecisionSet:
    """Lifted decision: fractions plus reciprocal resources and RLT auxiliaries."""

    A: np.ndarray  # (M, N) fractions
    Bp: np.ndarray  # (M, N) reciprocal bandwidth b' = 1/b
    Cp: np.ndarray  # (M, N) reciprocal compute c' = 1/c
    X: np.ndarray  # (M, N) chi
    Psi: np.ndarray  # (M, N) psi
    K: np.ndarray  # (M,) kappa

    @property
    def bandwidth(self) -> np.ndarray:
        """Physical allocation in Hz; inactive pairs get zero."""
        b = 1.0 / self.Bp
        b[self.A <= 0.0] = 0.0
        return b

    @property
    def compute(self) -> np.ndarray:
        c = 1.0 / self.Cp
        c[self.A <= 0.0] = 0.0
        return c


@dataclass
class AdmmState:
    A_hat: np.ndarray
    lam: np.ndarray
    q: float
    zeta1: float
    zeta2: float
    gamma_stop: float
    t_max: int
    t: int = 0
    converged: bool = False
    residuals: list[float] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)


def initial_decision(scenario: Scenario) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform fractions, half of each capacity split evenly across users."""
    m, n = scenario.num_aps, scenario.num_users
    a = np.full((m, n), 1.0 / m)
    b = np.tile(scenario.bandwidths[:, None] / (2 * n), (1, n))
    c = np.tile(scenario.computes[:, None] / (2 * n), (1, n))
    return a, b, c


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def objective_V(
    model: FrozenModel,
    m: int,
    a: np.ndarray,
    bp: np.ndarray,
    cp: np.ndarray,
    chi: np.ndarray,
    psi: np.ndarray,
    kappa: float,
    R: float | None = None,
    check_domain: bool = True,
) -> float:
    """AP m's exact share of the lifted total-energy objective.

    With chi = a b', psi = a c', kappa = C_rem / B_rem and a consistent
    normalizer R, summing over m reproduces the energetics total exactly.
    """
    sc = model.scenario
    cfg = sc.config
    b_cap = sc.bandwidths[m]
    c_cap = sc.computes[m]
    s_b = (1.0 / np.asarray(bp, dtype=float)).sum()
    b_rem = b_cap - s_b
    if check_domain:
        tol = 1e-9
        if (np.asarray(bp) < (1.0 / b_cap) * (1 - tol)).any() or (np.asarray(bp) > (1.0 / model.beta) * (1 + tol)).any():
            raise ValueError(f"b' outside [1/B_m, 1/beta] for AP {m}")
        if (np.asarray(cp) < (1.0 / c_cap) * (1 - tol)).any() or (np.asarray(cp) > (1.0 / model.beta) * (1 + tol)).any():
            raise ValueError(f"c' outside [1/C_m, 1/beta] for AP {m}")
        if kappa <= 0.0:
            raise ValueError("kappa must be positive")
        if b_rem <= 0.0:
            raise ValueError(f"AP {m} has no residual bandwidth")
    r = model.R if R is None else R
    lam_tot = cfg.state_msg_size + cfg.block_size
    bits = sc.task_bits
    value = cfg.epsilon_c * float((bits * np.asarray(chi) / model.u[m]).sum())
    value += cfg.epsilon_p * float((bits * sc.task_density * np.asarray(psi)).sum())
    w = model.consensus_weight
    value += w * model.H[m] / b_rem
    value += w * (model.G[m] - model.H[m]) / r * (kappa / cfg.block_size + 1.0 / lam_tot)
    value += w * cfg.epsilon_p / r * (1.0 + cfg.block_size / (lam_tot * kappa))
    return float(value)


def total_objective(model: FrozenModel, decision: DecisionSet, R: float | None = None) -> float:
    return sum(
        objective_V(
            model,
            m,
            decision.A[m],
            decision.Bp[m],
            decision.Cp[m],
            decision.X[m],
            decision.Psi[m],
            float(decision.K[m]),
            R=R,
            check_domain=False,
        )
        for m in range(model.scenario.num_aps)
    )


# ---------------------------------------------------------------------------
# RLT constraint system (paper-verbatim global rows)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintRow:
    tag: str
    m: int
    n: int  # -1 for per-AP rows

    def residual(self, model: FrozenModel, d: DecisionSet) -> float:
        """Signed violation; <= 0 means satisfied."""
        sc = model.scenario
        m, n = self.m, self.n
        beta = model.beta
        b_cap, c_cap = sc.bandwidths[m], sc.computes[m]
        if self.tag.startswith("chi") or self.tag.startswith("psi"):
            if self.tag.startswith("chi"):
                w, y, cap = d.X[m, n], d.Bp[m, n], b_cap
            else:
                w, y, cap = d.Psi[m, n], d.Cp[m, n], c_cap
            a = d.A[m, n]
            kind = self.tag.split("_")[1]
            if kind == "lo1":  # w >= a / cap
                return a / cap - w
            if kind == "up1":  # w <= y + a/cap - 1/cap
                return w - (y + a / cap - 1.0 / cap)
            if kind == "up2":  # w <= a / beta
                return w - a / beta
            # lo2: w >= a/beta - 1/beta + y
            return (a / beta - 1.0 / beta + y) - w
        s_c = (1.0 / d.Cp[m]).sum()
        s_b = (1.0 / d.Bp[m]).sum()
        if self.tag == "kappa_lo1":
            return (c_cap - s_c) / b_cap - d.K[m]
        if self.tag == "kappa_up1":
            return d.K[m] - (c_cap / (b_cap - s_b) - c_cap / b_cap)
        if self.tag == "kappa_up2":
            return d.K[m] - (c_cap - s_c) / beta
        if self.tag == "kappa_lo2":
            return (c_cap / (b_cap - s_b) - s_c / beta) - d.K[m]
        if self.tag == "delay":
            bits = sc.task_bits[n]
            lhs = bits * d.X[m, n] / model.u[m, n] + bits * sc.task_density[n] * d.Psi[m, n]
            return lhs - sc.deadlines[n]
        if self.tag == "cap_compute":
            return s_c - c_cap
        if self.tag == "cap_bandwidth":
            return s_b - b_cap
        raise ValueError(f"unknown tag {self.tag}")


def build_rlt_constraints(scenario: Scenario, beta: float | None = None) -> list[ConstraintRow]:
    """All 9MN + 6M rows of the lifted program, tagged for diagnostics."""
    m_count, n_count = scenario.num_aps, scenario.num_users
    rows: list[ConstraintRow] = []
    for m in range(m_count):
        for n in range(n_count):
            for kind in ("lo1", "up1", "up2", "lo2"):
                rows.append(ConstraintRow(f"chi_{kind}", m, n))
            for kind in ("lo1", "up1", "up2", "lo2"):
                rows.append(ConstraintRow(f"psi_{kind}", m, n))
            rows.append(ConstraintRow("delay", m, n))
        for tag in ("kappa_lo1", "kappa_up1", "kappa_up2", "kappa_lo2"):
            rows.append(ConstraintRow(tag, m, -1))
        rows.append(ConstraintRow("cap_compute", m, -1))
        rows.append(ConstraintRow("cap_bandwidth", m, -1))
    return rows


# ---------------------------------------------------------------------------
# Inner convex solver: projected gradient + log barrier
# ---------------------------------------------------------------------------


@dataclass
class SmoothRow:
    """One inequality g(x) <= 0 with an explicit gradient and a scale."""

    tag: str
    value: callable
    grad: callable
    scale: float


class RowSet:
    """Vectorized bundle of inequality rows g_i(x) <= 0.

    `values(x)` returns the scaled row values; `grads(x)` the scaled row
    gradients as a (k, dim) matrix.  A list of SmoothRow is wrapped lazily.
    """

    def __init__(self, tags, values, grads):
        self.tags = list(tags)
        self.values = values
        self.grads = grads

    @classmethod
    def from_rows(cls, rows: list) -> "RowSet":
        scales = np.array([r.scale for r in rows])

        def values(x):
            return np.array([r.value(x) for r in rows]) / scales

        def grads(x):
            return np.vstack([r.grad(x) for r in rows]) / scales[:, None]

        return cls([r.tag for r in rows], values, grads)


@dataclass
class ConvexSubproblem:
    x0: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    scale: np.ndarray  # typical magnitude per coordinate
    objective: callable  # x -> (f, grad)
    rows: object  # RowSet or list[SmoothRow]
    fused: callable | None = None  # x, need_grad -> (f, g | None, v, J | None)


def _project_box(x, lower, upper):
    return np.minimum(np.maximum(x, lower), upper)


def inner_convex_solve(problem: ConvexSubproblem, max_iters: int = 10_000) -> tuple[np.ndarray, bool, int]:
    """Scaled projected gradient with a log-barrier on the coupling rows.

    Returns (x, converged, iterations).  Box constraints are handled by
    projection; every iterate is strictly feasible for the smooth rows.
    """
    s = problem.scale
    s2 = s**2
    lower, upper = problem.lower, problem.upper
    x = _project_box(problem.x0.copy(), lower, upper)
    rows = problem.rows
    if isinstance(rows, list):
        rows = RowSet.from_rows(rows) if rows else None
    iters = 0

    if problem.fused is not None:
        fused = problem.fused
    else:

        def fused(x, need_grad):
            f, g = problem.objective(x)
            if rows is None:
                return f, g, None, None
            return f, g, rows.values(x), rows.grads(x) if need_grad else None

    # Phase 1: push strictly inside the rows (relative margin).
    target = 1e-6
    if rows is not None:
        for _ in range(500):
            _, _, v, gmat = fused(x, True)
            if v.max() <= -target:
                break
            active = v > -target
            grad = ((v + target)[active, None] * gmat[active]).sum(axis=0)
            step = s2 * grad
            merit = float(np.sum(np.maximum(v + target, 0.0) ** 2))
            alpha = 1.0
            for _ls in range(40):
                cand = _project_box(x - alpha * step, lower, upper)
                vc = fused(cand, False)[2]
                if float(np.sum(np.maximum(vc + target, 0.0) ** 2)) < merit:
                    x = cand
                    break
                alpha *= 0.5
            else:
                break
            iters += 1
        v = fused(x, False)[2]
        if v.max() >= 0.0:
            tag = rows.tags[int(np.argmax(v))]
            raise SubproblemInfeasibleError(
                f"no strictly feasible point; worst row {tag} violation {v.max():.3e}",
                tag=tag,
            )

    f_scale = max(abs(fused(x, False)[0]), 1e-12)

    def barrier_value(x, mu):
        f, _, v, _ = fused(x, False)
        if v is not None:
            if (v >= 0.0).any():
                return np.inf
            f -= mu * float(np.log(-v).sum())
        return f

    def barrier_obj(x, mu):
        f, g, v, jac = fused(x, True)
        if v is not None:
            if (v >= 0.0).any():
                return np.inf, g
            f -= mu * float(np.log(-v).sum())
            g = g - mu * ((1.0 / v)[:, None] * jac).sum(axis=0)
        return f, g

    mu = 1e-4 * f_scale
    mu_min = 1e-8 * f_scale
    prev_x = None
    prev_g = None
    step0 = 1.0
    while True:
        for _ in range(150):
            if iters >= max_iters:
                return x, False, iters
            f, g = barrier_obj(x, mu)
            d = s2 * g  # diagonal preconditioning
            # Stationarity measure: scaled projected-gradient step length.
            pstep = (x - _project_box(x - d, lower, upper)) / s
            if float(np.linalg.norm(pstep)) < 1e-6 * (1.0 + abs(f) / f_scale):
                break
            # Barzilai-Borwein initial step, Armijo backtracking.
            if prev_x is not None:
                dx = (x - prev_x) / s
                dg = (g - prev_g) * s
                denom = float(dx @ dg)
                step0 = float(dx @ dx) / denom if denom > 1e-30 else step0
                step0 = min(max(step0, 1e-12), 1e12)
            prev_x, prev_g = x.copy(), g.copy()
            alpha = step0
            accepted = False
            for _ls in range(50):
                cand = _project_box(x - alpha * d, lower, upper)
                predicted = float(g @ (x - cand))  # >= 0 for a projected step
                if predicted <= 0.0:
                    break
                fc = barrier_value(cand, mu)
                if fc < f - 1e-4 * predicted:
                    x = cand
                    accepted = True
                    break
                alpha *= 0.5
            iters += 1
            if not accepted:
                break
        if mu <= mu_min:
            return x, True, iters
        mu = max(mu * 0.01, mu_min)


# ---------------------------------------------------------------------------
# Per-AP D.C. subproblem
# ---------------------------------------------------------------------------


def _smooth_hinge(v: float, tau: float) -> tuple[float, float]:
    """C1 approximation of max(v, 0): quadratic ramp of width tau.

    Exact for v <= 0, linear with unit slope for v >= tau; returns (value,
    derivative).
    """
    if v <= 0.0:
        return 0.0, 0.0
    if v >= tau:
        return v - 0.5 * tau, 1.0
    return 0.5 * v * v / tau, v / tau


def _envelope(a, y, al, au, yl, yu):
    """Lower McCormick envelope of the product a*y over the given boxes.

    The objective is strictly increasing in chi and psi, so at an optimum of
    the convexified subproblem they sit exactly on this envelope; the upper
    envelope rows are then satisfied automatically.  Returns (value,
    d/da, d/dy) elementwise.
    """
    lo1 = yl * a + al * y - al * yl
    lo2 = yu * a + au * y - au * yu
    pick2 = lo2 > lo1
    value = np.where(pick2, lo2, lo1)
    da = np.where(pick2, yu, yl)
    dy = np.where(pick2, au, al)
    return value, da, dy


@dataclass
class _TrustRegion:
    a_halfwidth: float = 1.0
    ratio: float = 6.0  # multiplicative box for b', c'
    kappa_ratio: float = 1.5

    def shrink(self):
        self.a_halfwidth = max(self.a_halfwidth * 0.5, 0.02)
        self.ratio = max(self.ratio * 0.6, 1.05)
        self.kappa_ratio = max(self.kappa_ratio * 0.7, 1.01)


def solve_subproblem_dc(
    model: FrozenModel,
    m: int,
    a_hat: np.ndarray,
    lam: np.ndarray,
    q: float,
    zeta1: float,
    zeta2: float,
    start: tuple[np.ndarray, np.ndarray, np.ndarray],
    dc_max_iters: int = 20,
    dc_rel_tol: float = 1e-3,
    inner_max_iters: int = 1200,
    fix_a: bool = False,
    fix_b: bool = False,
    fix_c: bool = False,
) -> tuple[dict, int]:
    """Algorithm 1 for AP m: D.C. iterations with the penalty linearized.

    `start` is (a, b, c) in physical units.  Returns (pi_m, inner_iterations)
    where pi_m holds a, bp, cp, chi, psi, kappa.  The fix_* flags collapse
    the corresponding block's box to its start value (block-coordinate use).
    """
    sc = model.scenario
    cfg = sc.config
    n_count = sc.num_users
    b_cap, c_cap = sc.bandwidths[m], sc.computes[m]
    beta = model.beta
    bits = sc.task_bits
    density = sc.task_density
    deadlines = sc.deadlines
    u_row = model.u[m]
    lam_tot = cfg.state_msg_size + cfg.block_size
    r_norm = model.R

    a0, b0, c0 = (np.asarray(v, dtype=float).copy() for v in start)
    bp = 1.0 / np.clip(b0, beta, b_cap)
    cp = 1.0 / np.clip(c0, beta, c_cap)

    idx_a = np.arange(n_count)
    idx_bp = idx_a + n_count
    idx_cp = idx_a + 2 * n_count

    bp_glo = (1.0 / b_cap, 1.0 / beta)
    cp_glo = (1.0 / c_cap, 1.0 / beta)
    chi_coeff = cfg.epsilon_c * bits / u_row
    psi_coeff = cfg.epsilon_p * bits * density

    def exact_penalty(bp, cp, kappa):
        # Hinged form of the relaxation penalty: only violations of the two
        # nonconvex kappa envelope rows are charged, so the term vanishes on
        # the feasible side instead of rewarding resource exhaustion.
        s_b = (1.0 / bp).sum()
        s_c = (1.0 / cp).sum()
        v1 = (c_cap - s_c) / b_cap - kappa
        v2 = kappa - c_cap / (b_cap - s_b) + c_cap / b_cap
        return zeta1 * max(v1, 0.0) + zeta2 * max(v2, 0.0)

    delay_weight = 1e5  # seconds of deadline violation weighed against V

    def merit(a, bp, cp, chi, psi, kappa):
        # Evaluated at the exact products (P2-consistent), not the envelopes.
        v = objective_V(model, m, a, bp, cp, a * bp, a * cp, kappa, check_domain=False)
        v += float(lam @ (a - a_hat)) + 0.5 * q * float(((a - a_hat) ** 2).sum())
        delay = bits * a * bp / u_row + bits * density * a * cp
        v += delay_weight * float(np.maximum(delay - deadlines, 0.0).sum())
        return v + exact_penalty(bp, cp, kappa)

    def pack(a, bp, cp, kappa=None):
        # kappa is always reported as the true remaining-resource ratio of
        # the packed allocation; the solver's boxed kappa is only a scaffold.
        ratio = (c_cap - (1.0 / cp).sum()) / max(b_cap - (1.0 / bp).sum(), 1.0)
        return dict(a=a, bp=bp, cp=cp, chi=a * bp, psi=a * cp, kappa=float(max(ratio, 1e-12)))

    current = pack(a0, bp, cp)
    best = dict(current)
    best_merit = merit(**best)
    trust = _TrustRegion()
    total_inner = 0

    for _dc in range(dc_max_iters):
        a_c, bp_c, cp_c = current["a"], current["bp"], current["cp"]

        # Local boxes (trust region), clipped to the paper-verbatim globals.
        if fix_a:
            a_lo = a_hi = a_c
        else:
            a_lo = np.maximum(a_c - trust.a_halfwidth, 0.0)
            a_hi = np.minimum(a_c + trust.a_halfwidth, 1.0)
        if fix_b:
            bp_lo = bp_hi = bp_c
        else:
            bp_lo = np.maximum(bp_c / trust.ratio, bp_glo[0])
            bp_hi = np.minimum(bp_c * trust.ratio, bp_glo[1])
        if fix_c:
            cp_lo = cp_hi = cp_c
        else:
            cp_lo = np.maximum(cp_c / trust.ratio, cp_glo[0])
            cp_hi = np.minimum(cp_c * trust.ratio, cp_glo[1])
        k_true = (c_cap - (1.0 / cp_c).sum()) / max(b_cap - (1.0 / bp_c).sum(), 1.0)
        pen_tau = 1e-3 * (1.0 + k_true)

        lower = np.concatenate([a_lo, bp_lo, cp_lo])
        upper = np.concatenate([a_hi, bp_hi, cp_hi])
        scale = np.concatenate(
            [
                np.ones(n_count),
                np.full(n_count, 1.0 / b_cap),
                np.full(n_count, 1.0 / c_cap),
            ]
        )

        margin_b = 1e-6 * b_cap
        margin_c = 1e-6 * c_cap
        row_scales = np.concatenate([deadlines, [b_cap, c_cap, c_cap]])
        row_tags = ["delay"] * n_count + ["cap_bandwidth", "cap_compute", "kappa_up2"]
        rng = np.arange(n_count)
        cw = model.consensus_weight
        df_dk_lin = cw * (model.G[m] - model.H[m]) / (r_norm * cfg.block_size)
        # Stacked boxes so one envelope call covers both chi and psi.
        env_al = np.concatenate([a_lo, a_lo])
        env_au = np.concatenate([a_hi, a_hi])
        env_yl = np.concatenate([bp_lo, cp_lo])
        env_yu = np.concatenate([bp_hi, cp_hi])

        def fused(x, need_grad):
            """Objective, rows and (optionally) their gradients in one pass.

            Shares the envelope evaluations between objective and rows; the
            line search calls this with need_grad=False.
            """
            a = x[idx_a]
            bpv = x[idx_bp]
            cpv = x[idx_cp]
            env, env_da, env_dy = _envelope(
                np.concatenate([a, a]), x[n_count:], env_al, env_au, env_yl, env_yu
            )
            chi, psi = env[:n_count], env[n_count:]
            chi_da, psi_da = env_da[:n_count], env_da[n_count:]
            chi_db, psi_dc = env_dy[:n_count], env_dy[n_count:]
            s_b = (1.0 / bpv).sum()
            s_c = (1.0 / cpv).sum()
            b_rem = b_cap - s_b
            k = (c_cap - s_c) / b_rem if b_rem > 0.0 else np.inf

            delay = bits * chi / u_row + bits * density * psi - deadlines
            tail = [s_b - (b_cap - margin_b), s_c - (c_cap - margin_c), k * beta + s_c - c_cap]
            v = np.concatenate([delay, tail]) / row_scales

            if b_rem <= 0.0:
                g = np.zeros_like(x) if need_grad else None
                return np.inf, g, v, None

            k_safe = max(k, 1e-12)
            diff = a - a_hat
            f = float(chi_coeff @ chi + psi_coeff @ psi)
            f += cw * model.H[m] / b_rem
            f += cw * (model.G[m] - model.H[m]) / r_norm * (k / cfg.block_size + 1.0 / lam_tot)
            f += cw * cfg.epsilon_p / r_norm * (1.0 + cfg.block_size / (lam_tot * k_safe))
            f += float(lam @ diff) + 0.5 * q * float((diff**2).sum())
            # Hinged relaxation penalty at the exact ratio.  The hinge is
            # Huber-smoothed (quadratic ramp of width pen_tau) because the
            # start point sits exactly on the kink; a raw kink there stalls
            # the line search with a spurious full-slope gradient.
            v1 = k * b_rem / b_cap - k  # C_rem / B - kappa
            h1, dh1 = _smooth_hinge(v1, pen_tau) if zeta1 > 0 else (0.0, 0.0)
            v2 = k - c_cap / b_rem + c_cap / b_cap
            h2, dh2 = _smooth_hinge(v2, pen_tau) if zeta2 > 0 else (0.0, 0.0)
            f += zeta1 * h1 + zeta2 * h2

            if not need_grad:
                return f, None, v, None

            inv_bp2 = 1.0 / bpv**2
            inv_cp2 = 1.0 / cpv**2
            dk_db = -k / b_rem * inv_bp2
            dk_dc = inv_cp2 / b_rem
            df_dk = df_dk_lin - cw * cfg.epsilon_p * cfg.block_size / (r_norm * lam_tot * k_safe**2)

            g = np.empty_like(x)
            g[idx_a] = chi_coeff * chi_da + psi_coeff * psi_da + lam + q * diff
            g[idx_bp] = chi_coeff * chi_db - cw * model.H[m] / b_rem**2 * inv_bp2 + df_dk * dk_db
            g[idx_cp] = psi_coeff * psi_dc + df_dk * dk_dc
            if dh1 != 0.0:
                g[idx_bp] += zeta1 * dh1 * (-dk_db)
                g[idx_cp] += zeta1 * dh1 * (inv_cp2 / b_cap - dk_dc)
            if dh2 != 0.0:
                # b_rem grows with b'_j, so -C/b_rem grows too.
                g[idx_bp] += zeta2 * dh2 * (dk_db + c_cap / b_rem**2 * inv_bp2)
                g[idx_cp] += zeta2 * dh2 * dk_dc

            jac = np.zeros((n_count + 3, x.size))
            jac[rng, idx_a] = bits * chi_da / u_row + bits * density * psi_da
            jac[rng, idx_bp] = bits * chi_db / u_row
            jac[rng, idx_cp] = bits * density * psi_dc
            jac[n_count, idx_bp] = -inv_bp2
            jac[n_count + 1, idx_cp] = -inv_cp2
            jac[n_count + 2, idx_bp] = beta * dk_db
            jac[n_count + 2, idx_cp] = beta * dk_dc - inv_cp2
            jac /= row_scales[:, None]
            return f, g, v, jac

        def objective(x):
            f, g, _, _ = fused(x, True)
            return f, g

        rows = RowSet(row_tags, lambda x: fused(x, False)[2], lambda x: fused(x, True)[3])

        x0 = np.concatenate(
            [
                np.clip(a_c, a_lo, a_hi),
                np.clip(bp_c, bp_lo, bp_hi),
                np.clip(cp_c, cp_lo, cp_hi),
            ]
        )
        problem = ConvexSubproblem(
            x0=x0, lower=lower, upper=upper, scale=scale, objective=objective, rows=rows, fused=fused
        )
        try:
            x, _conv, iters = inner_convex_solve(problem, max_iters=inner_max_iters)
        except SubproblemInfeasibleError:
            trust.shrink()
            continue
        total_inner += iters

        cand = pack(x[idx_a].copy(), x[idx_bp].copy(), x[idx_cp].copy())
        cand_merit = merit(**cand)
        if best is None or cand_merit < best_merit - 1e-12:
            improved = (best_merit - cand_merit) / max(abs(best_merit), 1e-12) if best is not None else np.inf
            best, best_merit = cand, cand_merit
            current = dict(cand)
            trust.shrink()
            if improved < dc_rel_tol:
                break
        else:
            # Nonmonotone step: reject and tighten the trust region.
            trust.shrink()
            current = dict(best)
            if trust.ratio <= 1.05 and trust.a_halfwidth <= 0.02:
                break
    if best is None:
        raise SubproblemInfeasibleError(f"AP {m}: no feasible subproblem solution found")
    return best, total_inner


# ---------------------------------------------------------------------------
# Local and dual updates
# ---------------------------------------------------------------------------


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = 1} (sort-and-threshold)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, v.size + 1)
    rho = np.nonzero(u * ks > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def update_local(a: np.ndarray, lam: np.ndarray, q: float) -> np.ndarray:
    """Exact minimizer of the local step: per-user simplex projection."""
    if q <= 0:
        raise ValueError("q must be positive")
    target = a + lam / q
    out = np.empty_like(target)
    for n in range(target.shape[1]):
        out[:, n] = project_simplex(target[:, n])
    return out


def update_dual(lam: np.ndarray, a: np.ndarray, a_hat: np.ndarray, q: float) -> np.ndarray:
    return lam + q * (a - a_hat)


# ---------------------------------------------------------------------------
# Outer loop (Algorithm 2)
# ---------------------------------------------------------------------------


def _recover_decision(
    model: FrozenModel,
    decision: DecisionSet,
    a_hat: np.ndarray,
    dust_threshold: float,
) -> DecisionSet:
    """Replace A by the row-stochastic local copy, drop dust, repair delays."""
    sc = model.scenario
    a = a_hat.copy()
    a[a < dust_threshold] = 0.0

    col = a.sum(axis=0)
    dead = col <= 0.0
    if dead.any():
        # All fractions dusted: fall back to the best AP for those users.
        for n in np.flatnonzero(dead):
            a[int(np.argmax(a_hat[:, n])), n] = 1.0
            col[n] = a[:, n].sum()
    a /= a.sum(axis=0, keepdims=True)

    b = 1.0 / decision.Bp
    c = 1.0 / decision.Cp
    b[a <= 0.0] = 0.0
    c[a <= 0.0] = 0.0

    # Feasibility-aware clipping: the averaged global copy can put mass on an
    # AP whose allocated (b, c) — or channel — cannot carry it within the
    # deadline.  Cap each entry by the fraction the pair supports and push the
    # excess onto the remaining APs (a few clip/renormalize passes suffice).
    bits = sc.task_bits[None, :]
    work = (sc.task_bits * sc.task_density)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = bits / (b * model.u) + work / c
        caps = sc.deadlines[None, :] / unit
    caps = np.where(np.isfinite(caps), caps, 0.0)
    clippable = caps.sum(axis=0) >= 1.0
    for _ in range(4):
        a[:, clippable] = np.minimum(a[:, clippable], caps[:, clippable])
        col = a.sum(axis=0)
        ok = col > 1e-12
        a[:, ok] /= col[ok]

    # Columns whose current allocations cannot carry the user at all are
    # reassigned against potential capacity: each pair's allocation plus an
    # equal share of the AP's spare.  The mass goes greedily to the cheapest
    # potential servers, and (b, c) are topped up to what the new fractions
    # need; the repair loop below settles any remainder.
    bad = np.flatnonzero(~clippable)
    if bad.size:
        spare_b = sc.bandwidths - b.sum(axis=1)
        spare_c = sc.computes - c.sum(axis=1)
        for n in bad:
            b_pot = b[:, n] + np.maximum(spare_b, 0.0) / bad.size
            c_pot = c[:, n] + np.maximum(spare_c, 0.0) / bad.size
            with np.errstate(divide="ignore", invalid="ignore"):
                unit_n = bits[0, n] / (b_pot * model.u[:, n]) + work[0, n] / c_pot
                cap_n = sc.deadlines[n] / unit_n
                weight = sc.config.epsilon_c * bits[0, n] / (b_pot * model.u[:, n]) + (
                    sc.config.epsilon_p * work[0, n] / c_pot
                )
            cap_n = np.where(np.isfinite(cap_n), cap_n, 0.0)
            weight = np.where(np.isfinite(weight), weight, np.inf)
            new_col = np.zeros(a.shape[0])
            remaining = 1.0
            for m in np.argsort(weight, kind="stable"):
                if cap_n[m] <= 0.0 or not np.isfinite(weight[m]):
                    continue
                take = min(cap_n[m], remaining)
                new_col[m] = take
                remaining -= take
                if remaining <= 1e-12:
                    break
            if remaining > 1e-12:  # genuinely unservable: keep and let repair try
                continue
            a[:, n] = new_col
            # Top (b, c) up to the new fractions' needs, within the spare.
            for m in np.flatnonzero(new_col > 0.0):
                b_need = 2.0 * new_col[m] * bits[0, n] / (
                    sc.deadlines[n] * max(model.u[m, n], 1e-30)
                )
                c_need = 2.0 * new_col[m] * work[0, n] / sc.deadlines[n]
                db = min(max(b_need - b[m, n], 0.0), max(spare_b[m], 0.0))
                dc = min(max(c_need - c[m, n], 0.0), max(spare_c[m], 0.0))
                b[m, n] += db
                c[m, n] += dc
                spare_b[m] -= db
                spare_c[m] -= dc
            b[:, n] = np.where(new_col > 0.0, b[:, n], 0.0)
            c[:, n] = np.where(new_col > 0.0, c[:, n], 0.0)

    # Delay repair: scale (b, c) for violating users within AP spare capacity.
    # Growing both by the violation ratio fixes the pair exactly; growth is
    # capped by the AP's spare relative to this pair's own allocation.
    for _ in range(12):
        delays = _pair_delays(model, a, b, c)
        worst = np.where(a > 0.0, delays / sc.deadlines[None, :], 0.0)
        if worst.max() <= 1.0 + 1e-6:
            break
        spare_b = sc.bandwidths - b.sum(axis=1)
        spare_c = sc.computes - c.sum(axis=1)
        for mm, nn in zip(*np.nonzero(worst > 1.0 + 1e-6)):
            need = worst[mm, nn] * 1.02
            grow_b = min(need, 1.0 + spare_b[mm] / max(b[mm, nn], 1e-30))
            grow_c = min(need, 1.0 + spare_c[mm] / max(c[mm, nn], 1e-30))
            b[mm, nn] *= grow_b
            c[mm, nn] *= grow_c
            spare_b[mm] = sc.bandwidths[mm] - b[mm].sum()
            spare_c[mm] = sc.computes[mm] - c[mm].sum()

    return _pack_decision(model, a, b, c)


def _pack_decision(model: FrozenModel, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> DecisionSet:
    """Lift physical (a, b, c) into a DecisionSet: inactive pairs sit at the
    reciprocal box top (allocation beta, i.e. negligible)."""
    sc = model.scenario
    bp = np.where(a > 0.0, 1.0 / np.maximum(b, model.beta), 1.0 / model.beta)
    cp = np.where(a > 0.0, 1.0 / np.maximum(c, model.beta), 1.0 / model.beta)
    s_b = (1.0 / bp).sum(axis=1)
    s_c = (1.0 / cp).sum(axis=1)
    kappa = (sc.computes - s_c) / np.maximum(sc.bandwidths - s_b, 1.0)
    return DecisionSet(A=a, Bp=bp, Cp=cp, X=a * bp, Psi=a * cp, K=kappa)


def _pair_delays(model: FrozenModel, a, b, c) -> np.ndarray:
    sc = model.scenario
    active = a > 0.0
    load = a * sc.task_bits[None, :]
    out = np.zeros_like(a)
    rates = b * model.u
    ok = active & (rates > 0) & (c > 0)
    out[ok] = load[ok] / rates[ok] + (load * sc.task_density[None, :])[ok] / c[ok]
    out[active & ~ok] = np.inf
    return out


def _check_final(model: FrozenModel, decision: DecisionSet) -> None:
    sc = model.scenario
    tol = 1e-4
    b = decision.bandwidth
    c = decision.compute
    if (b.sum(axis=1) > sc.bandwidths * (1 + tol)).any():
        raise InfeasibleDecisionError("bandwidth capacity violated")
    if (c.sum(axis=1) > sc.computes * (1 + tol)).any():
        raise InfeasibleDecisionError("compute capacity violated")
    cols = decision.A.sum(axis=0)
    if np.abs(cols - 1.0).max() > tol:
        raise InfeasibleDecisionError("fractions do not sum to one")
    delays = _pair_delays(model, decision.A, b, c).max(axis=0)
    if (delays > sc.deadlines * (1 + tol)).any():
        n = int(np.argmax(delays / sc.deadlines))
        raise InfeasibleDecisionError(
            f"delay constraint violated for user {n}: {delays[n]:.4f}s > {sc.deadlines[n]:.4f}s"
        )


def resolve_zetas(scenario: Scenario, config: AdmmConfig) -> tuple[float, float]:
    z1 = config.zeta1 if config.zeta1 is not None else 1e3 * scenario.config.epsilon_c
    z2 = config.zeta2 if config.zeta2 is not None else 1e3 * scenario.config.epsilon_c
    return z1, z2


def reoptimize_resources(
    model: FrozenModel, a: np.ndarray, config: AdmmConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Per-AP (b, c) re-optimization with the clustering pinned."""
    sc = model.scenario
    z1, z2 = resolve_zetas(sc, config)
    m_count, n_count = a.shape
    b = np.zeros_like(a)
    c = np.zeros_like(a)
    for m in range(m_count):
        assigned = a[m] > 0.0
        count = max(int(assigned.sum()), 1)
        b_start = np.where(assigned, sc.bandwidths[m] / (2 * count), model.beta)
        c_start = np.where(assigned, sc.computes[m] / (2 * count), model.beta)
        try:
            pi, _ = solve_subproblem_dc(
                model,
                m,
                a[m],
                np.zeros(n_count),
                config.penalty_q,
                z1,
                z2,
                (a[m], b_start, c_start),
                dc_max_iters=config.dc_max_iters,
                dc_rel_tol=config.dc_rel_tol,
                inner_max_iters=config.inner_max_iters,
                fix_a=True,
            )
            b[m] = 1.0 / pi["bp"]
            c[m] = 1.0 / pi["cp"]
        except SubproblemInfeasibleError:
            b[m] = b_start
            c[m] = c_start
        b[m, ~assigned] = 0.0
        c[m, ~assigned] = 0.0
    return b, c


def refine_resources(
    model: FrozenModel,
    a: np.ndarray,
    b0: np.ndarray,
    c0: np.ndarray,
    config: AdmmConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Direct (b, c) refinement of the evaluated energy with the clustering
    pinned.

    The D.C. surrogate's consensus part is near-linear in the residual
    resources, so it happily spends capacity that the evaluated consensus
    energy (which scales like 1 / residual) cannot afford.  This pass
    minimizes the evaluated per-AP energy itself — offload energy plus the
    probability-weighted consensus energy of the residuals — with the per-leg
    deadline rows as explicit constraints.  The reputation normalizer couples
    the APs; a short best-response loop resolves it.  Falls back to (b0, c0)
    for any AP where the solve does not improve on it.
    """
    sc = model.scenario
    cfg = sc.config
    m_count, n_count = a.shape
    lam_msg = cfg.state_msg_size + cfg.block_size
    floor = energetics.RESOURCE_FLOOR
    bits = sc.task_bits
    work = sc.task_bits * sc.task_density
    weight = model.consensus_weight

    b = np.array(b0, dtype=float, copy=True)
    c = np.array(c0, dtype=float, copy=True)

    def residual_rep(bm: np.ndarray, cm: np.ndarray, m: int) -> float:
        b_rem = max(sc.bandwidths[m] - bm.sum(), floor)
        c_rem = max(sc.computes[m] - cm.sum(), floor)
        return c_rem / cfg.block_size + b_rem / lam_msg

    def solve_ap(m: int, r_norm: float) -> tuple[np.ndarray, np.ndarray]:
        idx = np.flatnonzero(a[m] > 0.0)
        if idx.size == 0:
            return np.zeros(n_count), np.zeros(n_count)
        k = idx.size
        cap_b = sc.bandwidths[m]
        cap_c = sc.computes[m]
        load_b = a[m, idx] * bits[idx] / np.maximum(model.u[m, idx], 1e-30)
        load_c = a[m, idx] * work[idx]
        dls = sc.deadlines[idx]

        def energy(x: np.ndarray) -> float:
            bm = x[:k] * cap_b
            cm = x[k:] * cap_c
            e_off = cfg.epsilon_c * (load_b / bm).sum() + cfg.epsilon_p * (load_c / cm).sum()
            if weight == 0.0:
                return e_off
            b_rem = max(cap_b - bm.sum(), floor)
            c_rem = max(cap_c - cm.sum(), floor)
            rep = c_rem / cfg.block_size + b_rem / lam_msg
            p = min(max(rep / r_norm, 0.0), 1.0)
            e_lead = model.G[m] / b_rem + cfg.epsilon_p * cfg.block_size / c_rem
            e_foll = model.H[m] / b_rem
            return e_off + weight * (p * e_lead + (1.0 - p) * e_foll)

        def delay_slack(x: np.ndarray) -> np.ndarray:
            bm = x[:k] * cap_b
            cm = x[k:] * cap_c
            return 1.0 - (load_b / bm + load_c / cm) / dls

        def cap_slack(x: np.ndarray) -> np.ndarray:
            return np.array([1.0 - x[:k].sum(), 1.0 - x[k:].sum()])

        lo_b = max(floor / cap_b, 1e-9)
        lo_c = max(floor / cap_c, 1e-9)
        bounds = [(lo_b, 1.0)] * k + [(lo_c, 1.0)] * k

        # Starts: the incoming allocation plus deadline splits between the two
        # legs (balanced and skewed either way — the landscape has local
        # minima when the leader probability saturates), each scaled into the
        # capacity if oversubscribed.
        x_in = np.concatenate(
            [np.clip(b[m, idx] / cap_b, lo_b, 1.0), np.clip(c[m, idx] / cap_c, lo_c, 1.0)]
        )
        starts = [x_in]
        for theta_b, theta_c in ((0.475, 0.475), (0.8, 0.15), (0.15, 0.8)):
            xb = np.clip(load_b / (theta_b * dls) / cap_b, lo_b, 1.0)
            xc = np.clip(load_c / (theta_c * dls) / cap_c, lo_c, 1.0)
            for leg, tot in ((xb, xb.sum()), (xc, xc.sum())):
                if tot > 0.95:
                    leg *= 0.95 / tot
            starts.append(np.concatenate([np.maximum(xb, lo_b), np.maximum(xc, lo_c)]))

        best_x = None
        best_val = np.inf
        constraints = [
            {"type": "ineq", "fun": delay_slack},
            {"type": "ineq", "fun": cap_slack},
        ]
        for x0 in starts:
            with warnings.catch_warnings():
                # SLSQP's trial steps can poke outside the box before being
                # clipped; harmless here.
                warnings.simplefilter("ignore", RuntimeWarning)
                res = _scipy_minimize(
                    energy,
                    x0,
                    method="SLSQP",
                    bounds=bounds,
                    constraints=constraints,
                    options={"maxiter": 200, "ftol": 1e-12},
                )
            x = np.clip(res.x, [bd[0] for bd in bounds], 1.0)
            if (
                delay_slack(x).min() >= -1e-6
                and cap_slack(x).min() >= -1e-6
                and energy(x) < best_val
            ):
                best_x = x
                best_val = energy(x)
        # Keep the incoming allocation when it already beats the solves.
        if (
            delay_slack(x_in).min() >= -1e-6
            and cap_slack(x_in).min() >= -1e-6
            and energy(x_in) <= best_val
        ):
            best_x = x_in
        if best_x is None:
            return b[m].copy(), c[m].copy()
        bm = np.zeros(n_count)
        cm = np.zeros(n_count)
        bm[idx] = best_x[:k] * cap_b
        cm[idx] = best_x[k:] * cap_c
        return bm, cm

    r_norm = model.R
    for _ in range(4):
        for m in range(m_count):
            b[m], c[m] = solve_ap(m, r_norm)
        r_new = max(residual_rep(b[m], c[m], m) for m in range(m_count))
        if abs(r_new - r_norm) <= 1e-9 * max(abs(r_new), 1.0):
            break
        r_norm = r_new
    return b, c


def _binary_candidates(model: FrozenModel, a_hat: np.ndarray) -> list[np.ndarray]:
    """Whole-user assignments worth testing against the fractional solution:
    the argmax of the global copy, and the per-user cheapest AP by unit energy
    weight at half-capacity shares."""
    sc = model.scenario
    m_count, n_count = a_hat.shape
    cands: list[np.ndarray] = []

    def to_matrix(assignment: np.ndarray) -> np.ndarray:
        a = np.zeros((m_count, n_count))
        a[assignment, np.arange(n_count)] = 1.0
        return a

    cands.append(to_matrix(np.argmax(a_hat, axis=0)))

    share_b = (sc.bandwidths / 2.0)[:, None]
    share_c = (sc.computes / 2.0)[:, None]
    bits = sc.task_bits[None, :]
    work = (sc.task_bits * sc.task_density)[None, :]
    with np.errstate(divide="ignore"):
        unit = bits / (share_b * model.u) + work / share_c
        weight = sc.config.epsilon_c * bits / (share_b * model.u) + (
            sc.config.epsilon_p * work / share_c
        )
    weight = np.where(np.isfinite(unit) & (unit <= sc.deadlines[None, :]), weight, np.inf)
    if np.isfinite(weight).any(axis=0).all():
        cands.append(to_matrix(np.argmin(weight, axis=0)))

    # Capacity-aware greedy: place users (heaviest bandwidth demand first) on
    # the cheapest AP whose remaining budget still covers the half-deadline
    # resource need, so no single AP ends up oversubscribed.
    b_need = 2.0 * bits / (sc.deadlines[None, :] * np.maximum(model.u, 1e-30))
    c_need = np.broadcast_to(2.0 * work / sc.deadlines[None, :], (m_count, n_count))
    budget_b = sc.bandwidths.copy()
    budget_c = sc.computes.copy()
    order = np.argsort(-np.where(np.isfinite(weight), b_need, np.inf).min(axis=0))
    greedy = np.zeros(n_count, dtype=int)
    for n in order:
        fits = (
            np.isfinite(weight[:, n])
            & (b_need[:, n] <= budget_b)
            & (c_need[:, n] <= budget_c)
        )
        if fits.any():
            m_pick = int(np.flatnonzero(fits)[np.argmin(weight[fits, n])])
        else:
            m_pick = int(np.argmax(budget_b / sc.bandwidths))
        greedy[n] = m_pick
        budget_b[m_pick] -= b_need[m_pick, n]
        budget_c[m_pick] -= c_need[m_pick, n]
    cands.append(to_matrix(greedy))

    unique: list[np.ndarray] = []
    for a in cands:
        if not any(np.array_equal(a, other) for other in unique):
            unique.append(a)
    return unique


_LP_HEADROOM = 0.95  # fraction of each capacity the assignment program may book


def _feasible_assignment(model: FrozenModel, binary: bool) -> np.ndarray | None:
    """Assignment by linear programming: under an even deadline split between
    the uplink and computing legs, the resources a user books on an AP are
    linear in its assigned fraction (bandwidth 2L/(D u), compute 2 rho L / D).
    Feasibility is then a transportation LP — or a small MILP for whole-user
    assignments — which finds splits that no per-user greedy rule reaches.
    Returns the assignment matrix, or None when the program is infeasible."""
    from scipy.optimize import LinearConstraint, milp

    sc = model.scenario
    m_count, n_count = sc.num_aps, sc.num_users
    bits = sc.task_bits[None, :]
    work = (sc.task_bits * sc.task_density)[None, :]
    b_need = 2.0 * bits / (sc.deadlines[None, :] * np.maximum(model.u, 1e-30))
    c_need = np.broadcast_to(2.0 * work / sc.deadlines[None, :], (m_count, n_count))
    usable = b_need <= _LP_HEADROOM * sc.bandwidths[:, None]
    if not usable.any(axis=0).all() and binary:
        return None

    pairs = np.argwhere(usable if binary else (b_need < np.inf))
    n_var = len(pairs)
    cost = np.array(
        [
            b_need[m, n] / sc.bandwidths[m] + c_need[m, n] / sc.computes[m]
            for m, n in pairs
        ]
    )
    rows_eq = np.zeros((n_count, n_var))
    rows_b = np.zeros((m_count, n_var))
    rows_c = np.zeros((m_count, n_var))
    for j, (m, n) in enumerate(pairs):
        rows_eq[n, j] = 1.0
        rows_b[m, j] = b_need[m, n]
        rows_c[m, j] = c_need[m, n]
    constraints = [
        LinearConstraint(rows_eq, 1.0, 1.0),
        LinearConstraint(rows_b, -np.inf, _LP_HEADROOM * sc.bandwidths),
        LinearConstraint(rows_c, -np.inf, _LP_HEADROOM * sc.computes),
    ]
    res = milp(
        cost,
        constraints=constraints,
        bounds=(0.0, 1.0),
        integrality=np.ones(n_var) if binary else np.zeros(n_var),
    )
    if not res.success:
        return None
    a = np.zeros((m_count, n_count))
    for j, (m, n) in enumerate(pairs):
        a[m, n] = res.x[j]
    a[a < 1e-6] = 0.0
    a /= a.sum(axis=0, keepdims=True)
    return a


def _deadline_split_decision(
    model: FrozenModel, a: np.ndarray, config: AdmmConfig
) -> DecisionSet:
    """Decision built from an assignment matrix: seed (b, c) at the even
    deadline split the assignment was sized for, then refine."""
    sc = model.scenario
    bits = sc.task_bits[None, :]
    work = (sc.task_bits * sc.task_density)[None, :]
    b0 = 2.0 * a * bits / (sc.deadlines[None, :] * np.maximum(model.u, 1e-30))
    c0 = 2.0 * a * work / sc.deadlines[None, :]
    b, c = refine_resources(model, a, b0, c0, config)
    return _pack_decision(model, a, b, c)


def _binary_decision(model: FrozenModel, a_bin: np.ndarray, config: AdmmConfig) -> DecisionSet:
    b, c = reoptimize_resources(model, a_bin, config)
    b, c = refine_resources(model, a_bin, b, c, config)
    return _recover_decision(model, _pack_decision(model, a_bin, b, c), a_bin, config.dust_threshold)


_LOCAL_SEARCH_MAX_PAIRS = 9  # single-user move search only on tiny instances
_EXHAUSTIVE_MAX_ASSIGNMENTS = 16  # enumerate assignments when M^N is this small


def _assignment_matrix(assignment: np.ndarray, m_count: int) -> np.ndarray:
    a = np.zeros((m_count, assignment.size))
    a[assignment, np.arange(assignment.size)] = 1.0
    return a


def admm_solve(
    scenario: Scenario,
    config: AdmmConfig | None = None,
    consensus_weight: float = 1.0,
) -> tuple[DecisionSet, AdmmState, energetics.EnergyBreakdown]:
    """Algorithm 2: parallel per-AP global updates, simplex local update,
    dual ascent, until the primal residual drops below gamma_stop."""
    if config is None:
        config = AdmmConfig()
    cfg = scenario.config
    model = FrozenModel.build(scenario, consensus_weight=consensus_weight)
    zeta1 = config.zeta1 if config.zeta1 is not None else 1e3 * cfg.epsilon_c
    zeta2 = config.zeta2 if config.zeta2 is not None else 1e3 * cfg.epsilon_c

    m_count, n_count = scenario.num_aps, scenario.num_users
    a0, b0, c0 = initial_decision(scenario)
    a_hat = a0.copy()
    lam = np.zeros((m_count, n_count))
    state = AdmmState(
        A_hat=a_hat,
        lam=lam,
        q=config.penalty_q,
        zeta1=zeta1,
        zeta2=zeta2,
        gamma_stop=config.gamma_stop,
        t_max=config.t_max,
    )
    starts = [(a0[m].copy(), b0[m].copy(), c0[m].copy()) for m in range(m_count)]
    decision = None
    threads = config.resolve_threads()

    for t in range(1, config.t_max + 1):
        t_start = time.perf_counter()
        if decision is not None:
            model.refresh_reputation(decision.bandwidth, decision.compute)

        def solve_one(m):
            return solve_subproblem_dc(
                model,
                m,
                state.A_hat[m],
                state.lam[m],
                state.q,
                zeta1,
                zeta2,
                starts[m],
                dc_max_iters=config.dc_max_iters,
                dc_rel_tol=config.dc_rel_tol,
                inner_max_iters=config.inner_max_iters,
            )

        a_hat_prev = state.A_hat.copy()
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(solve_one, range(m_count)))
        else:
            results = [solve_one(m) for m in range(m_count)]

        a = np.vstack([r[0]["a"] for r in results])
        bp = np.vstack([r[0]["bp"] for r in results])
        cp = np.vstack([r[0]["cp"] for r in results])
        chi = np.vstack([r[0]["chi"] for r in results])
        psi = np.vstack([r[0]["psi"] for r in results])
        kappa = np.array([r[0]["kappa"] for r in results])
        inner_iters = [r[1] for r in results]
        decision = DecisionSet(A=a, Bp=bp, Cp=cp, X=chi, Psi=psi, K=kappa)

        state.A_hat = update_local(a, state.lam, state.q)
        state.lam = update_dual(state.lam, a, state.A_hat, state.q)
        residual = float(np.linalg.norm(a - state.A_hat))
        objective = total_objective(model, decision)
        state.residuals.append(residual)
        state.objectives.append(objective)
        state.t = t
        state.trace.append(
            {
                "t": t,
                "residual": residual,
                "objective": objective,
                "inner_iterations": ";".join(str(i) for i in inner_iters),
                "wall_time_s": time.perf_counter() - t_start,
            }
        )
        # Warm starts: continue each AP from its own incumbent.
        starts = [
            (a[m].copy(), (1.0 / bp[m]).copy(), (1.0 / cp[m]).copy()) for m in range(m_count)
        ]
        # Converged when the local copies agree with the global variable and
        # the global variable itself has stopped drifting.
        drift = float(np.linalg.norm(state.A_hat - a_hat_prev))
        if residual < config.gamma_stop and drift < config.gamma_stop:
            state.converged = True
            break

    # Recovery plus polish: the relaxed solution competes against whole-user
    # assignments (the relaxation's stationary points can sit at interior
    # splits with equalized marginal costs even when concentrating a user on
    # one AP is strictly cheaper).  The best feasible candidate wins.
    recovered = _recover_decision(model, decision, state.A_hat, config.dust_threshold)
    candidates = [recovered]
    b_ref, c_ref = refine_resources(
        model, recovered.A, recovered.bandwidth, recovered.compute, config
    )
    candidates.append(_pack_decision(model, recovered.A, b_ref, c_ref))
    for a_bin in _binary_candidates(model, state.A_hat):
        try:
            candidates.append(_binary_decision(model, a_bin, config))
        except SubproblemInfeasibleError:
            continue

    def evaluate(cand: DecisionSet):
        _check_final(model, cand)
        energy = energetics.total_energy(scenario, cand.A, cand.bandwidth, cand.compute, model.u)
        metric = energy.offload_total if model.consensus_weight == 0.0 else energy.total
        return metric, energy

    best = None
    best_metric = np.inf
    best_energy = None
    last_err: InfeasibleDecisionError | None = None
    for cand in candidates:
        try:
            metric, energy = evaluate(cand)
        except InfeasibleDecisionError as exc:
            last_err = exc
            continue
        if metric < best_metric:
            best, best_metric, best_energy = cand, metric, energy

    # On tiny instances, refine the whole-user assignment: exhaustively when
    # the assignment space itself is tiny (single-user moves cannot cross a
    # worse intermediate), otherwise by single-user moves, each with a full
    # resource re-optimization.
    if m_count**n_count <= _EXHAUSTIVE_MAX_ASSIGNMENTS:
        for combo in itertools.product(range(m_count), repeat=n_count):
            trial = np.array(combo, dtype=int)
            try:
                cand = _binary_decision(model, _assignment_matrix(trial, m_count), config)
                metric, energy = evaluate(cand)
            except (SubproblemInfeasibleError, InfeasibleDecisionError):
                continue
            if metric < best_metric:
                best, best_metric, best_energy = cand, metric, energy
    elif m_count * n_count <= _LOCAL_SEARCH_MAX_PAIRS:
        assignment = np.argmax(best.A if best is not None else state.A_hat, axis=0)
        improved = True
        rounds = 0
        while improved and rounds < 4:
            improved = False
            rounds += 1
            for n in range(n_count):
                for m in range(m_count):
                    if m == assignment[n]:
                        continue
                    trial = assignment.copy()
                    trial[n] = m
                    try:
                        cand = _binary_decision(model, _assignment_matrix(trial, m_count), config)
                        metric, energy = evaluate(cand)
                    except (SubproblemInfeasibleError, InfeasibleDecisionError):
                        continue
                    if metric < best_metric * (1.0 - 1e-9):
                        best, best_metric, best_energy = cand, metric, energy
                        assignment = trial
                        improved = True

    if best is None:
        assert last_err is not None
        raise last_err
    return best, state, best_energy


def write_trace(state: AdmmState, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "residual", "objective", "inner_iterations", "wall_time_s"])
        for row in state.trace:
            w.writerow([row["t"], row["residual"], row["objective"], row["inner_iterations"], row["wall_time_s"]])
