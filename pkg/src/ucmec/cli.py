"""Experiment runner: seeds x schemes x sweep grids, CSV tables and
gnuplot-ready files for convergence, delay and energy curves."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import subprocess
import sys
import time
from dataclasses import dataclass, fields as dc_fields, replace
from pathlib import Path

import numpy as np

from . import energetics
from .baselines import SchemeId, solve_bcdo, solve_oo, solve_ro, solve_so
from .optimizer import AdmmConfig, admm_solve, write_trace
from .scenario import (
    ConfigError,
    SystemConfig,
    default_config_text,
    generate_scenario,
    load_config,
    load_scenario,
)

__all__ = [
    "SWEEP_AXES",
    "RESULT_COLUMNS",
    "SchemaError",
    "ExperimentPlan",
    "ResultRow",
    "run_plan",
    "emit_plots",
    "main",
]

SWEEP_AXES = ("num_users", "num_aps", "block_size", "penalty_q")


class SchemaError(ValueError):
    """A result file does not carry the documented column set."""


@dataclass(frozen=True)
class ExperimentPlan:
    config_path: str
    sweep_axis: str
    sweep_values: tuple[float, ...]
    schemes: tuple[SchemeId, ...]
    seeds: tuple[int, ...]
    out_dir: str

    def validate(self) -> None:
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.sweep_axis!r}; expected one of {SWEEP_AXES}")
        if not self.sweep_values:
            raise ConfigError("sweep values must be nonempty")
        if list(self.sweep_values) != sorted(self.sweep_values):
            raise ConfigError("sweep values must be sorted ascending")
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.seeds:
            raise ConfigError("at least one seed is required")


@dataclass
class ResultRow:
    scheme: str
    value: float
    seed: int
    offload_delay_mean_s: float | None = None
    consensus_delay_s: float | None = None
    total_delay_s: float | None = None
    offload_energy_j: float | None = None
    consensus_energy_j: float | None = None
    total_energy_j: float | None = None
    admm_iterations: int | None = None
    converged: bool | None = None
    wall_time_s: float | None = None
    error: str = ""


# Wall times are volatile, so they live in timings.csv; everything else is
# deterministic given the plan and lands in results.csv / aggregate.csv.
RESULT_COLUMNS = [f.name for f in dc_fields(ResultRow) if f.name != "wall_time_s"]
TIMING_COLUMNS = ["scheme", "value", "seed", "wall_time_s"]
_METRIC_COLUMNS = RESULT_COLUMNS[3:9]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _apply_axis(
    base: SystemConfig, admm: AdmmConfig, axis: str, value: float
) -> tuple[SystemConfig, AdmmConfig]:
    if axis == "num_users":
        return replace(base, num_users=int(value)), admm
    if axis == "num_aps":
        return replace(base, num_aps=int(value)), admm
    if axis == "block_size":
        return replace(base, block_size=float(value)), admm
    return base, replace(admm, penalty_q=float(value))


def _run_scheme(scheme: SchemeId, scenario, admm_cfg: AdmmConfig, seed: int, cache: dict):
    """Returns (decision, energy, admm_state or None).  The relaxed PROPOSED
    solve is shared: SO rounds it and RO re-elects on it."""

    def proposed():
        if "proposed" not in cache:
            cache["proposed"] = admm_solve(scenario, admm_cfg)
        return cache["proposed"]

    if scheme is SchemeId.PROPOSED:
        decision, state, energy = proposed()
        return decision, energy, state
    if scheme is SchemeId.SO:
        decision, energy = solve_so(scenario, admm_cfg, relaxed=proposed()[0])
        return decision, energy, None
    if scheme is SchemeId.BCDO:
        decision, energy = solve_bcdo(scenario, admm_cfg)
        return decision, energy, None
    if scheme is SchemeId.OO:
        decision, state, energy = solve_oo(scenario, admm_cfg)
        return decision, energy, state
    if scheme is SchemeId.RO:
        decision, energy, _trace = solve_ro(scenario, admm_cfg, seed=seed, decision=proposed()[0])
        return decision, energy, None
    raise ValueError(f"unknown scheme {scheme}")


def run_plan(plan: ExperimentPlan) -> int:
    """Executes the grid, writes results.csv / aggregate.csv / metadata and
    plot files under plan.out_dir.  Returns 0 iff every row succeeded."""
    plan.validate()
    base_cfg, admm_map = load_config(plan.config_path)
    admm_base = AdmmConfig.from_mapping(admm_map)
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces = out / "traces"
    traces.mkdir(exist_ok=True)

    rows: list[ResultRow] = []
    for value in plan.sweep_values:
        cfg_v, admm_v = _apply_axis(base_cfg, admm_base, plan.sweep_axis, value)
        for seed in plan.seeds:
            cache: dict = {}
            for scheme in plan.schemes:
                t0 = time.perf_counter()
                try:
                    scenario = cache.get("scenario")
                    if scenario is None:
                        scenario = cache["scenario"] = generate_scenario(cfg_v, seed)
                    decision, energy, state = _run_scheme(scheme, scenario, admm_v, seed, cache)
                    _, delay = energetics.evaluate(
                        scenario, decision.A, decision.bandwidth, decision.compute
                    )
                    d_o = delay.mean_offload
                    d_c = float(delay.consensus)
                    rows.append(
                        ResultRow(
                            scheme=str(scheme),
                            value=value,
                            seed=seed,
                            offload_delay_mean_s=d_o,
                            consensus_delay_s=d_c,
                            total_delay_s=d_o + d_c,
                            offload_energy_j=energy.offload_total,
                            consensus_energy_j=energy.consensus_total,
                            total_energy_j=energy.total,
                            admm_iterations=None if state is None else state.t,
                            converged=None if state is None else state.converged,
                            wall_time_s=time.perf_counter() - t0,
                        )
                    )
                    if state is not None and scheme is SchemeId.PROPOSED:
                        write_trace(state, traces / f"proposed_v{_fmt(value)}_s{seed}.csv")
                except Exception as exc:  # error token row; the run continues
                    rows.append(
                        ResultRow(
                            scheme=str(scheme),
                            value=value,
                            seed=seed,
                            wall_time_s=time.perf_counter() - t0,
                            error=f"ERROR:{type(exc).__name__}",
                        )
                    )

    rows.sort(key=lambda r: (r.scheme, r.value, r.seed))
    _write_results(out / "results.csv", rows)
    _write_timings(out / "timings.csv", rows)
    _write_aggregate(out / "aggregate.csv", rows)
    _write_metadata(out / "metadata.txt", plan)
    emit_plots(out, sweep_axis=plan.sweep_axis)
    return 0 if all(not r.error for r in rows) else 1


def _write_results(path: Path, rows: list[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, col)) for col in RESULT_COLUMNS])


def _write_timings(path: Path, rows: list[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMING_COLUMNS)
        for r in rows:
            w.writerow([r.scheme, _fmt(r.value), r.seed, _fmt(r.wall_time_s)])


def _write_aggregate(path: Path, rows: list[ResultRow]) -> None:
    groups: dict[tuple[str, float], list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.scheme, r.value), []).append(r)
    header = ["scheme", "value", "n_seeds", "n_errors"]
    for col in _METRIC_COLUMNS:
        header += [f"mean_{col}", f"std_{col}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for (scheme, value), grp in sorted(groups.items()):
            ok = [r for r in grp if not r.error]
            out = [scheme, _fmt(value), str(len(grp)), str(len(grp) - len(ok))]
            for col in _METRIC_COLUMNS:
                vals = [getattr(r, col) for r in ok if getattr(r, col) is not None]
                if vals:
                    out += [_fmt(float(np.mean(vals))), _fmt(float(np.std(vals)))]
                else:
                    out += ["", ""]
            w.writerow(out)


def _git_hash() -> str:
    try:
        return (
            subprocess.run(
                ["git", "rev-parse", "HEAD"],
                capture_output=True,
                text=True,
                timeout=10,
                cwd=Path(__file__).parent,
            ).stdout.strip()
            or "unknown"
        )
    except Exception:
        return "unknown"


def _write_metadata(path: Path, plan: ExperimentPlan) -> None:
    digest = hashlib.sha256(Path(plan.config_path).read_bytes()).hexdigest()
    lines = [
        f"# timestamp: {time.strftime('%Y-%m-%dT%H:%M:%S%z')}",
        f"# git: {_git_hash()}",
        f"# config: {plan.config_path}",
        f"# config_sha256: {digest}",
        f"# sweep_axis: {plan.sweep_axis}",
        f"# sweep_values: {','.join(_fmt(v) for v in plan.sweep_values)}",
        f"# schemes: {','.join(str(s) for s in plan.schemes)}",
        f"# seeds: {','.join(str(s) for s in plan.seeds)}",
    ]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Plot emission (gnuplot data + script stubs)
# ---------------------------------------------------------------------------

_PLOTS = {
    "num_users": [("delay_vs_n", "mean_total_delay_s"), ("energy_vs_n", "mean_total_energy_j")],
    "num_aps": [("energy_vs_m", "mean_total_energy_j")],
    "block_size": [("energy_vs_block", "mean_total_energy_j")],
    "penalty_q": [("energy_vs_q", "mean_total_energy_j")],
}


def _read_aggregate(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        records = list(reader)
    if not records:
        raise SchemaError("aggregate file has no data rows")
    return records


def emit_plots(out_dir: str | Path, sweep_axis: str) -> list[Path]:
    """Writes one .dat + .gp pair per figure; one line per sweep value per
    scheme, one gnuplot block per scheme."""
    out = Path(out_dir)
    records = _read_aggregate(out / "aggregate.csv")
    written: list[Path] = []
    for stem, column in _PLOTS.get(sweep_axis, _PLOTS["num_users"]):
        if column not in records[0]:
            raise SchemaError(f"aggregate file is missing column {column!r}")
        std_col = column.replace("mean_", "std_")
        if std_col not in records[0]:
            raise SchemaError(f"aggregate file is missing column {std_col!r}")
        dat = out / f"{stem}.dat"
        buf = io.StringIO()
        schemes = sorted({r["scheme"] for r in records})
        for scheme in schemes:
            buf.write(f'# scheme: {scheme}\n')
            for r in records:
                if r["scheme"] == scheme and r[column]:
                    buf.write(f'{r["value"]} {r[column]} {r[std_col]}\n')
            buf.write("\n\n")
        dat.write_text(buf.getvalue())
        gp = out / f"{stem}.gp"
        plots = ", ".join(
            f"'{dat.name}' index {i} using 1:2:3 with yerrorlines title '{s}'"
            for i, s in enumerate(schemes)
        )
        gp.write_text(
            f"set xlabel '{sweep_axis}'\nset ylabel '{column}'\nset grid\nplot {plots}\n"
        )
        written += [dat, gp]

    # Convergence curves from the saved PROPOSED traces.
    traces = sorted((out / "traces").glob("proposed_*.csv"))
    if traces:
        dat = out / "convergence.dat"
        buf = io.StringIO()
        for tr in traces:
            buf.write(f"# trace: {tr.name}\n")
            with open(tr, newline="") as fh:
                for row in csv.DictReader(fh):
                    buf.write(f'{row["t"]} {row["residual"]} {row["objective"]}\n')
            buf.write("\n\n")
        dat.write_text(buf.getvalue())
        gp = out / "convergence.gp"
        plots = ", ".join(
            f"'convergence.dat' index {i} using 1:2 with linespoints title '{tr.stem}'"
            for i, tr in enumerate(traces)
        )
        gp.write_text(f"set xlabel 'iteration'\nset ylabel 'residual'\nset logscale y\nplot {plots}\n")
        written += [dat, gp]
    return written


# ---------------------------------------------------------------------------
# CLI entry points
# ---------------------------------------------------------------------------


def _cmd_run(args: argparse.Namespace) -> int:
    plan = ExperimentPlan(
        config_path=args.config,
        sweep_axis=args.sweep,
        sweep_values=tuple(float(v) for v in args.values.split(",")),
        schemes=tuple(SchemeId(s.strip().upper()) for s in args.schemes.split(",")),
        seeds=tuple(range(args.seeds)),
        out_dir=args.out,
    )
    return run_plan(plan)


def _cmd_replay(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    decision, state, energy = admm_solve(scenario)
    _, delay = energetics.evaluate(scenario, decision.A, decision.bandwidth, decision.compute)
    print(f"scenario: {scenario.num_aps} APs, {scenario.num_users} users")
    print(f"admm: iterations={state.t} converged={state.converged} residual={state.residuals[-1]:.6f}")
    print(f"energy_j: offload={energy.offload_total:.6f} consensus={energy.consensus_total:.6f} total={energy.total:.6f}")
    print(f"delay_s: offload_mean={delay.mean_offload:.6f} consensus={delay.consensus:.6f}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    try:
        config, admm_map = load_config(args.config)
        AdmmConfig.from_mapping(admm_map)
    except (ConfigError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    print(f"config OK: {config.num_aps} APs, {config.num_users} users")
    return 0


def _cmd_print_config(_args: argparse.Namespace) -> int:
    print(default_config_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ucmec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a sweep plan")
    run.add_argument("--config", required=True)
    run.add_argument("--sweep", required=True, choices=SWEEP_AXES)
    run.add_argument("--values", required=True, help="comma-separated sweep values")
    run.add_argument("--schemes", required=True, help="comma-separated scheme names")
    run.add_argument("--seeds", type=int, required=True, help="number of seeds (0..N-1)")
    run.add_argument("--out", required=True)
    run.set_defaults(func=_cmd_run)

    replay = sub.add_parser("replay", help="re-solve a dumped scenario")
    replay.add_argument("--scenario", required=True)
    replay.set_defaults(func=_cmd_replay)

    validate = sub.add_parser("validate", help="check a config file")
    validate.add_argument("--config", required=True)
    validate.set_defaults(func=_cmd_validate)

    printcfg = sub.add_parser("print-config", help="print the default config")
    printcfg.set_defaults(func=_cmd_print_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
