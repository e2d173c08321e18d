"""Network instance generation: topology, resources, tasks and large-scale fading.

All draws are routed through per-category RNG sub-streams so that e.g. adding
users never perturbs the AP draws for the same seed.
"""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

__all__ = [
    "ConfigError",
    "SystemConfig",
    "ApProfile",
    "UserTask",
    "Scenario",
    "generate_scenario",
    "path_loss_db",
    "noise_power",
    "load_config",
    "save_scenario",
    "load_scenario",
]


class ConfigError(ValueError):
    """Raised when a SystemConfig field is out of its documented domain."""


# Sub-stream tags; each entity category draws from its own child generator.
_STREAMS = {
    "ap_pos": 0,
    "ap_res": 1,
    "user_pos": 2,
    "tasks": 3,
    "access": 4,
    "backhaul": 5,
}

MIN_DISTANCE_M = 1.0  # co-located nodes are clamped to 1 m before path loss


@dataclass(frozen=True)
class SystemConfig:
    num_aps: int = 5
    num_users: int = 5
    antennas_per_ap: int = 16
    ap_bandwidth_range: tuple[float, float] = (10e6, 50e6)  # Hz
    ap_compute_range: tuple[float, float] = (5e9, 20e9)  # cycles/s
    task_size_range: tuple[float, float] = (100e3, 200e3)  # bits
    compute_density_range: tuple[float, float] = (1000.0, 2000.0)  # cycles/bit
    delay_tolerance_range: tuple[float, float] = (0.100, 0.150)  # s
    user_tx_power: float = 0.100  # W
    ap_tx_power: float = 0.200  # W
    ap_interference_power: float = 0.020  # W
    noise_psd_dbm_hz: float = -174.0
    epsilon_c: float = 1.5  # J/s, transmission
    epsilon_p: float = 1.0  # J/s, computing
    state_msg_size: float = 10e3  # bits
    block_size: float = 500e3  # bits
    block_interval: int = 1  # message multiplier per consensus round
    deployment_radius: float = 100.0  # m
    deployment_shape: str = "disk"  # "disk" or "square" (side = 2*radius)
    path_loss_exponent: float = 3.76
    rng_seed: int = 0

    def validate(self) -> None:
        if self.num_aps < 2:
            raise ConfigError("num_aps must be >= 2")
        if self.num_users < 1:
            raise ConfigError("num_users must be >= 1")
        if self.antennas_per_ap <= self.num_users:
            raise ConfigError("antennas_per_ap must exceed num_users")
        for name in (
            "ap_bandwidth_range",
            "ap_compute_range",
            "task_size_range",
            "compute_density_range",
            "delay_tolerance_range",
        ):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ConfigError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        for name in (
            "user_tx_power",
            "ap_tx_power",
            "ap_interference_power",
            "epsilon_c",
            "epsilon_p",
            "state_msg_size",
            "block_size",
            "deployment_radius",
            "path_loss_exponent",
        ):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.state_msg_size >= self.block_size:
            raise ConfigError("state_msg_size must be smaller than block_size")
        if self.block_interval < 1:
            raise ConfigError("block_interval must be >= 1")
        if self.deployment_shape not in ("disk", "square"):
            raise ConfigError("deployment_shape must be 'disk' or 'square'")

    @property
    def noise_psd_w_hz(self) -> float:
        return 10.0 ** ((self.noise_psd_dbm_hz - 30.0) / 10.0)


@dataclass(frozen=True)
class ApProfile:
    id: int
    position: tuple[float, float]  # m
    bandwidth: float  # Hz
    compute: float  # cycles/s


@dataclass(frozen=True)
class UserTask:
    id: int
    position: tuple[float, float]  # m
    data_bits: float
    cycles_per_bit: float
    deadline_s: float


@dataclass(frozen=True)
class Scenario:
    """Immutable network realization; safe to share across threads."""

    config: SystemConfig
    aps: tuple[ApProfile, ...]
    users: tuple[UserTask, ...]
    access_channels: np.ndarray  # (M, N, X) complex
    backhaul_gains: np.ndarray  # (M, M) complex, diagonal unused (zero)
    noise_power_per_hz: float  # W/Hz

    @property
    def num_aps(self) -> int:
        return len(self.aps)

    @property
    def num_users(self) -> int:
        return len(self.users)

    def backhaul_gain(self, m1: int, m2: int) -> complex:
        if m1 == m2:
            raise ValueError("an AP has no backhaul self-link")
        return complex(self.backhaul_gains[m1, m2])

    def ap_positions(self) -> np.ndarray:
        return np.array([ap.position for ap in self.aps])

    def user_positions(self) -> np.ndarray:
        return np.array([u.position for u in self.users])

    def ap_distances_km(self) -> np.ndarray:
        """Pairwise AP distances in km, clamped below at 1 m; diagonal zero."""
        pos = self.ap_positions()
        diff = pos[:, None, :] - pos[None, :, :]
        d = np.sqrt((diff**2).sum(axis=2))
        d = np.maximum(d, MIN_DISTANCE_M)
        np.fill_diagonal(d, 0.0)
        return d / 1000.0

    @property
    def bandwidths(self) -> np.ndarray:
        return np.array([ap.bandwidth for ap in self.aps])

    @property
    def computes(self) -> np.ndarray:
        return np.array([ap.compute for ap in self.aps])

    @property
    def task_bits(self) -> np.ndarray:
        return np.array([u.data_bits for u in self.users])

    @property
    def task_density(self) -> np.ndarray:
        return np.array([u.cycles_per_bit for u in self.users])

    @property
    def deadlines(self) -> np.ndarray:
        return np.array([u.deadline_s for u in self.users])


def path_loss_db(distance_km: float) -> float:
    """Large-scale attenuation 128.1 + 37.6*log10(d) with d in km."""
    if distance_km <= 0.0:
        raise ValueError(f"distance must be positive, got {distance_km}")
    return 128.1 + 37.6 * math.log10(distance_km)


def noise_power(noise_psd_dbm_hz: float, bandwidth_hz: float) -> float:
    """Integrated noise power in watts over the given band."""
    if bandwidth_hz <= 0.0:
        raise ValueError("bandwidth must be positive")
    return 10.0 ** ((noise_psd_dbm_hz - 30.0) / 10.0) * bandwidth_hz


def _rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, _STREAMS[stream])))


def _draw_positions(rng: np.random.Generator, n: int, cfg: SystemConfig) -> np.ndarray:
    if cfg.deployment_shape == "disk":
        r = cfg.deployment_radius * np.sqrt(rng.uniform(size=n))
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        return np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return rng.uniform(-cfg.deployment_radius, cfg.deployment_radius, size=(n, 2))


def _cn01(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def generate_scenario(config: SystemConfig, seed: int) -> Scenario:
    """Draw a reproducible network instance; pure function of (config, seed)."""
    config.validate()
    m, n, x = config.num_aps, config.num_users, config.antennas_per_ap

    ap_pos = _draw_positions(_rng(seed, "ap_pos"), m, config)
    res_rng = _rng(seed, "ap_res")
    bw = res_rng.uniform(*config.ap_bandwidth_range, size=m)
    comp = res_rng.uniform(*config.ap_compute_range, size=m)

    user_pos = _draw_positions(_rng(seed, "user_pos"), n, config)
    task_rng = _rng(seed, "tasks")
    bits = task_rng.uniform(*config.task_size_range, size=n)
    density = task_rng.uniform(*config.compute_density_range, size=n)
    deadline = task_rng.uniform(*config.delay_tolerance_range, size=n)

    # Access channels: i.i.d. CN(0,1) per antenna, scaled to amplitude by the
    # path-loss model (power attenuation 10^(-PL/10)).
    access = _cn01(_rng(seed, "access"), (m, n, x))
    for i in range(m):
        for j in range(n):
            d_m = math.dist(ap_pos[i], user_pos[j])
            d_km = max(d_m, MIN_DISTANCE_M) / 1000.0
            access[i, j, :] *= 10.0 ** (-path_loss_db(d_km) / 20.0)

    # Backhaul: h / sqrt(d^gamma), reciprocal links share one small-scale draw.
    bk_rng = _rng(seed, "backhaul")
    backhaul = np.zeros((m, m), dtype=complex)
    for i in range(m):
        for j in range(i + 1, m):
            d_km = max(math.dist(ap_pos[i], ap_pos[j]), MIN_DISTANCE_M) / 1000.0
            h = _cn01(bk_rng, ()) / math.sqrt(d_km**config.path_loss_exponent)
            backhaul[i, j] = h
            backhaul[j, i] = h

    return Scenario(
        config=config,
        aps=tuple(
            ApProfile(i, (float(ap_pos[i, 0]), float(ap_pos[i, 1])), float(bw[i]), float(comp[i]))
            for i in range(m)
        ),
        users=tuple(
            UserTask(
                j,
                (float(user_pos[j, 0]), float(user_pos[j, 1])),
                float(bits[j]),
                float(density[j]),
                float(deadline[j]),
            )
            for j in range(n)
        ),
        access_channels=access,
        backhaul_gains=backhaul,
        noise_power_per_hz=config.noise_psd_w_hz,
    )


# ---------------------------------------------------------------------------
# Config file I/O
# ---------------------------------------------------------------------------

_SECTION_OF = {
    "num_aps": "network",
    "num_users": "network",
    "antennas_per_ap": "network",
    "ap_bandwidth_range": "network",
    "ap_compute_range": "network",
    "user_tx_power": "network",
    "ap_tx_power": "network",
    "ap_interference_power": "network",
    "noise_psd_dbm_hz": "network",
    "deployment_radius": "network",
    "deployment_shape": "network",
    "path_loss_exponent": "network",
    "rng_seed": "network",
    "task_size_range": "tasks",
    "compute_density_range": "tasks",
    "delay_tolerance_range": "tasks",
    "epsilon_c": "tasks",
    "epsilon_p": "tasks",
    "state_msg_size": "consensus",
    "block_size": "consensus",
    "block_interval": "consensus",
}

_INT_FIELDS = {"num_aps", "num_users", "antennas_per_ap", "block_interval", "rng_seed"}
_RANGE_FIELDS = {
    "ap_bandwidth_range",
    "ap_compute_range",
    "task_size_range",
    "compute_density_range",
    "delay_tolerance_range",
}


def load_config(path: str | Path) -> tuple[SystemConfig, dict[str, str]]:
    """Parse an INI config with [network]/[tasks]/[consensus]/[admm] sections.

    Keys mirror SystemConfig field names; ranges are "lo,hi" pairs.  Returns
    the validated SystemConfig plus the raw [admm] section for the optimizer.
    """
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"config file not found or unreadable: {path}")

    kwargs: dict = {}
    for name, section in _SECTION_OF.items():
        if not parser.has_option(section, name):
            continue
        raw = parser.get(section, name)
        if name in _RANGE_FIELDS:
            parts = [p.strip() for p in raw.split(",")]
            if len(parts) != 2:
                raise ConfigError(f"{name} must be 'lo,hi', got {raw!r}")
            kwargs[name] = (float(parts[0]), float(parts[1]))
        elif name in _INT_FIELDS:
            kwargs[name] = int(raw)
        elif name == "deployment_shape":
            kwargs[name] = raw.strip()
        else:
            kwargs[name] = float(raw)

    config = SystemConfig(**kwargs)
    config.validate()
    admm = dict(parser.items("admm")) if parser.has_section("admm") else {}
    return config, admm


def default_config_text() -> str:
    """INI text with every key at its default value, ready for editing."""
    cfg = SystemConfig()
    lines: dict[str, list[str]] = {"network": [], "tasks": [], "consensus": []}
    for f in fields(cfg):
        section = _SECTION_OF[f.name]
        value = getattr(cfg, f.name)
        if f.name in _RANGE_FIELDS:
            value = f"{value[0]},{value[1]}"
        lines[section].append(f"{f.name} = {value}")
    out = []
    for section in ("network", "tasks", "consensus"):
        out.append(f"[{section}]")
        out.extend(lines[section])
        out.append("")
    out.extend(["[admm]", "penalty_q = 100.0", "gamma_stop = 0.01", "t_max = 100", ""])
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Scenario dump / replay
# ---------------------------------------------------------------------------


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    """CSV dump (section-tagged rows) sufficient to replay a scenario."""
    cfg = scenario.config
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for f in fields(cfg):
            value = getattr(cfg, f.name)
            if f.name in _RANGE_FIELDS:
                value = f"{value[0]},{value[1]}"
            w.writerow(["config", f.name, value])
        for ap in scenario.aps:
            w.writerow(["ap", ap.id, ap.position[0], ap.position[1], ap.bandwidth, ap.compute])
        for u in scenario.users:
            w.writerow(
                ["user", u.id, u.position[0], u.position[1], u.data_bits, u.cycles_per_bit, u.deadline_s]
            )
        for m in range(scenario.num_aps):
            for n in range(scenario.num_users):
                for a, g in enumerate(scenario.access_channels[m, n]):
                    w.writerow(["access", m, n, a, g.real, g.imag])
        for m1 in range(scenario.num_aps):
            for m2 in range(scenario.num_aps):
                if m1 != m2:
                    h = scenario.backhaul_gains[m1, m2]
                    w.writerow(["backhaul", m1, m2, h.real, h.imag])


def load_scenario(path: str | Path) -> Scenario:
    cfg_kwargs: dict = {}
    aps: list[ApProfile] = []
    users: list[UserTask] = []
    access_rows: list[tuple] = []
    backhaul_rows: list[tuple] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            tag = row[0]
            if tag == "config":
                name, raw = row[1], row[2]
                if name in _RANGE_FIELDS:
                    lo, hi = raw.split(",")
                    cfg_kwargs[name] = (float(lo), float(hi))
                elif name in _INT_FIELDS:
                    cfg_kwargs[name] = int(raw)
                elif name == "deployment_shape":
                    cfg_kwargs[name] = raw
                else:
                    cfg_kwargs[name] = float(raw)
            elif tag == "ap":
                aps.append(
                    ApProfile(int(row[1]), (float(row[2]), float(row[3])), float(row[4]), float(row[5]))
                )
            elif tag == "user":
                users.append(
                    UserTask(
                        int(row[1]),
                        (float(row[2]), float(row[3])),
                        float(row[4]),
                        float(row[5]),
                        float(row[6]),
                    )
                )
            elif tag == "access":
                access_rows.append((int(row[1]), int(row[2]), int(row[3]), float(row[4]), float(row[5])))
            elif tag == "backhaul":
                backhaul_rows.append((int(row[1]), int(row[2]), float(row[3]), float(row[4])))

    config = SystemConfig(**cfg_kwargs)
    m, n, x = config.num_aps, config.num_users, config.antennas_per_ap
    access = np.zeros((m, n, x), dtype=complex)
    for i, j, a, re, im in access_rows:
        access[i, j, a] = re + 1j * im
    backhaul = np.zeros((m, m), dtype=complex)
    for i, j, re, im in backhaul_rows:
        backhaul[i, j] = re + 1j * im
    return Scenario(
        config=config,
        aps=tuple(aps),
        users=tuple(users),
        access_channels=access,
        backhaul_gains=backhaul,
        noise_power_per_hz=config.noise_psd_w_hz,
    )
