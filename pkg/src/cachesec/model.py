"""System configuration, geometry and random scenario generation.

All channels stored on a :class:`Scenario` are noise-normalized: each
coefficient is scaled by ``1/sigma`` (LR) or ``1/sigma_e`` (ER) so the
optimization layer works with unit noise powers while transmit powers keep
their physical unit (watts).
"""

from __future__ import annotations

import ast
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BITS_PER_BYTE = 8
MEGABYTE = 1e6


class ConfigError(ValueError):
    """Invalid configuration value; the message names the offending key."""


class GenerationError(RuntimeError):
    """Random geometry could not be generated with the given parameters."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts * 1e3)


_DEFAULT_NOISE = dbm_to_watts(-172.6) * 10e6
_DEFAULT_BACKHAUL = ((0.0, 0.3), (3e6, 0.4), (6e6, 0.3))


@dataclass(frozen=True)
class SystemConfig:
    """Static simulation parameters (SI units: bits, seconds, watts, meters).

    Defaults reproduce the full-scale setup: seven hexagonal cells, 4 BS
    antennas, a 2-antenna eavesdropper, 5 users and a 10-file library of
    500 MB videos of 45 minutes each.
    """

    num_bs: int = 7
    antennas_per_bs: int = 4
    er_antennas: int = 2
    num_lr: int = 5
    num_files: int = 10
    file_size: float = 500 * MEGABYTE * BITS_PER_BYTE
    subfiles: int = 270_000
    slot_duration: float = 0.01
    bandwidth: float = 10e6
    noise_power: float = _DEFAULT_NOISE
    er_noise_power: float = _DEFAULT_NOISE
    max_tx_power: float = dbm_to_watts(48.0)
    cache_capacity: float = 2000 * MEGABYTE * BITS_PER_BYTE
    qos_rate: float = 1.65e6
    secrecy_tolerance: float = 0.15e6
    zipf_exponent: float = 1.1
    normalized_csi_error: float = 0.05
    backhaul_distribution: tuple = _DEFAULT_BACKHAUL
    inter_bs_distance: float = 500.0
    min_rx_distance: float = 50.0
    num_training_scenarios: int = 50

    def __post_init__(self):
        dist = tuple((float(c), float(p)) for c, p in self.backhaul_distribution)
        object.__setattr__(self, "backhaul_distribution", dist)
        for key in ("num_bs", "antennas_per_bs", "er_antennas", "num_lr",
                    "num_files", "subfiles", "num_training_scenarios"):
            value = getattr(self, key)
            if int(value) != value or value < 1:
                raise ConfigError(f"{key} must be an integer >= 1, got {value!r}")
            object.__setattr__(self, key, int(value))
        for key in ("file_size", "slot_duration", "bandwidth", "noise_power",
                    "er_noise_power", "max_tx_power", "qos_rate",
                    "secrecy_tolerance", "inter_bs_distance", "min_rx_distance"):
            value = float(getattr(self, key))
            if not value > 0 or not math.isfinite(value):
                raise ConfigError(f"{key} must be a finite positive number, got {value!r}")
            object.__setattr__(self, key, value)
        for key in ("cache_capacity", "zipf_exponent", "normalized_csi_error"):
            value = float(getattr(self, key))
            if not value >= 0 or not math.isfinite(value):
                raise ConfigError(f"{key} must be a finite number >= 0, got {value!r}")
            object.__setattr__(self, key, value)
        if not dist:
            raise ConfigError("backhaul_distribution must be non-empty")
        if any(c < 0 or p < 0 for c, p in dist):
            raise ConfigError("backhaul_distribution entries must be non-negative")
        if abs(sum(p for _, p in dist) - 1.0) > 1e-12:
            raise ConfigError("backhaul_distribution probabilities must sum to 1")
        if not self.secrecy_tolerance < self.qos_rate:
            raise ConfigError("secrecy_tolerance must be smaller than qos_rate")
        if self.min_rx_distance >= self.inter_bs_distance / 2:
            raise ConfigError("min_rx_distance must be below half the inter_bs_distance")

    # -- derived quantities -------------------------------------------------
    @property
    def subfile_rate(self) -> float:
        """Backhaul/air rate needed to stream one file, ``V_f / (tau L)``."""
        return self.file_size / (self.slot_duration * self.subfiles)

    @property
    def library_size(self) -> float:
        return self.num_files * self.file_size

    @property
    def total_antennas(self) -> int:
        return self.num_bs * self.antennas_per_bs

    @property
    def qos_se(self) -> float:
        """Required LR rate in bits/s/Hz."""
        return self.qos_rate / self.bandwidth

    @property
    def tolerance_se(self) -> float:
        """Tolerated ER rate in bits/s/Hz."""
        return self.secrecy_tolerance / self.bandwidth

    @property
    def sinr_target(self) -> float:
        return 2.0 ** self.qos_se - 1.0

    @property
    def secrecy_target(self) -> float:
        """ER threshold on the noise-normalized scale (``sigma_e^2 = 1``)."""
        return 2.0 ** self.tolerance_se - 1.0

    @property
    def secrecy_rate_target(self) -> float:
        return max(self.qos_se - self.tolerance_se, 0.0)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        """Stable short hash of all parameters, used to pair caches with configs."""
        return hashlib.blake2b(dump_config(self).encode(), digest_size=8).hexdigest()


REDUCED_OVERRIDES = dict(num_bs=3, antennas_per_bs=2, num_lr=2, num_files=4,
                         num_training_scenarios=10)


def reduced_config(**changes) -> SystemConfig:
    """Desk-scale configuration used by the test and acceptance suites."""
    return SystemConfig(**{**REDUCED_OVERRIDES, **changes})


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(SystemConfig))


def config_from_mapping(values: dict) -> SystemConfig:
    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    return SystemConfig(**values)


def parse_key_values(text: str) -> dict:
    """Parse ``key = value`` lines; values are Python literals, ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        try:
            values[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            values[key] = value
    return values


def dump_config(config: SystemConfig) -> str:
    lines = []
    for key in CONFIG_KEYS:
        value = getattr(config, key)
        lines.append(f"{key} = {value!r}")
    return "\n".join(lines) + "\n"


def load_config(path) -> SystemConfig:
    return config_from_mapping(parse_key_values(Path(path).read_text()))


# -- popularity and propagation ---------------------------------------------

def zipf_popularity(num_files: int, exponent: float) -> np.ndarray:
    if num_files < 1:
        raise ValueError("num_files must be >= 1")
    if exponent < 0:
        raise ValueError("exponent must be >= 0")
    weights = np.arange(1, num_files + 1, dtype=float) ** (-exponent)
    return weights / weights.sum()


def path_loss_db(distance):
    """3GPP macro-cell NLOS path loss, ``128.1 + 37.6 log10(d / 1 km)`` dB."""
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise ValueError("distance must be positive")
    return 128.1 + 37.6 * np.log10(distance / 1000.0)


def path_loss_gain(distance):
    return 10.0 ** (-path_loss_db(distance) / 10.0)


# -- geometry -----------------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    bs_positions: np.ndarray
    lr_positions: np.ndarray
    er_position: np.ndarray

    def lr_distances(self) -> np.ndarray:
        """(K, M) distances between each LR and each BS."""
        diff = self.lr_positions[:, None, :] - self.bs_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def er_distances(self) -> np.ndarray:
        return np.linalg.norm(self.bs_positions - self.er_position[None, :], axis=-1)


_HEX_DIRECTIONS = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]


def hex_cell_centers(num_cells: int, spacing: float) -> np.ndarray:
    """Centers of a hexagonal cluster: the central cell, then rings outward.

    Ring one is ordered counter-clockwise starting at angle zero, so any
    prefix of length three is a triangle of mutually adjacent cells.
    """
    axial = [(0, 0)]
    ring = 1
    while len(axial) < num_cells:
        q, r = _HEX_DIRECTIONS[0][0] * ring, _HEX_DIRECTIONS[0][1] * ring
        for side in range(6):
            dq, dr = _HEX_DIRECTIONS[(side + 2) % 6]
            for _ in range(ring):
                axial.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    axial = np.array(axial[:num_cells], dtype=float)
    a1 = np.array([1.0, 0.0])
    a2 = np.array([0.5, math.sqrt(3) / 2])
    return spacing * (axial[:, :1] * a1 + axial[:, 1:] * a2)


_CELL_NORMALS = np.array([[math.cos(t), math.sin(t)] for t in (0.0, math.pi / 3, 2 * math.pi / 3)])


def in_cell_union(points: np.ndarray, centers: np.ndarray, spacing: float) -> np.ndarray:
    """Whether each point lies in one of the hexagonal cells around ``centers``."""
    points = np.atleast_2d(points)
    rel = points[:, None, :] - centers[None, :, :]
    proj = np.abs(rel @ _CELL_NORMALS.T)
    return np.any(np.all(proj <= spacing / 2 + 1e-9, axis=-1), axis=-1)


MAX_PLACEMENT_ATTEMPTS = 10**6


def _place_receivers(count, centers, config, rng) -> np.ndarray:
    spacing = config.inter_bs_distance
    lo = centers.min(axis=0) - spacing
    hi = centers.max(axis=0) + spacing
    placed = []
    attempts = 0
    while len(placed) < count:
        if attempts >= MAX_PLACEMENT_ATTEMPTS:
            raise GenerationError("receiver placement exceeded the attempt budget")
        attempts += 1
        point = lo + (hi - lo) * rng.random(2)
        if not in_cell_union(point, centers, spacing)[0]:
            continue
        if np.min(np.linalg.norm(centers - point, axis=1)) < config.min_rx_distance:
            continue
        placed.append(point)
    return np.array(placed)


def generate_topology(config: SystemConfig, rng: np.random.Generator) -> Topology:
    centers = hex_cell_centers(config.num_bs, config.inter_bs_distance)
    points = _place_receivers(config.num_lr + 1, centers, config, rng)
    return Topology(bs_positions=centers, lr_positions=points[:-1], er_position=points[-1])


# -- scenarios ------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """One delivery-slot realization.

    ``lr_channels[k]`` is the stacked (M*Nt,) channel of LR ``k``;
    ``er_channel`` is the true (M*Nt, Ne) ER channel and
    ``er_estimate + csi_error == er_channel`` holds exactly. The optimizer
    may only look at ``er_estimate`` and ``uncertainty_radius``.
    """

    requests: tuple
    lr_channels: np.ndarray
    er_channel: np.ndarray
    er_estimate: np.ndarray
    csi_error: np.ndarray
    uncertainty_radius: float
    backhaul_caps: np.ndarray
    lr_distances: np.ndarray
    antennas_per_bs: int
    topology: Topology | None = field(default=None, compare=False)

    @property
    def num_bs(self) -> int:
        return self.backhaul_caps.shape[0]

    @property
    def num_lr(self) -> int:
        return len(self.requests)

    @property
    def requested_files(self) -> tuple:
        """Distinct requested files in ascending order."""
        return tuple(sorted({f for _, f in self.requests}))

    def file_of(self, k: int) -> int:
        return self.requests[k][1]


def _cn(rng, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def uniform_ball_sample(rng, shape, radius: float) -> np.ndarray:
    """Complex array drawn uniformly from the Frobenius ball of ``radius``."""
    if radius == 0:
        return np.zeros(shape, dtype=complex)
    direction = _cn(rng, shape)
    direction /= np.linalg.norm(direction)
    real_dim = 2 * int(np.prod(shape))
    return radius * rng.random() ** (1.0 / real_dim) * direction


def generate_scenario(config: SystemConfig, topology: Topology, popularity,
                      rng: np.random.Generator) -> Scenario:
    M, Nt, K, Ne = config.num_bs, config.antennas_per_bs, config.num_lr, config.er_antennas
    popularity = np.asarray(popularity, dtype=float)
    files = rng.choice(len(popularity), size=K, p=popularity)
    requests = tuple((k, int(f)) for k, f in enumerate(files))

    lr_dist = topology.lr_distances()
    lr_amp = np.sqrt(path_loss_gain(lr_dist) / config.noise_power)  # (K, M)
    h = _cn(rng, (K, M, Nt)) * lr_amp[:, :, None]
    lr_channels = h.reshape(K, M * Nt)

    er_amp = np.sqrt(path_loss_gain(topology.er_distances()) / config.er_noise_power)
    g = _cn(rng, (M, Nt, Ne)) * er_amp[:, None, None]
    g_drawn = g.reshape(M * Nt, Ne)

    radius = math.sqrt(config.normalized_csi_error) * np.linalg.norm(g_drawn)
    delta = uniform_ball_sample(rng, g_drawn.shape, radius)
    estimate = g_drawn - delta
    true_channel = estimate + delta

    caps, probs = zip(*config.backhaul_distribution)
    backhaul = np.asarray(caps)[rng.choice(len(caps), size=M, p=np.asarray(probs))]

    return Scenario(requests=requests, lr_channels=lr_channels, er_channel=true_channel,
                    er_estimate=estimate, csi_error=delta, uncertainty_radius=float(radius),
                    backhaul_caps=backhaul.astype(float), lr_distances=lr_dist,
                    antennas_per_bs=Nt, topology=topology)


def draw_scenario(config: SystemConfig, seed: int) -> Scenario:
    """Topology plus scenario from a single seed."""
    rng = np.random.default_rng(seed)
    topology = generate_topology(config, rng)
    return generate_scenario(config, topology,
                             zipf_popularity(config.num_files, config.zipf_exponent), rng)


def derive_seed(*parts) -> int:
    """64-bit seed from a tuple of ints/strings via BLAKE2b (stable across runs)."""
    token = "/".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(token, digest_size=8).digest(), "little")


def save_scenario(path, scenario: Scenario) -> None:
    topo = scenario.topology
    extra = {}
    if topo is not None:
        extra = dict(bs_positions=topo.bs_positions, lr_positions=topo.lr_positions,
                     er_position=topo.er_position)
    np.savez(path, requests=np.array(scenario.requests, dtype=int).reshape(-1, 2),
             lr_channels=scenario.lr_channels, er_channel=scenario.er_channel,
             er_estimate=scenario.er_estimate, csi_error=scenario.csi_error,
             uncertainty_radius=scenario.uncertainty_radius,
             backhaul_caps=scenario.backhaul_caps, lr_distances=scenario.lr_distances,
             antennas_per_bs=scenario.antennas_per_bs, **extra)


def load_scenario(path) -> Scenario:
    with np.load(path) as data:
        topo = None
        if "bs_positions" in data:
            topo = Topology(data["bs_positions"], data["lr_positions"], data["er_position"])
        return Scenario(requests=tuple((int(k), int(f)) for k, f in data["requests"]),
                        lr_channels=data["lr_channels"], er_channel=data["er_channel"],
                        er_estimate=data["er_estimate"], csi_error=data["csi_error"],
                        uncertainty_radius=float(data["uncertainty_radius"]),
                        backhaul_caps=data["backhaul_caps"], lr_distances=data["lr_distances"],
                        antennas_per_bs=int(data["antennas_per_bs"]), topology=topo)
