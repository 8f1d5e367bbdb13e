"""Configuration schema, file parsing, validation, and run manifests.

Config files are flat ``key = value`` text with dotted section prefixes::

    world.num_vehicles = 8
    trainer.denoising_steps = 5
    experiment.seeds = [0, 1, 2]

Values are JSON scalars or lists; ``#`` starts a comment. Unknown keys are
rejected. Every resolved key (explicit or defaulted) is echoed into the run
manifest so that the manifest hash pins the full parameter set.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError


@dataclass
class WorldConfig:
    """Static parameters of the simulated road-side edge network."""

    num_vehicles: int = 8
    num_rsus: int = 4
    map_extent: float = 1000.0            # square map side, m
    rsu_positions: list | None = None     # [[x, y], ...]; None = uniform grid
    rsu_coverage_radius: float = 600.0    # m
    carrier_frequency: float = 5.9e9      # Hz
    channel_gain_coeff: float = 1.0
    light_speed: float = 3.0e8            # m/s
    uplink_bandwidth: float = 200.0       # Mbit/s
    downlink_bandwidth: float = 200.0     # Mbit/s
    inter_rsu_bandwidth: float = 500.0    # Mbit/s, wired backbone
    vehicle_tx_power: float = 0.1         # W
    noise_power: float = 1.0e-12          # W
    cycles_per_bit: float = 0.25          # CPU cycles per bit of data
    cpu_speed: float | list = 2.0e8       # cycles/s, scalar or per-RSU list
    rsu_max_load: int | None = None       # None = ceil(2V / S)
    mtd_latency: float = 0.5              # s, reconfiguration cost when defending
    attack_frequency: float = 0.1         # per-slot probability per targeted RSU
    attack_degradation: float = 0.2       # multiplier on bandwidth/CPU when hit
    attack_targets: list = field(default_factory=lambda: [0])
    episode_length: int = 100             # slots
    reputation_threshold: float = 0.7
    slot_duration: float = 1.0            # s, vehicle motion per decision slot
    vehicle_speed_range: list = field(default_factory=lambda: [10.0, 20.0])  # m/s
    con_data_range: list = field(default_factory=lambda: [100.0, 600.0])     # Mbit
    raw_fraction: float = 0.2             # sensor-stream size relative to con range
    compute_fraction: float = 0.5         # processing load relative to con range
    result_fraction: float = 0.05         # result size relative to con range
    beacon_packets: int = 10              # per hosted vehicle per slot per direction
    beacon_success_rate: float = 0.98     # nominal delivery probability
    seed: int = 0

    def validate(self) -> None:
        if self.num_vehicles < 1:
            raise ConfigError("world.num_vehicles must be >= 1")
        if self.num_rsus < 2:
            raise ConfigError("world.num_rsus must be >= 2")
        positive = [
            ("map_extent", self.map_extent),
            ("rsu_coverage_radius", self.rsu_coverage_radius),
            ("carrier_frequency", self.carrier_frequency),
            ("channel_gain_coeff", self.channel_gain_coeff),
            ("light_speed", self.light_speed),
            ("uplink_bandwidth", self.uplink_bandwidth),
            ("downlink_bandwidth", self.downlink_bandwidth),
            ("inter_rsu_bandwidth", self.inter_rsu_bandwidth),
            ("vehicle_tx_power", self.vehicle_tx_power),
            ("noise_power", self.noise_power),
            ("cycles_per_bit", self.cycles_per_bit),
            ("slot_duration", self.slot_duration),
            ("beacon_packets", self.beacon_packets),
        ]
        for name, value in positive:
            if value <= 0:
                raise ConfigError(f"world.{name} must be > 0, got {value!r}")
        for speed in self.cpu_speeds():
            if speed <= 0:
                raise ConfigError("world.cpu_speed entries must be > 0")
        if self.rsu_positions is not None and len(self.rsu_positions) != self.num_rsus:
            raise ConfigError("world.rsu_positions must list one (x, y) per RSU")
        if not 0.0 <= self.attack_frequency <= 1.0:
            raise ConfigError("world.attack_frequency must lie in [0, 1]")
        if not 0.0 < self.attack_degradation <= 1.0:
            raise ConfigError("world.attack_degradation must lie in (0, 1]")
        if not 0.0 < self.reputation_threshold < 1.0:
            raise ConfigError("world.reputation_threshold must lie in (0, 1)")
        if self.mtd_latency < 0:
            raise ConfigError("world.mtd_latency must be >= 0")
        if self.episode_length < 1:
            raise ConfigError("world.episode_length must be >= 1")
        if any(not 0 <= t < self.num_rsus for t in self.attack_targets):
            raise ConfigError("world.attack_targets must index existing RSUs")
        if not 0.0 < self.beacon_success_rate <= 1.0:
            raise ConfigError("world.beacon_success_rate must lie in (0, 1]")
        for name in ("vehicle_speed_range", "con_data_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"world.{name} must be 0 < low <= high")
        for name in ("raw_fraction", "compute_fraction", "result_fraction"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"world.{name} must be > 0")
        if self.max_load() < 1:
            raise ConfigError("world.rsu_max_load must be >= 1")

    def cpu_speeds(self) -> list:
        """Per-RSU CPU speeds in cycles/s (scalar configs are broadcast)."""
        if isinstance(self.cpu_speed, (int, float)):
            return [float(self.cpu_speed)] * self.num_rsus
        if len(self.cpu_speed) != self.num_rsus:
            raise ConfigError("world.cpu_speed list must have one entry per RSU")
        return [float(c) for c in self.cpu_speed]

    def max_load(self) -> int:
        if self.rsu_max_load is None:
            return math.ceil(2 * self.num_vehicles / self.num_rsus)
        return int(self.rsu_max_load)

    def rsu_layout(self) -> list:
        """RSU coordinates; defaults to a near-square grid over the map."""
        if self.rsu_positions is not None:
            return [[float(x), float(y)] for x, y in self.rsu_positions]
        cols = math.ceil(math.sqrt(self.num_rsus))
        rows = math.ceil(self.num_rsus / cols)
        out = []
        for i in range(self.num_rsus):
            r, c = divmod(i, cols)
            out.append([
                self.map_extent * (c + 0.5) / cols,
                self.map_extent * (r + 0.5) / rows,
            ])
        return out


@dataclass
class TrustConfig:
    """Parameters of the planned-behavior reputation model."""

    attitude_prior_pos: float = 1.0
    attitude_prior_neg: float = 1.0
    norm_prior_pos: float = 1.0
    norm_prior_neg: float = 1.0
    delivery_weight: float = 0.5          # received vs forwarded packet mix
    control_mix: float = 0.5              # reliability vs efficiency mix
    weight_attitude: float = 0.33
    weight_norm: float = 0.33
    weight_control: float = 0.33
    update_rate: float = 0.7              # smoothing toward the fresh estimate
    window_slots: int = 10                # latency window length
    tolerable_latency_range: list = field(default_factory=lambda: [8.0, 12.0])  # s
    initial_reputation: float = 0.7

    def validate(self) -> None:
        for name in ("attitude_prior_pos", "attitude_prior_neg",
                     "norm_prior_pos", "norm_prior_neg"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"trust.{name} must be > 0")
        for name in ("delivery_weight", "control_mix", "update_rate"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"trust.{name} must lie in (0, 1)")
        for name in ("weight_attitude", "weight_norm", "weight_control"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"trust.{name} must be > 0")
        if self.window_slots < 1:
            raise ConfigError("trust.window_slots must be >= 1")
        lo, hi = self.tolerable_latency_range
        if not 0 < lo <= hi:
            raise ConfigError("trust.tolerable_latency_range must be 0 < low <= high")
        if not 0.0 <= self.initial_reputation <= 1.0:
            raise ConfigError("trust.initial_reputation must lie in [0, 1]")

    def normalized_weights(self) -> tuple:
        """Factor weights rescaled to sum exactly to one."""
        total = self.weight_attitude + self.weight_norm + self.weight_control
        return (self.weight_attitude / total,
                self.weight_norm / total,
                self.weight_control / total)


#: Supported training/evaluation modes. ``full`` keeps both the confidence
#: weight and the consistency regularizer; the other modes switch pieces off.
MODES = ("full", "no-confidence", "no-consistency", "plain-diffusion", "random")

#: Sweepable axes and the world/trainer keys they drive.
SWEEP_AXES = ("data-size", "bandwidth", "compute", "attack-frequency",
              "denoising-steps")


@dataclass
class TrainerConfig:
    """Hyperparameters of the diffusion-policy actor-critic learner."""

    discount: float = 0.95
    soft_update_rate: float = 0.005
    confidence_sensitivity: float = 1.0   # scales the confidence weight
    consistency_weight: float = 1.0       # scales the denoising regularizer
    batch_size: int = 256
    epochs: int = 200
    trajectories_per_epoch: int = 1
    grad_steps_per_epoch: int = 50
    denoising_steps: int = 5
    beta_min: float = 0.1
    beta_max: float = 10.0
    actor_lr: float = 1.0e-4
    critic_lr: float = 1.0e-3
    buffer_capacity: int = 1_000_000
    actor_hidden: list = field(default_factory=lambda: [256, 256, 256])
    critic_hidden: list = field(default_factory=lambda: [256, 256])
    embed_dim: int = 16
    stop_confidence_gradient: bool = False
    guide_with_min_q: bool = False
    eval_episodes: int = 5
    mode: str = "full"

    def validate(self) -> None:
        if not 0.0 < self.discount < 1.0:
            raise ConfigError("trainer.discount must lie in (0, 1)")
        if not 0.0 < self.soft_update_rate < 1.0:
            raise ConfigError("trainer.soft_update_rate must lie in (0, 1)")
        if self.confidence_sensitivity < 0 or self.consistency_weight < 0:
            raise ConfigError("trainer confidence/consistency weights must be >= 0")
        for name in ("batch_size", "denoising_steps", "buffer_capacity",
                     "embed_dim", "trajectories_per_epoch", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"trainer.{name} must be >= 1")
        for name in ("epochs", "grad_steps_per_epoch"):
            if getattr(self, name) < 0:
                raise ConfigError(f"trainer.{name} must be >= 0")
        if not 0.0 < self.beta_min < self.beta_max:
            raise ConfigError("trainer noise bounds must satisfy 0 < beta_min < beta_max")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ConfigError("trainer learning rates must be > 0")
        if self.mode not in MODES:
            raise ConfigError(f"trainer.mode must be one of {MODES}")


@dataclass
class ExperimentConfig:
    """What the harness should run and where results go."""

    mode: str = "full"
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    sweep_axis: str | None = None
    sweep_values: list = field(default_factory=list)
    trace_reputation: bool = False
    out_dir: str = "runs"

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"experiment.mode must be one of {MODES}")
        if not self.seeds:
            raise ConfigError("experiment.seeds must not be empty")
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"experiment.sweep_axis must be one of {SWEEP_AXES}")
        if self.sweep_axis is not None and not self.sweep_values:
            raise ConfigError("experiment.sweep_values must not be empty for a sweep")


@dataclass
class FullConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    trust: TrustConfig = field(default_factory=TrustConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self) -> None:
        self.world.validate()
        self.trust.validate()
        self.trainer.validate()
        self.experiment.validate()


_SECTIONS = {
    "world": WorldConfig,
    "trust": TrustConfig,
    "trainer": TrainerConfig,
    "experiment": ExperimentConfig,
}


def _parse_value(text: str, key: str):
    text = text.strip()
    if text.lower() in ("none", "null", "auto"):
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    # bare word: accept as a string (mode names etc.)
    if text and all(ch.isalnum() or ch in "-_." for ch in text):
        return text
    raise ConfigError(f"cannot parse value for {key!r}: {text!r}")


def parse_config_text(text: str) -> FullConfig:
    """Build a validated :class:`FullConfig` from flat key = value text."""
    sections = {name: {} for name in _SECTIONS}
    known = {
        name: {f.name for f in fields(cls)} for name, cls in _SECTIONS.items()
    }
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} needs a section prefix")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {section!r} in {key!r}")
        if name not in known[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if name in sections[section]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        sections[section][name] = _parse_value(value, key)

    cfg = FullConfig(
        world=WorldConfig(**sections["world"]),
        trust=TrustConfig(**sections["trust"]),
        trainer=TrainerConfig(**sections["trainer"]),
        experiment=ExperimentConfig(**sections["experiment"]),
    )
    try:
        cfg.validate()
    except TypeError as exc:  # e.g. list passed where scalar expected
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> FullConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        return parse_config_text(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def canonical_items(cfg: FullConfig) -> list:
    """Sorted (dotted key, value) pairs over every resolved parameter."""
    items = []
    for section, obj in (("world", cfg.world), ("trust", cfg.trust),
                         ("trainer", cfg.trainer), ("experiment", cfg.experiment)):
        for f in fields(obj):
            items.append((f"{section}.{f.name}", getattr(obj, f.name)))
    return sorted(items)


def manifest_text(cfg: FullConfig, mode: str, seed: int,
                  sweep_axis: str | None = None, sweep_value=None) -> str:
    """Full resolved parameter listing plus a content hash for exact replay."""
    lines = [f"{key} = {json.dumps(value)}" for key, value in canonical_items(cfg)]
    lines.append(f"run.mode = {json.dumps(mode)}")
    lines.append(f"run.seed = {seed}")
    lines.append(f"run.sweep_axis = {json.dumps(sweep_axis)}")
    lines.append(f"run.sweep_value = {json.dumps(sweep_value)}")
    body = "\n".join(lines)
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return body + f"\nrun.content_hash = {json.dumps(digest)}\n"


def parse_manifest(text: str) -> dict:
    """Inverse of :func:`manifest_text`: dotted key -> parsed value."""
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, value = line.split("=", 1)
        out[key.strip()] = json.loads(value.strip())
    return out


def config_from_manifest(entries: dict) -> FullConfig:
    """Rebuild the full config recorded in a manifest."""
    kwargs = {name: {} for name in _SECTIONS}
    for key, value in entries.items():
        if key.startswith("run."):
            continue
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"manifest names unknown section {section!r}")
        kwargs[section][name] = value
    cfg = FullConfig(
        world=WorldConfig(**kwargs["world"]),
        trust=TrustConfig(**kwargs["trust"]),
        trainer=TrainerConfig(**kwargs["trainer"]),
        experiment=ExperimentConfig(**kwargs["experiment"]),
    )
    cfg.validate()
    return cfg


def apply_sweep_value(cfg: FullConfig, axis: str, value) -> FullConfig:
    """Return a copy of ``cfg`` with one sweep axis pinned to ``value``."""
    if axis == "data-size":
        world = replace(cfg.world, con_data_range=[float(value), float(value)])
        return replace(cfg, world=world)
    if axis == "bandwidth":
        world = replace(cfg.world, uplink_bandwidth=float(value),
                        downlink_bandwidth=float(value))
        return replace(cfg, world=world)
    if axis == "compute":
        world = replace(cfg.world, cpu_speed=float(value))
        return replace(cfg, world=world)
    if axis == "attack-frequency":
        world = replace(cfg.world, attack_frequency=float(value))
        return replace(cfg, world=world)
    if axis == "denoising-steps":
        trainer = replace(cfg.trainer, denoising_steps=int(value))
        return replace(cfg, trainer=trainer)
    raise ConfigError(f"unknown sweep axis {axis!r}")
