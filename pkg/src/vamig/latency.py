"""Channel model and per-slot migration latency accounting.

All data sizes are Mbit and all link rates Mbit/s, so transmission times are
plain ratios. CPU work converts Mbit to bits before multiplying by the
cycles-per-bit cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import AllocationError, DegenerateGeometryError

BITS_PER_MBIT = 1.0e6

#: Distances shorter than this are clamped; the path-loss law diverges at 0.
MIN_DISTANCE_M = 1.0


def channel_gain(distance: float, cfg) -> float:
    """Free-space path-loss gain at the given vehicle-RSU distance (m)."""
    if distance <= 0.0:
        raise DegenerateGeometryError(
            f"vehicle-RSU distance must be > 0, got {distance!r}")
    wave = cfg.light_speed / (4.0 * math.pi * cfg.carrier_frequency * distance)
    return cfg.channel_gain_coeff * wave * wave


def link_rate(bandwidth: float, tx_power: float, gain: float, noise: float) -> float:
    """Shannon-style throughput (Mbit/s) for the given SNR ingredients."""
    return bandwidth * math.log2(1.0 + tx_power * gain / noise)


@dataclass
class LatencyBreakdown:
    """Per-vehicle, per-slot latency components (all seconds)."""

    t_uc: float = 0.0    # uploading the agent construction data
    t_dep: float = 0.0   # deploying the agent on the host
    t_um: float = 0.0    # uploading the sensor/interaction stream
    t_pro: float = 0.0   # processing on the host
    t_down: float = 0.0  # downloading results
    t_mig: float = 0.0   # replicating construction data to the next host
    t_ext: float = 0.0   # defense reconfiguration overhead
    total: float = 0.0


def total_latency(parts: LatencyBreakdown, has_replica: bool, mtd_active: bool) -> float:
    """Combine the slot's components into the vehicle's total latency.

    Upload and deployment are skipped when the host already holds a replica;
    processing overlaps with the backbone replication, so only the longer of
    the two counts; the defense overhead applies only when it ran.
    """
    keep = 0.0 if has_replica else 1.0
    defend = 1.0 if mtd_active else 0.0
    return (keep * (parts.t_uc + parts.t_dep)
            + parts.t_um
            + parts.t_down
            + max(parts.t_pro, parts.t_mig)
            + defend * parts.t_ext)


def latency_breakdown(vehicle: int, host: int, target: int, alpha: float,
                      state, cfg) -> LatencyBreakdown:
    """Compute the slot's latency components for one hosted vehicle.

    ``alpha`` is the host's computing share for this vehicle. An attacked,
    undefended host serves with degraded wireless bandwidth and CPU speed.
    The backbone replication cost applies only when the pre-migration target
    differs from the current host.
    """
    if alpha <= 0.0:
        raise AllocationError(
            f"vehicle {vehicle} hosted on RSU {host} has computing share {alpha}")
    degraded = bool(state.attack_flags[host]) and not bool(state.mtd_flags[host])
    scale = cfg.attack_degradation if degraded else 1.0

    dx = state.positions[vehicle][0] - state.rsu_xy[host][0]
    dy = state.positions[vehicle][1] - state.rsu_xy[host][1]
    distance = max(math.hypot(dx, dy), MIN_DISTANCE_M)
    gain = channel_gain(distance, cfg)
    rate_up = link_rate(cfg.uplink_bandwidth * scale, cfg.vehicle_tx_power,
                        gain, cfg.noise_power)
    rate_down = link_rate(cfg.downlink_bandwidth * scale, cfg.vehicle_tx_power,
                          gain, cfg.noise_power)
    cpu = state.cpu_speeds[host] * scale

    d_con = state.con_data[vehicle]
    parts = LatencyBreakdown(
        t_uc=d_con / rate_up,
        t_dep=cfg.cycles_per_bit * d_con * BITS_PER_MBIT / (alpha * cpu),
        t_um=state.raw_data[vehicle] / rate_up,
        t_pro=cfg.cycles_per_bit * state.com_data[vehicle] * BITS_PER_MBIT / (alpha * cpu),
        t_down=state.res_data[vehicle] / rate_down,
        t_mig=0.0 if target == host else d_con / cfg.inter_rsu_bandwidth,
        t_ext=cfg.mtd_latency if state.mtd_flags[host] else 0.0,
    )
    parts.total = total_latency(parts, bool(state.has_replica[vehicle][host]),
                                bool(state.mtd_flags[host]))
    return parts


def reward(totals) -> float:
    """Immediate reward for one slot: negated sum of per-vehicle latencies."""
    out = 0.0
    for t in totals:
        out -= t
    return out
