"""Discrete-time vehicular edge environment.

Each slot the controller proposes, for every vehicle, logits over candidate
next hosts, per-host computing shares, and per-RSU defense toggles. The
environment decodes the proposal under load and reputation constraints,
samples attacks, prices the slot's latency for every vehicle, executes the
replications, feeds the trust engine, and moves the vehicles along their
waypoint paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EpisodeOverError
from .latency import LatencyBreakdown, latency_breakdown, reward
from .trust import TrustEngine


@dataclass
class WorldState:
    """Mutable per-slot ground truth of the simulator."""

    slot: int
    positions: np.ndarray        # (V, 2) m
    speeds: np.ndarray           # (V,) m/s
    waypoints: np.ndarray        # (V, 2) current target of each vehicle
    hosted: np.ndarray           # (V,) RSU index serving each vehicle
    has_replica: np.ndarray      # (V, S) bool
    loads: np.ndarray            # (S,) hosted-agent counts
    attack_flags: np.ndarray     # (S,) bool, this slot
    mtd_flags: np.ndarray        # (S,) bool, this slot
    con_data: np.ndarray         # (V,) Mbit, agent construction data
    raw_data: np.ndarray         # (V,) Mbit per slot
    com_data: np.ndarray         # (V,) Mbit-equivalent compute load per slot
    res_data: np.ndarray         # (V,) Mbit per slot
    rsu_xy: np.ndarray           # (S, 2) m
    cpu_speeds: np.ndarray       # (S,) cycles/s


@dataclass
class DecodedAction:
    """Executable decisions extracted from one raw action vector."""

    targets: np.ndarray          # (V,) chosen next host per vehicle
    shares: np.ndarray           # (V,) computing share at the current host
    mtd: np.ndarray              # (S,) defense toggles
    fallback_count: int = 0      # vehicles routed via the safety fallback
    target_probs: np.ndarray | None = None


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / e.sum()


def action_dim(num_vehicles: int, num_rsus: int) -> int:
    return 2 * num_vehicles * num_rsus + num_rsus


def observation_dim(num_vehicles: int, num_rsus: int) -> int:
    return 2 * num_vehicles + num_vehicles * num_rsus + num_rsus \
        + num_vehicles * num_rsus


def decode_action(raw: np.ndarray, state: WorldState, reputation: np.ndarray,
                  cfg) -> DecodedAction:
    """Map a raw [0, 1] action vector onto executable decisions.

    Per vehicle, hosts whose reputation is below the safety threshold or that
    sit at their load cap are masked before the softmax; the surviving argmax
    becomes the next host. A vehicle's current host never fails the load mask
    (staying adds no load). If every host is masked, the vehicle falls back
    to the highest-reputation host that still has load room and the fallback
    counter increments. Per RSU, the computing shares of its hosted vehicles
    are a softmax over their logits, so shares sum to one exactly.
    """
    v_count = len(state.hosted)
    s_count = len(state.loads)
    expected = action_dim(v_count, s_count)
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (expected,):
        raise ValueError(f"action vector must have shape ({expected},)")

    premig = raw[:v_count * s_count].reshape(v_count, s_count)
    alloc = raw[v_count * s_count:2 * v_count * s_count].reshape(v_count, s_count)
    mtd = raw[2 * v_count * s_count:] > 0.5

    cap = cfg.max_load()
    projected = state.loads.astype(np.int64).copy()
    targets = np.zeros(v_count, dtype=np.int64)
    probs = np.zeros((v_count, s_count))
    fallback = 0
    for v in range(v_count):
        host = int(state.hosted[v])
        trusted = reputation[v] >= cfg.reputation_threshold
        room = projected < cap
        room[host] = True
        mask = trusted & room
        if mask.any():
            logits = np.where(mask, premig[v], -np.inf)
            p = softmax(logits)
            target = int(np.argmax(p))
            probs[v] = p
        else:
            candidates = np.where(room)[0]
            target = int(candidates[np.argmax(reputation[v][candidates])])
            fallback += 1
        if target != host:
            projected[target] += 1
        targets[v] = target

    shares = np.zeros(v_count)
    for s in range(s_count):
        members = np.where(state.hosted == s)[0]
        if members.size:
            shares[members] = softmax(alloc[members, s])

    return DecodedAction(targets=targets, shares=shares, mtd=mtd,
                         fallback_count=fallback, target_probs=probs)


class MigrationEnv:
    """Seedable episode simulator with a flat observation/action interface."""

    def __init__(self, world_cfg, trust_cfg):
        world_cfg.validate()
        trust_cfg.validate()
        self.cfg = world_cfg
        self.trust_cfg = trust_cfg
        self.num_vehicles = world_cfg.num_vehicles
        self.num_rsus = world_cfg.num_rsus
        self.observation_dim = observation_dim(self.num_vehicles, self.num_rsus)
        self.action_dim = action_dim(self.num_vehicles, self.num_rsus)
        self._rsu_xy = np.asarray(world_cfg.rsu_layout(), dtype=np.float64)
        self._cpu = np.asarray(world_cfg.cpu_speeds(), dtype=np.float64)
        self.state: WorldState | None = None
        self.trust: TrustEngine | None = None
        self._rng = None
        self._done = True

    def reset(self, seed: int) -> np.ndarray:
        """Start a fresh episode; everything downstream derives from ``seed``."""
        cfg = self.cfg
        rng = np.random.default_rng(seed)
        self._rng = rng
        v, s = self.num_vehicles, self.num_rsus

        positions = rng.uniform(0.0, cfg.map_extent, size=(v, 2))
        speeds = rng.uniform(*cfg.vehicle_speed_range, size=v)
        waypoints = rng.uniform(0.0, cfg.map_extent, size=(v, 2))

        lo, hi = cfg.con_data_range
        con = rng.uniform(lo, hi, size=v)
        raw = rng.uniform(cfg.raw_fraction * lo, cfg.raw_fraction * hi, size=v)
        com = rng.uniform(cfg.compute_fraction * lo, cfg.compute_fraction * hi, size=v)
        res = rng.uniform(cfg.result_fraction * lo, cfg.result_fraction * hi, size=v)

        tol = rng.uniform(*self.trust_cfg.tolerable_latency_range, size=v)
        self.trust = TrustEngine(v, s, self.trust_cfg, tol)

        # nearest host with room; initial admission is balance-capped at
        # ceil(V/S) so no RSU starts pinned against its load limit
        hosted = np.zeros(v, dtype=np.int64)
        loads = np.zeros(s, dtype=np.int64)
        cap = min(cfg.max_load(), math.ceil(v / s))
        for i in range(v):
            d = np.hypot(positions[i, 0] - self._rsu_xy[:, 0],
                         positions[i, 1] - self._rsu_xy[:, 1])
            for candidate in np.argsort(d):
                if loads[candidate] < cap:
                    hosted[i] = candidate
                    loads[candidate] += 1
                    break

        self.state = WorldState(
            slot=0,
            positions=positions,
            speeds=speeds,
            waypoints=waypoints,
            hosted=hosted,
            has_replica=np.zeros((v, s), dtype=bool),
            loads=loads,
            attack_flags=np.zeros(s, dtype=bool),
            mtd_flags=np.zeros(s, dtype=bool),
            con_data=con, raw_data=raw, com_data=com, res_data=res,
            rsu_xy=self._rsu_xy,
            cpu_speeds=self._cpu,
        )
        self._done = False
        return self._observation()

    def step(self, raw_action):
        """Advance one slot; returns (observation, reward, done, info)."""
        if self._done or self.state is None:
            raise EpisodeOverError("reset() the environment before stepping")
        cfg = self.cfg
        state = self.state
        rng = self._rng
        v_count, s_count = self.num_vehicles, self.num_rsus

        decoded = decode_action(raw_action, state,
                                self.trust.reputation_matrix(), cfg)
        state.mtd_flags = decoded.mtd.copy()

        attacks = np.zeros(s_count, dtype=bool)
        for s in cfg.attack_targets:
            attacks[s] = rng.random() < cfg.attack_frequency
        state.attack_flags = attacks

        breakdowns: list[LatencyBreakdown] = []
        totals = np.zeros(v_count)
        for v in range(v_count):
            host = int(state.hosted[v])
            parts = latency_breakdown(v, host, int(decoded.targets[v]),
                                      float(decoded.shares[v]), state, cfg)
            breakdowns.append(parts)
            totals[v] = parts.total
        slot_reward = reward(totals)

        self._feed_trust(state, totals, attacks)

        # serving an agent leaves its construction data cached on the host
        for v in range(v_count):
            state.has_replica[v, state.hosted[v]] = True
        # execute replications and hand over hosting for the next slot
        for v in range(v_count):
            target = int(decoded.targets[v])
            if target != state.hosted[v]:
                state.has_replica[v, target] = True
            state.hosted[v] = target
        state.loads = np.bincount(state.hosted, minlength=s_count).astype(np.int64)

        self._move_vehicles()
        state.slot += 1
        self._done = state.slot >= cfg.episode_length

        info = {
            "breakdowns": breakdowns,
            "totals": totals,
            "fallback_count": decoded.fallback_count,
            "attack_flags": attacks.copy(),
            "mtd_flags": state.mtd_flags.copy(),
            "targets": decoded.targets.copy(),
            "shares": decoded.shares.copy(),
        }
        return self._observation(), slot_reward, self._done, info

    def _feed_trust(self, state: WorldState, totals, attacks) -> None:
        """Turn the slot's outcomes into beacon, latency, and rating evidence."""
        cfg = self.cfg
        rng = self._rng
        trust = self.trust
        active = []
        for s in range(self.num_rsus):
            members = np.where(state.hosted == s)[0]
            if members.size == 0:
                continue
            active.append(s)
            disrupted = bool(attacks[s]) and not bool(state.mtd_flags[s])
            p_ok = cfg.beacon_success_rate
            if disrupted:
                p_ok *= cfg.attack_degradation
            n = cfg.beacon_packets * members.size
            received_ok = int(rng.binomial(n, p_ok))
            forwarded_ok = int(rng.binomial(n, p_ok))
            trust.record_beacons(s, received_ok, n - received_ok,
                                 forwarded_ok, n - forwarded_ok)
            trust.record_latency(s, state.slot, totals[members])
            for v in members:
                positive = (not disrupted) and \
                    totals[v] <= trust.tolerable_latency[v]
                trust.record_evaluation(int(v), s, positive)
        trust.refresh(state.slot, active)

    def _move_vehicles(self) -> None:
        """Advance along waypoint paths; new waypoints come from the rng."""
        cfg = self.cfg
        state = self.state
        for v in range(self.num_vehicles):
            remaining = state.speeds[v] * cfg.slot_duration
            hops = 0
            while remaining > 1e-9 and hops < 64:
                hops += 1
                delta = state.waypoints[v] - state.positions[v]
                dist = math.hypot(delta[0], delta[1])
                if dist <= remaining:
                    state.positions[v] = state.waypoints[v].copy()
                    remaining -= dist
                    state.waypoints[v] = self._rng.uniform(
                        0.0, cfg.map_extent, size=2)
                else:
                    state.positions[v] = state.positions[v] + delta * (remaining / dist)
                    remaining = 0.0

    def _observation(self) -> np.ndarray:
        """Flat observation: positions, host one-hots, loads, reputations."""
        state = self.state
        cfg = self.cfg
        v, s = self.num_vehicles, self.num_rsus
        onehot = np.zeros((v, s))
        onehot[np.arange(v), state.hosted] = 1.0
        return np.concatenate([
            (state.positions / cfg.map_extent).ravel(),
            onehot.ravel(),
            state.loads / cfg.max_load(),
            self.trust.reputation_matrix().ravel(),
        ])
