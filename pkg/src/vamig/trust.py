"""Planned-behavior reputation model for road-side units.

Each user scores each RSU by blending three factors:

* attitude      -- posterior mean of the user's own positive-evaluation rate,
* social norm   -- the same posterior over every *other* user's evaluations,
* perceived control -- beacon-derived delivery reliability mixed with recent
  migration efficiency against the user's own latency tolerance.

The blended score is smoothed exponentially slot over slot.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import UnknownEntityError


def beta_mean(pos: float, neg: float, prior_pos: float, prior_neg: float) -> float:
    """Posterior mean success rate under a Beta prior with binary outcomes."""
    return (prior_pos + pos) / (prior_pos + prior_neg + pos + neg)


def transmission_reliability(received_ok, received_fail, forwarded_ok,
                             forwarded_fail, delivery_weight: float):
    """Signed packet-delivery score in [-1, 1]; ``None`` when no evidence."""
    received = received_ok + received_fail
    forwarded = forwarded_ok + forwarded_fail
    if received == 0 or forwarded == 0:
        return None
    rate_d = (received_ok - received_fail) / received
    rate_f = (forwarded_ok - forwarded_fail) / forwarded
    return delivery_weight * rate_d + (1.0 - delivery_weight) * rate_f


def migration_efficiency(mean_total_latency: float, tolerable_latency: float) -> float:
    """How comfortably recent service latency sits under the user's tolerance."""
    return max(0.0, 1.0 - mean_total_latency / tolerable_latency)


def perceived_control(reliability: float, efficiency: float, mix: float) -> float:
    """Blend of reliability and efficiency, clamped into [0, 1].

    Reliability can be negative (more failures than successes), so the blend
    is clamped to keep the final reputation inside [0, 1].
    """
    value = mix * reliability + (1.0 - mix) * efficiency
    return min(1.0, max(0.0, value))


def behavioral_intention(attitude: float, norm: float, control: float,
                         weights) -> float:
    """Weighted blend of the three factors (weights must sum to one)."""
    w_a, w_s, w_p = weights
    return w_a * attitude + w_s * norm + w_p * control


def smooth_update(old: float, near: float, rate: float) -> float:
    """Move the stored score toward the fresh estimate at the given rate."""
    return rate * near + (1.0 - rate) * old


class EvaluationLedger:
    """Per (user, RSU) positive/negative interaction counts."""

    def __init__(self, num_users: int, num_rsus: int,
                 prior_pos: float = 1.0, prior_neg: float = 1.0,
                 norm_prior_pos: float = 1.0, norm_prior_neg: float = 1.0):
        self.num_users = num_users
        self.num_rsus = num_rsus
        self.prior_pos = prior_pos
        self.prior_neg = prior_neg
        self.norm_prior_pos = norm_prior_pos
        self.norm_prior_neg = norm_prior_neg
        self.pos = np.zeros((num_users, num_rsus), dtype=np.int64)
        self.neg = np.zeros((num_users, num_rsus), dtype=np.int64)

    def _check(self, user: int, rsu: int) -> None:
        if not (0 <= user < self.num_users):
            raise UnknownEntityError(f"user {user} does not exist")
        if not (0 <= rsu < self.num_rsus):
            raise UnknownEntityError(f"RSU {rsu} does not exist")

    def record(self, user: int, rsu: int, positive: bool) -> None:
        self._check(user, rsu)
        if positive:
            self.pos[user, rsu] += 1
        else:
            self.neg[user, rsu] += 1

    def attitude(self, user: int, rsu: int) -> float:
        self._check(user, rsu)
        return beta_mean(self.pos[user, rsu], self.neg[user, rsu],
                         self.prior_pos, self.prior_neg)

    def subjective_norm(self, user: int, rsu: int) -> float:
        self._check(user, rsu)
        pos = int(self.pos[:, rsu].sum() - self.pos[user, rsu])
        neg = int(self.neg[:, rsu].sum() - self.neg[user, rsu])
        return beta_mean(pos, neg, self.norm_prior_pos, self.norm_prior_neg)


class BeaconStats:
    """Per-RSU beacon packet counts and a sliding window of latency samples.

    Packet counts accumulate over the episode; latency samples older than
    ``window_slots`` are evicted.
    """

    def __init__(self, num_rsus: int, window_slots: int):
        self.num_rsus = num_rsus
        self.window_slots = window_slots
        self.received_ok = np.zeros(num_rsus, dtype=np.int64)
        self.received_fail = np.zeros(num_rsus, dtype=np.int64)
        self.forwarded_ok = np.zeros(num_rsus, dtype=np.int64)
        self.forwarded_fail = np.zeros(num_rsus, dtype=np.int64)
        self.latency_windows = [deque() for _ in range(num_rsus)]

    def _check(self, rsu: int) -> None:
        if not (0 <= rsu < self.num_rsus):
            raise UnknownEntityError(f"RSU {rsu} does not exist")

    def record_beacons(self, rsu: int, received_ok: int, received_fail: int,
                       forwarded_ok: int, forwarded_fail: int) -> None:
        self._check(rsu)
        if min(received_ok, received_fail, forwarded_ok, forwarded_fail) < 0:
            raise ValueError("beacon counts must be non-negative")
        self.received_ok[rsu] += received_ok
        self.received_fail[rsu] += received_fail
        self.forwarded_ok[rsu] += forwarded_ok
        self.forwarded_fail[rsu] += forwarded_fail

    def record_latency(self, rsu: int, slot: int, totals) -> None:
        self._check(rsu)
        window = self.latency_windows[rsu]
        window.append((slot, [float(t) for t in totals]))
        self._evict(rsu, slot)

    def _evict(self, rsu: int, now: int) -> None:
        window = self.latency_windows[rsu]
        while window and window[0][0] <= now - self.window_slots:
            window.popleft()

    def reliability(self, rsu: int, delivery_weight: float):
        self._check(rsu)
        return transmission_reliability(
            int(self.received_ok[rsu]), int(self.received_fail[rsu]),
            int(self.forwarded_ok[rsu]), int(self.forwarded_fail[rsu]),
            delivery_weight)

    def mean_latency(self, rsu: int, now: int):
        """Mean of windowed latency samples, or ``None`` if the window is empty."""
        self._check(rsu)
        self._evict(rsu, now)
        samples = [t for _, totals in self.latency_windows[rsu] for t in totals]
        if not samples:
            return None
        return sum(samples) / len(samples)


class TrustEngine:
    """Maintains the smoothed per-(user, RSU) reputation matrix.

    Scores refresh only for RSUs that produced fresh evidence in the slot;
    idle RSUs keep their last value rather than drifting on stale data.
    """

    #: Neutral stand-ins when a factor has no evidence yet.
    NEUTRAL_RELIABILITY = 0.0
    NEUTRAL_EFFICIENCY = 0.5

    def __init__(self, num_users: int, num_rsus: int, cfg, tolerable_latency):
        self.num_users = num_users
        self.num_rsus = num_rsus
        self.cfg = cfg
        self.tolerable_latency = np.asarray(tolerable_latency, dtype=np.float64)
        if self.tolerable_latency.shape != (num_users,):
            raise ValueError("one tolerable latency per user required")
        self.weights = cfg.normalized_weights()
        self.ledger = EvaluationLedger(
            num_users, num_rsus,
            prior_pos=cfg.attitude_prior_pos, prior_neg=cfg.attitude_prior_neg,
            norm_prior_pos=cfg.norm_prior_pos, norm_prior_neg=cfg.norm_prior_neg)
        self.beacons = BeaconStats(num_rsus, cfg.window_slots)
        self.reputation = np.full((num_users, num_rsus),
                                  cfg.initial_reputation, dtype=np.float64)

    def record_evaluation(self, user: int, rsu: int, positive: bool) -> None:
        self.ledger.record(user, rsu, positive)

    def record_beacons(self, rsu: int, received_ok: int, received_fail: int,
                       forwarded_ok: int, forwarded_fail: int) -> None:
        self.beacons.record_beacons(rsu, received_ok, received_fail,
                                    forwarded_ok, forwarded_fail)

    def record_latency(self, rsu: int, slot: int, totals) -> None:
        self.beacons.record_latency(rsu, slot, totals)

    def fresh_score(self, user: int, rsu: int, now: int) -> float:
        """Instantaneous reputation estimate from the current evidence."""
        attitude = self.ledger.attitude(user, rsu)
        norm = self.ledger.subjective_norm(user, rsu)
        rel = self.beacons.reliability(rsu, self.cfg.delivery_weight)
        if rel is None:
            rel = self.NEUTRAL_RELIABILITY
        mean_lat = self.beacons.mean_latency(rsu, now)
        if mean_lat is None:
            eff = self.NEUTRAL_EFFICIENCY
        else:
            eff = migration_efficiency(mean_lat, float(self.tolerable_latency[user]))
        control = perceived_control(rel, eff, self.cfg.control_mix)
        return behavioral_intention(attitude, norm, control, self.weights)

    def refresh(self, now: int, active_rsus) -> None:
        """Smooth the stored scores toward fresh estimates for active RSUs."""
        for rsu in active_rsus:
            for user in range(self.num_users):
                near = self.fresh_score(user, rsu, now)
                self.reputation[user, rsu] = smooth_update(
                    self.reputation[user, rsu], near, self.cfg.update_rate)

    def reputation_matrix(self) -> np.ndarray:
        return self.reputation.copy()
