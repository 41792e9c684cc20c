"""Single SX1301-class gateway: demodulator pool, capture, lock and downlink."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .phy import (
    SF_PROFILES,
    LinkBudgetParams,
    TransmissionAttempt,
    compute_sinr,
    interference_sum,
    symbol_time,
    time_on_air,
)


class Verdict(str, Enum):
    DELIVERED = "delivered"
    FAIL_SENSITIVITY = "fail_sensitivity"
    FAIL_SINR = "fail_sinr"
    FAIL_CAPTURE = "fail_capture"
    FAIL_LOCKED = "fail_locked"
    FAIL_NO_DEMODULATOR = "fail_no_demodulator"
    FAIL_GATEWAY_TRANSMITTING = "fail_gateway_transmitting"


class GatewayInvariantError(RuntimeError):
    pass


@dataclass
class DemodulatorSlot:
    attempt: TransmissionAttempt
    locked_at: float

    @property
    def channel(self) -> int:
        return self.attempt.channel

    @property
    def sf(self) -> int:
        return self.attempt.sf

    def is_locked(self, now: float) -> bool:
        return now >= self.locked_at


@dataclass(frozen=True)
class ReceptionOutcome:
    attempt_id: int
    node_id: int
    channel: int
    sf: int
    time: float
    verdict: Verdict
    measured_rssi_dbm: float
    measured_sinr_db: float

    @property
    def delivered(self) -> bool:
        return self.verdict is Verdict.DELIVERED


@dataclass(frozen=True)
class ScheduledDownlink:
    node_id: int
    window: int
    sf: int
    start: float
    end: float


class DemodulatorPool:
    """At most ``capacity`` live slots, at most one per (channel, sf) pair."""

    def __init__(self, capacity: int = 8):
        self.capacity = capacity
        self._slots: dict[int, DemodulatorSlot] = {}
        self._by_pair: dict[tuple[int, int], int] = {}

    def __len__(self) -> int:
        return len(self._slots)

    @property
    def occupied_count(self) -> int:
        return len(self._slots)

    @property
    def full(self) -> bool:
        return len(self._slots) >= self.capacity

    def __contains__(self, attempt_id: int) -> bool:
        return attempt_id in self._slots

    def get(self, attempt_id: int) -> DemodulatorSlot:
        return self._slots[attempt_id]

    def find_pair(self, channel: int, sf: int) -> Optional[DemodulatorSlot]:
        aid = self._by_pair.get((channel, sf))
        return None if aid is None else self._slots[aid]

    def add(self, slot: DemodulatorSlot) -> None:
        key = (slot.channel, slot.sf)
        if key in self._by_pair:
            raise GatewayInvariantError(f"pair {key} already demodulating")
        self._slots[slot.attempt.attempt_id] = slot
        self._by_pair[key] = slot.attempt.attempt_id
        self._check()

    def remove(self, attempt_id: int) -> DemodulatorSlot:
        slot = self._slots.pop(attempt_id)
        del self._by_pair[(slot.channel, slot.sf)]
        self._check()
        return slot

    def slots(self) -> list[DemodulatorSlot]:
        return list(self._slots.values())

    def _check(self) -> None:
        if len(self._slots) > self.capacity or len(self._by_pair) != len(self._slots):
            raise GatewayInvariantError(
                f"demodulator pool corrupted: {len(self._slots)} slots, capacity {self.capacity}"
            )


class Gateway:
    """Reception pipeline applying sensitivity, capture, lock, pool and SINR checks.

    Verdicts for signals rejected at arrival are fixed immediately; signals
    holding a demodulator are judged on SINR when they end. Interference is
    accounted over every attempt that overlapped the signal at any point.
    """

    def __init__(
        self,
        link: LinkBudgetParams | None = None,
        n_demodulators: int = 8,
        half_duplex: bool = True,
        downlink_payload_bytes: int = 12,
    ):
        self.link = link or LinkBudgetParams()
        self.noise_dbm = self.link.noise_dbm
        self.pool = DemodulatorPool(n_demodulators)
        self.half_duplex = half_duplex
        self.downlink_payload_bytes = downlink_payload_bytes
        self._verdicts: dict[int, Verdict] = {}
        self._airborne: dict[int, TransmissionAttempt] = {}
        self._overlaps: dict[int, list[TransmissionAttempt]] = {}
        self._downlinks: list[tuple[float, float]] = []

    # -- uplink -----------------------------------------------------------
    def on_transmission_start(self, attempt: TransmissionAttempt, now: float) -> Optional[Verdict]:
        """Admit a new signal. Returns its verdict if rejected, None if demodulating."""
        aid = attempt.attempt_id
        if aid in self._verdicts or aid in self.pool or aid in self._overlaps:
            raise GatewayInvariantError(f"duplicate attempt id {aid}")
        if abs(attempt.start - now) > 1e-12:
            raise GatewayInvariantError("attempt must start at the current time")
        mine = []
        for other in self._airborne.values():
            self._overlaps[other.attempt_id].append(attempt)
            mine.append(other)
        self._overlaps[aid] = mine
        self._airborne[aid] = attempt

        if self.half_duplex and self.is_transmitting(now):
            return self._reject(attempt, Verdict.FAIL_GATEWAY_TRANSMITTING)
        if attempt.rssi_dbm < SF_PROFILES[attempt.sf].sensitivity_dbm:
            return self._reject(attempt, Verdict.FAIL_SENSITIVITY)
        existing = self.pool.find_pair(attempt.channel, attempt.sf)
        if existing is not None:
            return self.arbitrate_capture(existing, attempt, now)
        if self.pool.full:
            return self._reject(attempt, Verdict.FAIL_NO_DEMODULATOR)
        self.pool.add(DemodulatorSlot(attempt, self._lock_time(attempt)))
        return None

    def arbitrate_capture(
        self, slot: DemodulatorSlot, incoming: TransmissionAttempt, now: float
    ) -> Optional[Verdict]:
        existing = slot.attempt
        if slot.is_locked(now):
            return self._reject(incoming, Verdict.FAIL_LOCKED)
        margin = incoming.rssi_dbm - existing.rssi_dbm
        tau_c = self.link.capture_threshold_db
        if margin >= tau_c:
            self.pool.remove(existing.attempt_id)
            self._verdicts[existing.attempt_id] = Verdict.FAIL_CAPTURE
            self.pool.add(DemodulatorSlot(incoming, self._lock_time(incoming)))
            return None
        if -margin >= tau_c:
            return self._reject(incoming, Verdict.FAIL_CAPTURE)
        # comparable powers before lock: the demodulator flips between both
        self.pool.remove(existing.attempt_id)
        self._verdicts[existing.attempt_id] = Verdict.FAIL_CAPTURE
        return self._reject(incoming, Verdict.FAIL_CAPTURE)

    def on_transmission_end(self, attempt: TransmissionAttempt, now: float) -> ReceptionOutcome:
        aid = attempt.attempt_id
        if aid not in self._airborne:
            raise GatewayInvariantError(f"attempt {aid} is not airborne")
        del self._airborne[aid]
        sinr = self._sinr(attempt)
        if aid in self.pool:
            verdict = self.finalize_reception(self.pool.get(aid), now, sinr)
        else:
            verdict = self._verdicts.pop(aid)
        del self._overlaps[aid]
        return ReceptionOutcome(
            aid, attempt.node_id, attempt.channel, attempt.sf, now, verdict, attempt.rssi_dbm, sinr
        )

    def finalize_reception(
        self, slot: DemodulatorSlot, now: float, sinr_db: Optional[float] = None
    ) -> Verdict:
        attempt = slot.attempt
        if attempt.attempt_id not in self.pool:
            raise GatewayInvariantError("finalizing a slot that is not live")
        if sinr_db is None:
            sinr_db = self._sinr(attempt)
        self.pool.remove(attempt.attempt_id)
        profile = SF_PROFILES[attempt.sf]
        if attempt.rssi_dbm < profile.sensitivity_dbm:
            return Verdict.FAIL_SENSITIVITY
        if sinr_db < profile.demod_threshold_db:
            return Verdict.FAIL_SINR
        return Verdict.DELIVERED

    # -- downlink ---------------------------------------------------------
    def is_transmitting(self, now: float) -> bool:
        i = bisect.bisect_right(self._downlinks, (now, float("inf")))
        return i > 0 and self._downlinks[i - 1][1] > now

    def busy_intervals(self) -> list[tuple[float, float]]:
        return list(self._downlinks)

    def downlink_airtime(self, dsf: int) -> float:
        link = self.link
        return time_on_air(
            dsf, self.downlink_payload_bytes, link.preamble_symbols, link.bandwidth_hz, link.coding_rate
        )

    def schedule_downlink(
        self, node_id: int, dsf: int, window_symbols: int, rx1_open: float, rx2_open: float
    ) -> Optional[ScheduledDownlink]:
        """Reserve the transmitter in RX1, else RX2. None if neither window fits.

        The downlink must start strictly before its receive window closes.
        """
        self._prune(rx1_open)
        airtime = self.downlink_airtime(dsf)
        window = window_symbols * symbol_time(dsf, self.link.bandwidth_hz)
        for index, opens in ((1, rx1_open), (2, rx2_open)):
            start = self._earliest_free(opens, airtime)
            if start < opens + window:
                bisect.insort(self._downlinks, (start, start + airtime))
                return ScheduledDownlink(node_id, index, dsf, start, start + airtime)
        return None

    def on_downlink_start(self, now: float) -> list[int]:
        """Half-duplex: every signal being demodulated is lost. Returns their ids."""
        if not self.half_duplex:
            return []
        killed = []
        for slot in self.pool.slots():
            aid = slot.attempt.attempt_id
            self.pool.remove(aid)
            self._verdicts[aid] = Verdict.FAIL_GATEWAY_TRANSMITTING
            killed.append(aid)
        return killed

    # -- helpers ----------------------------------------------------------
    def _reject(self, attempt: TransmissionAttempt, verdict: Verdict) -> Verdict:
        self._verdicts[attempt.attempt_id] = verdict
        return verdict

    def _lock_time(self, attempt: TransmissionAttempt) -> float:
        return attempt.start + self.link.lock_preambles * symbol_time(attempt.sf, self.link.bandwidth_hz)

    def _sinr(self, attempt: TransmissionAttempt) -> float:
        interference = interference_sum(attempt, self._overlaps[attempt.attempt_id])
        return compute_sinr(attempt.rssi_dbm, interference, self.noise_dbm)

    def _earliest_free(self, t: float, duration: float) -> float:
        start = t
        for a, b in self._downlinks:
            if a < start + duration and b > start:
                start = b
        return start

    def _prune(self, now: float) -> None:
        # keep intervals that might still matter for is_transmitting(now)
        while self._downlinks and self._downlinks[0][1] <= now - 10.0:
            self._downlinks.pop(0)
