"""Radio link budget for a single LoRa gateway.

All powers are carried in dBm and summed in mW. Every function here is pure;
randomness only enters through fading values drawn by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
SF_RANGE = (7, 8, 9, 10, 11, 12)


@dataclass(frozen=True)
class SfProfile:
    sf: int
    sensitivity_dbm: float
    demod_threshold_db: float
    data_rate_bps: float


SF_PROFILES: dict[int, SfProfile] = {
    7: SfProfile(7, -127.0, -7.5, 5469.0),
    8: SfProfile(8, -129.0, -10.0, 3125.0),
    9: SfProfile(9, -132.5, -12.5, 1758.0),
    10: SfProfile(10, -135.5, -15.0, 977.0),
    11: SfProfile(11, -138.0, -17.5, 537.0),
    12: SfProfile(12, -141.0, -20.0, 293.0),
}

# Inter-SF interference coefficients, rows/cols indexed by sf - 7.
ORTHOGONALITY = np.array(
    [
        [1.0, 0.104, 0.062, 0.041, 0.029, 0.021],
        [0.104, 1.0, 0.073, 0.043, 0.029, 0.020],
        [0.062, 0.073, 1.0, 0.052, 0.030, 0.020],
        [0.041, 0.043, 0.052, 1.0, 0.037, 0.021],
        [0.029, 0.029, 0.030, 0.037, 1.0, 0.026],
        [0.021, 0.020, 0.020, 0.021, 0.026, 1.0],
    ]
)
ORTHOGONALITY.setflags(write=False)


def _check_tables() -> None:
    profiles = [SF_PROFILES[sf] for sf in SF_RANGE]
    for lo, hi in zip(profiles, profiles[1:]):
        if not (
            hi.sensitivity_dbm < lo.sensitivity_dbm
            and hi.demod_threshold_db < lo.demod_threshold_db
            and hi.data_rate_bps < lo.data_rate_bps
        ):
            raise AssertionError(f"SF table not monotone between SF{lo.sf} and SF{hi.sf}")
    beta = ORTHOGONALITY
    if not (np.allclose(beta, beta.T) and np.all(np.diag(beta) == 1.0)):
        raise AssertionError("orthogonality matrix must be symmetric with unit diagonal")
    if np.any(beta[~np.eye(6, dtype=bool)] >= 0.11):
        raise AssertionError("off-diagonal orthogonality coefficients must be < 0.11")


_check_tables()


@dataclass(frozen=True)
class LinkBudgetParams:
    carrier_hz: float = 470e6
    antenna_gain: float = 1.0
    bandwidth_hz: float = 125e3
    coding_rate: float = 4 / 5
    noise_figure_db: float = 6.0
    noise_density_dbm_hz: float = -174.0
    capture_threshold_db: float = 6.0
    lock_preambles: int = 4
    preamble_symbols: int = 8

    def __post_init__(self):
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be positive")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        if not 0 < self.coding_rate <= 1:
            raise ValueError("coding_rate must be a ratio like 4/5")

    @property
    def noise_dbm(self) -> float:
        return noise_floor(self.bandwidth_hz, self.noise_figure_db, self.noise_density_dbm_hz)


@dataclass
class TransmissionAttempt:
    """One packet in the air, as seen by the receiver."""

    attempt_id: int
    node_id: int
    channel: int
    sf: int
    ptx_dbm: float
    start: float
    end: float
    rssi_dbm: float

    @property
    def rssi_mw(self) -> float:
        return dbm_to_mw(self.rssi_dbm)


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    return 10.0 * math.log10(mw)


def check_sf(sf: int) -> int:
    if sf not in SF_PROFILES:
        raise ValueError(f"spreading factor must be in 7..12, got {sf!r}")
    return int(sf)


def path_loss(carrier_hz: float, distance_m: float) -> float:
    """Free-space (Friis) power gain ``(c / (4 pi f d))**2``."""
    if distance_m <= 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    if carrier_hz <= 0:
        raise ValueError(f"carrier frequency must be positive, got {carrier_hz}")
    return (SPEED_OF_LIGHT / (4.0 * math.pi * carrier_hz * distance_m)) ** 2


def path_loss_db(carrier_hz: float, distance_m: float) -> float:
    return 10.0 * math.log10(path_loss(carrier_hz, distance_m))


def draw_fading(rng: np.random.Generator) -> float:
    """Rayleigh fading power term, unit-mean exponential."""
    zeta = rng.exponential(1.0)
    # exponential(1.0) can return exactly 0.0 with vanishing probability
    return zeta if zeta > 0.0 else float(np.finfo(float).tiny)


def compute_rssi(ptx_dbm: float, gain: float, loss: float, fading: float) -> float:
    if loss <= 0 or fading <= 0:
        raise ValueError("loss and fading must be positive")
    return ptx_dbm + 10.0 * math.log10(gain * loss * fading)


def noise_floor(
    bandwidth_hz: float, noise_figure_db: float = 6.0, noise_density_dbm_hz: float = -174.0
) -> float:
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return noise_density_dbm_hz + noise_figure_db + 10.0 * math.log10(bandwidth_hz)


def orthogonality(sf_a: int, sf_b: int) -> float:
    return float(ORTHOGONALITY[check_sf(sf_a) - 7, check_sf(sf_b) - 7])


def interference_sum(
    target: TransmissionAttempt,
    concurrent: Iterable[TransmissionAttempt],
    beta: Optional[np.ndarray] = None,
) -> float:
    """Interference power in mW at the target from time-overlapping attempts.

    The caller guarantees temporal overlap; only the channel indicator and the
    SF orthogonality weighting are applied here.
    """
    beta = ORTHOGONALITY if beta is None else beta
    row = check_sf(target.sf) - 7
    total = 0.0
    for other in concurrent:
        col = check_sf(other.sf) - 7
        if other.channel != target.channel:
            continue
        total += other.rssi_mw * float(beta[row, col])
    return total


def compute_sinr(rssi_dbm: float, interference_mw: float, noise_dbm: float) -> float:
    if interference_mw < 0:
        raise ValueError("interference power cannot be negative")
    if interference_mw == 0.0:
        return rssi_dbm - noise_dbm
    return mw_to_dbm(dbm_to_mw(rssi_dbm) / (dbm_to_mw(noise_dbm) + interference_mw))


def symbol_time(sf: int, bandwidth_hz: float = 125e3) -> float:
    return 2.0 ** check_sf(sf) / bandwidth_hz


def _cr_denominator(coding_rate: float) -> int:
    denom = round(4.0 / coding_rate)
    if denom not in (5, 6, 7, 8):
        raise ValueError(f"coding rate must be one of 4/5..4/8, got {coding_rate}")
    return denom


def payload_symbols(sf: int, payload_bytes: int, coding_rate: float = 4 / 5) -> int:
    """Symbols after the preamble, explicit header and CRC on, no LDRO."""
    if payload_bytes < 0:
        raise ValueError("payload size cannot be negative")
    sf = check_sf(sf)
    blocks = math.ceil((8 * payload_bytes - 4 * sf + 28 + 16) / (4 * sf))
    return 8 + max(blocks * _cr_denominator(coding_rate), 0)


def time_on_air(
    sf: int,
    payload_bytes: int,
    preamble_symbols: int = 8,
    bandwidth_hz: float = 125e3,
    coding_rate: float = 4 / 5,
) -> float:
    """Packet airtime in seconds (Semtech formula)."""
    t_sym = symbol_time(sf, bandwidth_hz)
    preamble = (preamble_symbols + 4.25) * t_sym
    return preamble + payload_symbols(sf, payload_bytes, coding_rate) * t_sym


def preamble_lock_duration(sf: int, lock_preambles: int = 4, bandwidth_hz: float = 125e3) -> float:
    return lock_preambles * symbol_time(sf, bandwidth_hz)


def bit_rate(sf: int, bandwidth_hz: float = 125e3, coding_rate: float = 4 / 5) -> float:
    return check_sf(sf) * bandwidth_hz * coding_rate / 2.0 ** sf


def tables_as_rows() -> list[list]:
    """Both reference tables flattened for CSV dumping."""
    rows: list[list] = [["table", "sf", "sensitivity_dbm", "demod_threshold_db", "data_rate_bps"]]
    for sf in SF_RANGE:
        p = SF_PROFILES[sf]
        rows.append(["sf_profile", sf, p.sensitivity_dbm, p.demod_threshold_db, p.data_rate_bps])
    rows.append(["orthogonality", "sf_i\\sf_j", *SF_RANGE])
    for i, sf in enumerate(SF_RANGE):
        rows.append(["orthogonality", sf, *[float(v) for v in ORTHOGONALITY[i]]])
    return rows
