"""LoRa time-on-air for uplink data frames and downlink ACKs.

Durations follow the SX1272/73 modem formula. Symbol counts stay fractional
(the 12.25-symbol preamble) and nothing is rounded to milliseconds.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .errors import ParameterError

BANDWIDTHS = (125000, 250000, 500000)
MIN_SF = 7
MAX_SF = 12
MAX_PHY_PAYLOAD = 255

# RS2 listens on the reserved channel at the minimum rate (DR0).
RS2_SPREADING_FACTOR = 12
RS2_BANDWIDTH = 125000

# Gap between the end of the uplink and the opening of each receive slot.
RECEIVE_DELAY_1 = 1.0
RECEIVE_DELAY_2 = 2.0


@dataclass(frozen=True)
class RadioConfig:
    spreading_factor: int = 12
    bandwidth: int = 125000
    coding_rate_denominator: int = 7
    preamble_symbols: float = 12.25
    data_payload_bytes: int = 21
    ack_payload_bytes: int = 12
    implicit_header: bool = True
    low_dr_optimize: bool = False
    rs1_dr_offset: int = 0
    uplink_crc: bool = True
    ack_crc: bool = False

    def __post_init__(self):
        _check_sf(self.spreading_factor)
        if self.bandwidth not in BANDWIDTHS:
            raise ParameterError(f"bandwidth must be one of {BANDWIDTHS}, got {self.bandwidth}")
        if not 5 <= self.coding_rate_denominator <= 8:
            raise ParameterError("coding_rate_denominator must be in [5, 8]")
        # zero is allowed so a bare-payload duration can be expressed
        if not self.preamble_symbols >= 0:
            raise ParameterError("preamble_symbols must be >= 0")
        for name in ("data_payload_bytes", "ack_payload_bytes"):
            value = getattr(self, name)
            if not 1 <= value <= MAX_PHY_PAYLOAD:
                raise ParameterError(f"{name} must be in [1, {MAX_PHY_PAYLOAD}], got {value}")
        if not 0 <= self.rs1_dr_offset <= MAX_SF - MIN_SF:
            raise ParameterError("rs1_dr_offset must be in [0, 5]")

    def at_rate(self, spreading_factor: int, bandwidth: int | None = None) -> RadioConfig:
        """Same radio settings at another spreading factor (and bandwidth)."""
        return dataclasses.replace(
            self,
            spreading_factor=spreading_factor,
            bandwidth=self.bandwidth if bandwidth is None else bandwidth,
        )


def _check_sf(sf):
    if not isinstance(sf, int) or not MIN_SF <= sf <= MAX_SF:
        raise ParameterError(f"spreading factor must be an integer in [{MIN_SF}, {MAX_SF}], got {sf!r}")


def symbol_duration(sf: int, bw: float) -> float:
    """Duration of one chirp, 2**sf / bw seconds."""
    _check_sf(sf)
    if not bw > 0:
        raise ParameterError(f"bandwidth must be positive, got {bw}")
    return (1 << sf) / bw


def preamble_duration(radio: RadioConfig) -> float:
    return radio.preamble_symbols * symbol_duration(radio.spreading_factor, radio.bandwidth)


def payload_symbols(payload_bytes: int, radio: RadioConfig, crc: bool = True) -> int:
    """Number of symbols after the preamble (header + payload + CRC)."""
    if not 1 <= payload_bytes <= MAX_PHY_PAYLOAD:
        raise ParameterError(f"payload must be in [1, {MAX_PHY_PAYLOAD}] bytes, got {payload_bytes}")
    sf = radio.spreading_factor
    h = 1 if radio.implicit_header else 0
    de = 1 if radio.low_dr_optimize else 0
    numerator = 8 * payload_bytes - 4 * sf + 28 + (16 if crc else 0) - 20 * h
    blocks = math.ceil(numerator / (4 * (sf - 2 * de)))
    return 8 + max(blocks * radio.coding_rate_denominator, 0)


def frame_duration(n_payload_symbols: float, radio: RadioConfig) -> float:
    """Preamble plus ``n_payload_symbols`` symbols."""
    if n_payload_symbols < 0:
        raise ParameterError("symbol count must be >= 0")
    ts = symbol_duration(radio.spreading_factor, radio.bandwidth)
    return radio.preamble_symbols * ts + n_payload_symbols * ts


def time_on_air(payload_bytes: int, radio: RadioConfig, crc: bool = True) -> float:
    return frame_duration(payload_symbols(payload_bytes, radio, crc), radio)


def data_rate_index(sf: int) -> int:
    """EU868-style DR index for 125 kHz channels: DR0 = SF12 ... DR5 = SF7."""
    _check_sf(sf)
    return MAX_SF - sf


def rs1_spreading_factor(uplink_sf: int, dr_offset: int) -> int:
    # RS1 rate is the uplink DR lowered by the offset, floored at DR0
    return MAX_SF - max(data_rate_index(uplink_sf) - dr_offset, 0)


def uplink_spreading_factor(radio: RadioConfig, attempt: int, dr_stepping: bool = False) -> int:
    """Uplink SF at ``attempt`` (1-based); with stepping the DR drops one step every two attempts."""
    if attempt < 1:
        raise ParameterError("attempt is 1-based")
    if not dr_stepping:
        return radio.spreading_factor
    return min(MAX_SF, radio.spreading_factor + (attempt - 1) // 2)


@dataclass(frozen=True)
class AttemptTiming:
    """Airtimes seen by one transmission attempt."""

    spreading_factor: int
    tx: float
    rs1_preamble: float
    rs1_ack: float
    rs2_preamble: float
    rs2_ack: float
    rs1_spreading_factor: int = 12

    @property
    def ack_fits_before_rs2(self) -> bool:
        # the model's beta_n: an RS1 ACK shorter than 1 s leaves time to open RS2
        return self.rs1_ack < 1.0


def attempt_timing(radio: RadioConfig, attempt: int = 1, dr_stepping: bool = False) -> AttemptTiming:
    sf = uplink_spreading_factor(radio, attempt, dr_stepping)
    up = radio.at_rate(sf)
    sf1 = rs1_spreading_factor(sf, radio.rs1_dr_offset)
    rs1 = radio.at_rate(sf1)
    rs2 = radio.at_rate(RS2_SPREADING_FACTOR, RS2_BANDWIDTH)
    return AttemptTiming(
        spreading_factor=sf,
        tx=time_on_air(radio.data_payload_bytes, up, crc=radio.uplink_crc),
        rs1_preamble=preamble_duration(rs1),
        rs1_ack=time_on_air(radio.ack_payload_bytes, rs1, crc=radio.ack_crc),
        rs2_preamble=preamble_duration(rs2),
        rs2_ack=time_on_air(radio.ack_payload_bytes, rs2, crc=radio.ack_crc),
        rs1_spreading_factor=sf1,
    )


def attempt_timings(radio: RadioConfig, max_transmissions: int, dr_stepping: bool = False) -> tuple[AttemptTiming, ...]:
    return tuple(attempt_timing(radio, n, dr_stepping) for n in range(1, max_transmissions + 1))
