"""MAC-level model inputs and the radio energy profile."""

from __future__ import annotations

import dataclasses
import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass

from .errors import ParameterError

MAX_TRANSMISSIONS_LIMIT = 8


class AckPolicy(enum.Enum):
    """How the gateway treats retransmissions of an already acknowledged frame."""

    CASE1 = 1  # ACK sent at most once per frame counter
    CASE2 = 2  # ACK re-sent for every received retransmission

    @classmethod
    def parse(cls, value) -> AckPolicy:
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace("case", "")
        try:
            return cls(int(text))
        except ValueError:
            raise ParameterError(f"ack policy must be 1/2 or case1/case2, got {value!r}") from None


@dataclass(frozen=True)
class MacParams:
    """Symbols of the chain model.

    ``slot_choice[n-1]`` is the probability that the gateway answers attempt
    ``n`` in RS1 (1) rather than RS2 (0). A scalar is broadcast to all
    attempts; ``None`` means RS1 everywhere.
    """

    device_count: int = 50
    max_transmissions: int = 8
    duty_cycle: float = 0.01
    channel_count: int = 7
    channel_quality: float = 1.0
    slot_choice: tuple[float, ...] | float | None = None
    ack_policy: AckPolicy = AckPolicy.CASE2
    traffic_intensity: float = 1.0
    ack_timeout_mean: float = 2.0
    dr_stepping: bool = False

    def __post_init__(self):
        n = self.max_transmissions
        if not isinstance(n, int) or not 1 <= n <= MAX_TRANSMISSIONS_LIMIT:
            raise ParameterError(f"max_transmissions must be an integer in [1, {MAX_TRANSMISSIONS_LIMIT}], got {n!r}")
        if not isinstance(self.device_count, int) or self.device_count < 1:
            raise ParameterError(f"device_count must be an integer >= 1, got {self.device_count!r}")
        if not isinstance(self.channel_count, int) or self.channel_count < 1:
            raise ParameterError(f"channel_count must be an integer >= 1, got {self.channel_count!r}")
        if n >= 2 and self.channel_count < 2:
            raise ParameterError(
                "channel_count must be >= 2 when max_transmissions >= 2: "
                "retransmissions avoid the previous channel, so y' = 1 - duty_cycle/(channel_count - 1)"
            )
        if not 0 < self.duty_cycle <= 1:
            raise ParameterError(f"duty_cycle must be in (0, 1], got {self.duty_cycle!r}")
        if not 0 <= self.channel_quality <= 1:
            raise ParameterError(f"channel_quality must be in [0, 1], got {self.channel_quality!r}")
        if self.traffic_intensity != 1:
            raise ParameterError("only saturated devices (traffic_intensity = 1) are modelled")
        if not (self.ack_timeout_mean >= 0 and math.isfinite(self.ack_timeout_mean)):
            raise ParameterError("ack_timeout_mean must be a finite non-negative number of seconds")
        object.__setattr__(self, "ack_policy", AckPolicy.parse(self.ack_policy))
        object.__setattr__(self, "slot_choice", _normalise_slots(self.slot_choice, n))

    @property
    def gamma(self) -> tuple[float, ...]:
        return self.slot_choice

    def replace(self, **changes) -> MacParams:
        # a new N needs a slot vector of matching length
        if "max_transmissions" in changes and "slot_choice" not in changes:
            old = self.slot_choice
            if len(set(old)) == 1:
                changes["slot_choice"] = old[0]
            else:
                changes["slot_choice"] = (old + (old[-1],) * MAX_TRANSMISSIONS_LIMIT)[: changes["max_transmissions"]]
        return dataclasses.replace(self, **changes)


def _normalise_slots(value, n) -> tuple[float, ...]:
    if value is None:
        value = 1.0
    if isinstance(value, (int, float)):
        slots = (float(value),) * n
    elif isinstance(value, Sequence):
        slots = tuple(float(v) for v in value)
    else:
        raise ParameterError(f"slot_choice must be a number or a sequence, got {type(value).__name__}")
    if len(slots) != n:
        raise ParameterError(f"slot_choice needs {n} entries (one per attempt), got {len(slots)}")
    for g in slots:
        if not 0 <= g <= 1:
            raise ParameterError(f"slot_choice entries must be in [0, 1], got {g}")
    return slots


@dataclass(frozen=True)
class EnergyProfile:
    """SX1272/73 supply figures (PA_BOOST, 17 dBm) in volts and amperes."""

    voltage: float = 1.5
    current_tx: float = 0.090
    current_rx: float = 0.0108
    current_idle: float = 1.5e-6
    current_sleep: float = 1e-7

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ParameterError(f"{f.name} must be strictly positive")
        if not self.current_tx > self.current_rx > self.current_idle >= self.current_sleep:
            raise ParameterError("currents must satisfy tx > rx > idle >= sleep")
