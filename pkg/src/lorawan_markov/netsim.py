"""Discrete-event simulator of saturated Class A devices sending confirmed uplinks.

The simulator lives in the analytical model's world: one gateway, no capture
effect, channel impairments reduced to an independent loss probability.
Reception rules:

* any two transmissions (uplinks or RS1 ACKs) that overlap in time on the
  same channel and spreading factor destroy each other;
* RS2 ACKs go out on the reserved channel and only suffer the channel loss.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import json
import math
import random
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .airtime import RECEIVE_DELAY_1, RECEIVE_DELAY_2, AttemptTiming, RadioConfig, attempt_timing
from .errors import ParameterError
from .params import AckPolicy, EnergyProfile, MacParams

# slot codes stored per attempt
NO_ACK, SLOT_RS1, SLOT_RS2 = 0, 1, 2
_SLOT_CHARS = {NO_ACK: "-", SLOT_RS1: "1", SLOT_RS2: "2"}

CSV_COLUMNS = ("run", "device", "frame_counter", "attempts", "delay_s", "energy_j", "dropped", "slots_used")


class GatewayPolicy(enum.Enum):
    PREFER_RS1 = "prefer-rs1"  # RS1 when the radio is idle and the sub-band duty cycle allows, else RS2
    FORCE_RS1 = "force-rs1"
    FORCE_RS2 = "force-rs2"

    @classmethod
    def parse(cls, value) -> GatewayPolicy:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"preferrs1elsers2": cls.PREFER_RS1, "forcers1": cls.FORCE_RS1, "forcers2": cls.FORCE_RS2}
        try:
            return cls(key)
        except ValueError:
            if key.replace("-", "") in aliases:
                return aliases[key.replace("-", "")]
        raise ParameterError(f"unknown gateway policy {value!r}")


@dataclass(frozen=True)
class SimConfig:
    mac: MacParams = field(default_factory=MacParams)
    radio: RadioConfig = field(default_factory=RadioConfig)
    profile: EnergyProfile = field(default_factory=EnergyProfile)
    sim_duration: float = 7200.0
    runs: int = 20
    base_seed: int = 0
    gateway_policy: GatewayPolicy = GatewayPolicy.PREFER_RS1
    dr_stepping: bool = False
    reserved_channel_rdc_free: bool = True
    warmup_fraction: float = 0.1
    ack_timeout_range: tuple[float, float] = (1.0, 3.0)

    def __post_init__(self):
        object.__setattr__(self, "gateway_policy", GatewayPolicy.parse(self.gateway_policy))
        if not (self.sim_duration > 0 and math.isfinite(self.sim_duration)):
            raise ParameterError("sim_duration must be a positive number of seconds")
        if not isinstance(self.runs, int) or self.runs < 1:
            raise ParameterError("runs must be an integer >= 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ParameterError("warmup_fraction must be in [0, 1)")
        lo, hi = self.ack_timeout_range
        if not 0 <= lo <= hi:
            raise ParameterError("ack_timeout_range must satisfy 0 <= low <= high")


@dataclass
class FrameRecord:
    run: int
    device: int
    frame_counter: int
    start: float
    end: float = math.nan
    attempts: int = 0
    acked: bool = False
    dropped: bool = False
    energy: float = 0.0
    slots: list = field(default_factory=list)
    channels: list = field(default_factory=list)
    acks_sent: int = 0
    measured: bool = False

    @property
    def done(self) -> bool:
        return self.acked or self.dropped

    @property
    def delay(self) -> float:
        return self.end - self.start

    @property
    def slots_used(self) -> str:
        return "".join(_SLOT_CHARS[s] for s in self.slots)


@dataclass
class RunResult:
    run: int
    seed: int
    end_time: float
    frames: list[FrameRecord]
    transmissions: list[tuple[int, float, float, int, int]]  # device, start, end, channel, sf
    ack_slot_counts: np.ndarray  # (N, 2): RS1 / RS2 ACK transmissions per attempt, measured frames

    def measured(self) -> list[FrameRecord]:
        return [f for f in self.frames if f.measured and f.done]

    def totals(self) -> tuple[int, int, float, float]:
        acked = dropped = 0
        delay = energy = 0.0
        for f in self.measured():
            acked += f.acked
            dropped += f.dropped
            delay += f.delay
            energy += f.energy
        return acked, dropped, delay, energy


@dataclass
class SimStats:
    """Per-frame records of every run plus aggregates.

    ``mean_delay_per_ack`` charges the time of dropped frames to the ACK'd
    ones (total frame time / ACK count), the simulator counterpart of the
    renewal-reward model metric. ``mean_ack_delay`` is the plain average
    send-to-ACK delay of acknowledged frames.
    """

    config: SimConfig
    runs: list[RunResult]
    mean_delay_per_ack: float = math.nan
    delay_ci: float = math.nan
    mean_energy_per_ack: float = math.nan
    energy_ci: float = math.nan
    mean_ack_delay: float = math.nan
    drop_rate: float = math.nan
    acked_frames: int = 0
    dropped_frames: int = 0
    slot_counts: np.ndarray = None

    @property
    def slot_frequencies(self) -> list[float]:
        """Share of ACKs sent in RS1 per attempt (NaN when no ACK was sent)."""
        out = []
        for rs1, rs2 in self.slot_counts:
            total = rs1 + rs2
            out.append(rs1 / total if total else math.nan)
        return out

    def frames(self):
        for r in self.runs:
            yield from r.frames

    def summary(self) -> dict:
        return {
            "runs": len(self.runs),
            "acked_frames": self.acked_frames,
            "dropped_frames": self.dropped_frames,
            "drop_rate": self.drop_rate,
            "mean_delay_per_ack_s": self.mean_delay_per_ack,
            "delay_ci95_s": self.delay_ci,
            "mean_energy_per_ack_j": self.mean_energy_per_ack,
            "energy_ci95_j": self.energy_ci,
            "mean_ack_delay_s": self.mean_ack_delay,
            "rs1_ack_counts": [int(c) for c in self.slot_counts[:, 0]],
            "rs2_ack_counts": [int(c) for c in self.slot_counts[:, 1]],
            "rs1_selection_frequency": [None if math.isnan(v) else v for v in self.slot_frequencies],
            "gateway_policy": self.config.gateway_policy.value,
            "ack_policy": self.config.mac.ack_policy.value,
        }

    def write_csv(self, stream):
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for run in self.runs:
            for f in run.measured():
                writer.writerow([
                    f.run, f.device, f.frame_counter, f.attempts,
                    f"{f.delay:.9g}", f"{f.energy:.9g}", int(f.dropped), f.slots_used,
                ])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


# -- one run ---------------------------------------------------------------

_TX_START, _TX_END, _RS1_END, _ATTEMPT_END = range(4)


class _Device:
    __slots__ = ("idx", "frame", "attempt", "channel", "tx_start", "tx_end", "next_allowed",
                 "timing", "rs1_ack", "rs2_ack")

    def __init__(self, idx):
        self.idx = idx
        self.frame = None
        self.attempt = 0
        self.channel = -1
        self.tx_start = 0.0
        self.tx_end = 0.0
        self.next_allowed = 0.0
        self.timing = None
        self.rs1_ack = False
        self.rs2_ack = False


class _Run:
    def __init__(self, config: SimConfig, run: int):
        self.cfg = config
        self.mac = config.mac
        self.run = run
        self.seed = config.base_seed + run
        self.rng = random.Random(self.seed)
        self.N = self.mac.max_transmissions
        self.alpha = self.mac.channel_quality
        self.duty = self.mac.duty_cycle
        p = config.profile
        self.V = p.voltage
        self.i_tx, self.i_rx, self.i_idle = p.current_tx, p.current_rx, p.current_idle
        self.timings = [attempt_timing(config.radio, n, config.dr_stepping) for n in range(1, self.N + 1)]
        self.horizon = config.sim_duration
        self.warmup = config.warmup_fraction * config.sim_duration
        self.events = []
        self.seq = 0
        self.on_air = defaultdict(list)  # channel -> [(start, end, sf, tag)]
        self.transmissions = []
        self.frames = []
        self.pending = 0
        self.gw_rs1_next_allowed = 0.0
        self.gw_rs1_busy_until = 0.0
        self.gw_rs2_next_allowed = 0.0
        self.acked_counters = set()
        self.slot_counts = np.zeros((self.N, 2), dtype=np.int64)
        self.devices = [_Device(i) for i in range(self.mac.device_count)]

    def push(self, t, kind, dev):
        self.seq += 1
        heapq.heappush(self.events, (t, self.seq, kind, dev))

    def energy(self, current, seconds):
        return self.V * current * max(seconds, 0.0)

    def new_frame(self, dev: _Device, t: float):
        counter = dev.frame.frame_counter + 1 if dev.frame is not None else 0
        start = max(t, dev.next_allowed)
        frame = FrameRecord(run=self.run, device=dev.idx, frame_counter=counter, start=start)
        frame.measured = self.warmup <= start < self.horizon
        if frame.measured:
            self.pending += 1
        self.frames.append(frame)
        dev.frame = frame
        dev.attempt = 0
        self.push(start, _TX_START, dev)

    def on_tx_start(self, t, dev: _Device):
        dev.attempt += 1
        n = dev.attempt
        timing = self.timings[n - 1]
        dev.timing = timing
        m_c = self.mac.channel_count
        if n == 1:
            ch = self.rng.randrange(m_c)
        else:
            # never reuse the previous attempt's channel
            ch = self.rng.randrange(m_c - 1)
            if ch >= dev.channel:
                ch += 1
        dev.channel = ch
        dev.tx_start = t
        dev.tx_end = t + timing.tx
        dev.next_allowed = t + timing.tx / self.duty
        dev.rs1_ack = dev.rs2_ack = False
        frame = dev.frame
        frame.attempts = n
        frame.channels.append(ch)
        frame.energy += self.energy(self.i_tx, timing.tx)
        self.on_air[ch].append((t, dev.tx_end, timing.spreading_factor, ("up", dev.idx)))
        self.transmissions.append((dev.idx, t, dev.tx_end, ch, timing.spreading_factor))
        self.push(dev.tx_end, _TX_END, dev)

    def interfered(self, ch, start, end, sf, tag) -> bool:
        for s, e, f, other in self.on_air[ch]:
            if f == sf and s < end and e > start and other != tag:
                return True
        return False

    def prune(self, now):
        # keep transmissions that can still overlap a pending reception
        cutoff = now - 30.0
        for ch, lst in self.on_air.items():
            if lst and lst[0][1] < cutoff:
                self.on_air[ch] = [u for u in lst if u[1] >= cutoff]

    def on_tx_end(self, t, dev: _Device):
        timing = dev.timing
        frame = dev.frame
        n = dev.attempt
        received = (not self.interfered(dev.channel, dev.tx_start, dev.tx_end, timing.spreading_factor, ("up", dev.idx))
                    and self.rng.random() < self.alpha)
        slot = NO_ACK
        if received:
            slot = self.gateway_slot(dev, t, timing)
        frame.slots.append(slot)
        if slot != NO_ACK:
            frame.acks_sent += 1
            if frame.measured:
                self.slot_counts[n - 1, slot - 1] += 1
        frame.energy += self.energy(self.i_idle, RECEIVE_DELAY_1)
        if slot == SLOT_RS1:
            dev.rs1_ack = True
            a0 = t + RECEIVE_DELAY_1
            self.on_air[dev.channel].append((a0, a0 + timing.rs1_ack, timing.rs1_spreading_factor, ("ack", dev.idx)))
            self.push(t + RECEIVE_DELAY_1 + timing.rs1_ack, _RS1_END, dev)
        else:
            dev.rs2_ack = slot == SLOT_RS2
            self.finish_rs2(t + RECEIVE_DELAY_1 + timing.rs1_preamble, dev)

    def gateway_slot(self, dev: _Device, t: float, timing: AttemptTiming) -> int:
        if self.mac.ack_policy == AckPolicy.CASE1:
            key = (dev.idx, dev.frame.frame_counter)
            if key in self.acked_counters:
                return NO_ACK
            self.acked_counters.add(key)
        policy = self.cfg.gateway_policy
        rs1_start = t + RECEIVE_DELAY_1
        if policy == GatewayPolicy.FORCE_RS1:
            return SLOT_RS1
        if policy == GatewayPolicy.PREFER_RS1:
            if self.gw_rs1_busy_until <= rs1_start and self.gw_rs1_next_allowed <= rs1_start:
                self.gw_rs1_busy_until = rs1_start + timing.rs1_ack
                self.gw_rs1_next_allowed = rs1_start + timing.rs1_ack / self.duty
                return SLOT_RS1
        if self.cfg.reserved_channel_rdc_free or policy == GatewayPolicy.FORCE_RS2:
            return SLOT_RS2
        rs2_start = t + RECEIVE_DELAY_2
        if self.gw_rs2_next_allowed <= rs2_start:
            self.gw_rs2_next_allowed = rs2_start + timing.rs2_ack / self.duty
            return SLOT_RS2
        return NO_ACK

    def on_rs1_end(self, t, dev: _Device):
        timing = dev.timing
        frame = dev.frame
        frame.energy += self.energy(self.i_rx, timing.rs1_ack)
        a0 = t - timing.rs1_ack
        ok = not self.interfered(dev.channel, a0, t, timing.rs1_spreading_factor, ("ack", dev.idx))
        if ok and self.rng.random() < self.alpha:
            self.complete(dev, t, acked=True)
            return
        if timing.rs1_ack < RECEIVE_DELAY_2 - RECEIVE_DELAY_1:
            self.finish_rs2(t, dev)
        else:
            # still receiving when RS2 would open
            self.attempt_failed(dev, t)

    def finish_rs2(self, t_rs1_done, dev: _Device):
        """Idle until RS2, listen, and resolve the attempt at the end of RS2."""
        timing = dev.timing
        frame = dev.frame
        rs2_open = dev.tx_end + RECEIVE_DELAY_2
        frame.energy += self.energy(self.i_idle, rs2_open - t_rs1_done)
        if dev.rs2_ack:
            frame.energy += self.energy(self.i_rx, timing.rs2_ack)
            end = rs2_open + timing.rs2_ack
            if self.rng.random() < self.alpha:
                self.push(end, _ATTEMPT_END, (dev, True))
                return
        else:
            frame.energy += self.energy(self.i_rx, timing.rs2_preamble)
            end = rs2_open + timing.rs2_preamble
        self.push(end, _ATTEMPT_END, (dev, False))

    def attempt_failed(self, dev: _Device, t):
        lo, hi = self.cfg.ack_timeout_range
        timeout_end = t + self.rng.uniform(lo, hi)
        frame = dev.frame
        if dev.attempt >= self.N:
            frame.energy += self.energy(self.i_idle, timeout_end - t)
            self.complete(dev, timeout_end, acked=False)
            return
        nxt = max(timeout_end, dev.next_allowed)
        frame.energy += self.energy(self.i_idle, nxt - t)
        self.push(nxt, _TX_START, dev)

    def complete(self, dev: _Device, t, acked: bool):
        frame = dev.frame
        frame.end = t
        frame.acked = acked
        frame.dropped = not acked
        if frame.measured:
            self.pending -= 1
        self.new_frame(dev, t)

    def execute(self) -> RunResult:
        period = self.timings[0].tx / self.duty
        for dev in self.devices:
            dev.next_allowed = self.rng.uniform(0.0, period)
            self.new_frame(dev, 0.0)
        now = 0.0
        handled = 0
        while self.events:
            now, _, kind, obj = heapq.heappop(self.events)
            if now >= self.horizon and self.pending == 0:
                break
            if kind == _TX_START:
                self.on_tx_start(now, obj)
            elif kind == _TX_END:
                self.on_tx_end(now, obj)
            elif kind == _RS1_END:
                self.on_rs1_end(now, obj)
            else:
                dev, ok = obj
                if ok:
                    self.complete(dev, now, acked=True)
                else:
                    self.attempt_failed(dev, now)
            handled += 1
            if handled % 2048 == 0:
                self.prune(now)
        return RunResult(
            run=self.run,
            seed=self.seed,
            end_time=now,
            # a frame queued behind the duty cycle when the run stops never existed on air
            frames=[f for f in self.frames if f.attempts > 0],
            transmissions=self.transmissions,
            ack_slot_counts=self.slot_counts,
        )


def simulate_run(config: SimConfig, run: int) -> RunResult:
    return _Run(config, run).execute()


def _ratio_ci(num: np.ndarray, den: np.ndarray) -> float:
    """95% half-width of sum(num)/sum(den) from per-unit values (delta method)."""
    k = len(num)
    if k < 2 or den.sum() <= 0:
        return 0.0
    r = num.sum() / den.sum()
    resid = num - r * den
    se = math.sqrt(resid.var(ddof=1) * k) / den.sum()
    return float(sps.t.ppf(0.975, k - 1) * se)


def aggregate(config: SimConfig, runs: list[RunResult]) -> SimStats:
    totals = np.array([r.totals() for r in runs], dtype=float).reshape(-1, 4)
    acked, dropped, delay, energy = totals.sum(axis=0)
    st = SimStats(config=config, runs=runs)
    st.acked_frames = int(acked)
    st.dropped_frames = int(dropped)
    st.drop_rate = dropped / (acked + dropped) if acked + dropped else math.nan
    st.slot_counts = sum((r.ack_slot_counts for r in runs), np.zeros((config.mac.max_transmissions, 2), dtype=np.int64))
    if acked > 0:
        st.mean_delay_per_ack = delay / acked
        st.mean_energy_per_ack = energy / acked
        if len(runs) >= 2:
            st.delay_ci = _ratio_ci(totals[:, 2], totals[:, 0])
            st.energy_ci = _ratio_ci(totals[:, 3], totals[:, 0])
        else:
            frames = runs[0].measured()
            d = np.array([f.delay for f in frames])
            e = np.array([f.energy for f in frames])
            a = np.array([float(f.acked) for f in frames])
            st.delay_ci = _ratio_ci(d, a)
            st.energy_ci = _ratio_ci(e, a)
        ack_delays = [f.delay for r in runs for f in r.measured() if f.acked]
        st.mean_ack_delay = float(np.mean(ack_delays))
    else:
        st.mean_delay_per_ack = st.mean_energy_per_ack = math.inf
        st.delay_ci = st.energy_ci = 0.0
    return st


def run_simulation(config: SimConfig, workers: int = 1) -> SimStats:
    """Run ``config.runs`` independent replications (seed = base_seed + run index)."""
    if workers > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(simulate_run, [config] * config.runs, range(config.runs)))
    else:
        runs = [simulate_run(config, r) for r in range(config.runs)]
    return aggregate(config, runs)


def estimate_slot_probabilities(stats: SimStats, n: int | None = None) -> list[float]:
    """Per-attempt share of ACKs the gateway sent in RS1.

    Attempts without any ACK fall back to the configured slot choice.
    """
    if not stats.runs or stats.slot_counts is None:
        raise ParameterError("simulation statistics are empty")
    if stats.acked_frames + stats.dropped_frames == 0:
        raise ParameterError("no completed frames in the simulation statistics")
    fallback = stats.config.mac.slot_choice
    n = n or stats.config.mac.max_transmissions
    out = []
    for i, freq in enumerate(stats.slot_frequencies[:n]):
        if math.isnan(freq):
            warnings.warn(f"no ACK observed at attempt {i + 1}; using configured slot choice {fallback[i]}",
                          stacklevel=2)
            freq = fallback[i]
        out.append(float(freq))
    return out
