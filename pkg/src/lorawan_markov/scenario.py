"""Scenario files: INI sections mirroring the parameter dataclasses.

    [scenario]
    name = table2

    [mac]
    device_count = 50
    slot_choice = 1          ; or one value per attempt: 1, 1, 0.5, ...

    [radio]
    spreading_factor = 12

    [profile]
    voltage = 1.5

    [sim]
    runs = 20
    gateway_policy = prefer-rs1

Every key is optional; unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field

from .airtime import RadioConfig
from .errors import ConfigError, ModelError
from .netsim import GatewayPolicy, SimConfig
from .params import AckPolicy, EnergyProfile, MacParams

SECTIONS = ("scenario", "mac", "radio", "profile", "sim")
_SIM_KEYS = ("sim_duration", "runs", "base_seed", "gateway_policy", "dr_stepping",
             "reserved_channel_rdc_free", "warmup_fraction")


@dataclass(frozen=True)
class Scenario:
    name: str = "default"
    mac: MacParams = field(default_factory=MacParams)
    radio: RadioConfig = field(default_factory=RadioConfig)
    profile: EnergyProfile = field(default_factory=EnergyProfile)
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        if not str(self.name).strip():
            raise ConfigError("scenario name must be non-empty")
        # keep the simulator in sync with the model inputs
        if self.sim.mac is not self.mac or self.sim.radio is not self.radio or self.sim.profile is not self.profile:
            object.__setattr__(self, "sim", dataclasses.replace(self.sim, mac=self.mac, radio=self.radio,
                                                                profile=self.profile))

    def with_mac(self, **changes) -> Scenario:
        return dataclasses.replace(self, mac=self.mac.replace(**changes))

    def with_sim(self, **changes) -> Scenario:
        return dataclasses.replace(self, sim=dataclasses.replace(self.sim, **changes))


def default_scenario() -> Scenario:
    """Default radio and MAC inputs: A=50, N=8, m_c=7, alpha=1, 1% duty cycle, RS1 ACKs, Case2."""
    return Scenario(name="default")


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_slots(text: str):
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if not parts:
        raise ValueError("empty slot_choice")
    values = tuple(float(p) for p in parts)
    return values[0] if len(values) == 1 else values


def _converter(cls, name: str):
    if name == "slot_choice":
        return _parse_slots
    if name == "ack_policy":
        return AckPolicy.parse
    if name == "gateway_policy":
        return GatewayPolicy.parse
    ftype = {f.name: f.type for f in dataclasses.fields(cls)}[name]
    ftype = str(ftype)
    if ftype == "bool":
        return _parse_bool
    if ftype == "int":
        return int
    return float


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            lines[(section, "")] = no
            continue
        m = re.match(r"([^=:;#\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _key_lines(text)

    def where(section, key=""):
        no = lines.get((section, key))
        return f"{source}:{no}" if no else source

    for section in parser.sections():
        if section.lower() not in SECTIONS:
            raise ConfigError(f"{where(section.lower())}: unknown section [{section}]")

    def collect(section, cls, allowed):
        if not parser.has_section(section):
            return {}
        out = {}
        for key, raw in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"{where(section, key)}: unknown key {key!r} in [{section}]")
            try:
                out[key] = _converter(cls, key)(raw)
            except (ValueError, ModelError) as exc:
                raise ConfigError(f"{where(section, key)}: bad value for {section}.{key}: {exc}") from None
        return out

    def build(section, cls, values):
        try:
            return cls(**values)
        except ModelError as exc:
            raise ConfigError(f"{where(section)}: [{section}] {exc}") from None

    mac_keys = [f.name for f in dataclasses.fields(MacParams)]
    radio_keys = [f.name for f in dataclasses.fields(RadioConfig)]
    profile_keys = [f.name for f in dataclasses.fields(EnergyProfile)]

    name = "default"
    if parser.has_section("scenario"):
        for key, raw in parser.items("scenario"):
            if key != "name":
                raise ConfigError(f"{where('scenario', key)}: unknown key {key!r} in [scenario]")
            name = raw.strip()
            if not name:
                raise ConfigError(f"{where('scenario', key)}: scenario name must be non-empty")

    mac = build("mac", MacParams, collect("mac", MacParams, mac_keys))
    radio = build("radio", RadioConfig, collect("radio", RadioConfig, radio_keys))
    profile = build("profile", EnergyProfile, collect("profile", EnergyProfile, profile_keys))
    sim_values = collect("sim", SimConfig, _SIM_KEYS)
    sim = build("sim", SimConfig, dict(sim_values, mac=mac, radio=radio, profile=profile))
    return Scenario(name=name, mac=mac, radio=radio, profile=profile, sim=sim)


def load_scenario(path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}") from None
    return parse_scenario(text, source=str(path))
