"""Network configuration: TOML schema, validation, and SI resolution.

A network is buses joined by series R-L branches, with series R-L loads and
inverters hanging off buses.  Impedances in the file are per-unit on the
system base; loads are nominal P/Q at the system voltage; inverter filter
values are per-unit on each machine's own MVA base.  Resolution converts
everything to SI and cross-checks references (bus ids, one inverter per bus,
connectivity), so downstream code never sees per-unit quantities.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .certify import Certificate, default_envelope
from .model import HacGains, InverterParams, per_unit_to_si

__all__ = [
    "ConfigError",
    "SystemCfg",
    "BusCfg",
    "BranchCfg",
    "LoadCfg",
    "CertificateCfg",
    "InverterCfg",
    "EventCfg",
    "SimulationCfg",
    "NetworkConfigModel",
    "Branch",
    "Load",
    "InverterSpec",
    "Event",
    "SimulationSettings",
    "NetworkConfig",
    "default_modulation_depth",
    "resolve_config",
    "load_config",
    "parse_config_text",
]


class ConfigError(ValueError):
    """Invalid configuration; message names the offending field."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SystemCfg(_Section):
    base_mva: float = Field(gt=0)
    base_voltage_ll: float = Field(gt=0)
    frequency_hz: float = Field(default=60.0, gt=0)
    # Junction buses carry a small fictitious capacitance so every bus
    # voltage is a state.  Too small makes the fastest LC mode outrun the
    # fixed integration step; 0.004 pu keeps omega*dt near 1 at dt = 50 us.
    bus_capacitance_pu: float = Field(default=0.004, gt=0)


class BusCfg(_Section):
    id: int


class BranchCfg(_Section):
    from_bus: int = Field(alias="from")
    to_bus: int = Field(alias="to")
    r_pu: float = Field(default=0.0, ge=0)
    x_pu: float = Field(gt=0)


class LoadCfg(_Section):
    bus: int
    p_mw: float = Field(ge=0)
    # Series R-L load model: the inductance is the state, so demand some.
    q_mvar: float = Field(gt=0)


class CertificateCfg(_Section):
    eps1: float = Field(gt=0)
    eps2: float = Field(gt=0)
    lam: float = Field(gt=0)


class InverterCfg(_Section):
    bus: int
    s_rated_mva: float = Field(gt=0)
    c_dc_f: float = Field(gt=0)
    g_dc_s: float = Field(gt=0)
    kappa_s: float = Field(ge=0)
    l_f_pu: float = Field(default=0.05, gt=0)
    r_f_pu: float = Field(default=0.05 / 30.0, gt=0)
    c_f_pu: float = Field(default=0.05, gt=0)
    g_f_pu: float = Field(default=1e-4, gt=0)
    mu: Optional[float] = Field(default=None, gt=0, le=1)
    v_dc_star_v: float = Field(gt=0)
    eta: float = Field(default=1e-3, ge=0)
    gamma: float = Field(default=100.0, gt=0)
    theta_star0_rad: float = 0.0
    certificate: Optional[CertificateCfg] = None


class EventCfg(_Section):
    time_s: float = Field(gt=0)
    kind: Literal["load_scale"] = "load_scale"
    bus: int
    factor: float = Field(gt=0)


class SimulationCfg(_Section):
    t_end_s: float = Field(default=5.0, gt=0)
    dt_s: float = Field(default=5e-5, gt=0)
    record_every: int = Field(default=20, ge=1)


class NetworkConfigModel(_Section):
    system: SystemCfg
    buses: list[BusCfg] = Field(min_length=1)
    branches: list[BranchCfg] = Field(default_factory=list)
    loads: list[LoadCfg] = Field(default_factory=list)
    inverters: list[InverterCfg] = Field(min_length=1)
    events: list[EventCfg] = Field(default_factory=list)
    simulation: SimulationCfg = Field(default_factory=SimulationCfg)


@dataclass(frozen=True)
class Branch:
    bus_from: int
    bus_to: int
    r: float
    l: float


@dataclass(frozen=True)
class Load:
    bus: int
    p_nominal: float
    q_nominal: float
    r: float
    l: float


@dataclass(frozen=True)
class InverterSpec:
    bus: int
    s_rated: float
    params: InverterParams
    gains: HacGains
    certificate: Optional[Certificate]


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    bus: int
    factor: float


@dataclass(frozen=True)
class SimulationSettings:
    t_end: float
    dt: float
    record_every: int


@dataclass(frozen=True)
class NetworkConfig:
    """Fully resolved network in SI units."""

    base_power: float
    base_voltage_ll: float
    omega0: float
    bus_capacitance: float
    bus_ids: tuple[int, ...]
    branches: tuple[Branch, ...]
    loads: tuple[Load, ...]
    inverters: tuple[InverterSpec, ...]
    events: tuple[Event, ...]
    sim: SimulationSettings


def default_modulation_depth(v_ll: float, v_dc_star: float) -> float:
    """Modulation depth placing the open-circuit AC magnitude at nominal.

    In the power-invariant two-phase frame the nominal voltage norm equals
    the line-to-line RMS value, and a peak phase quantity carries an extra
    sqrt(2)*sqrt(2/3) relative to it.
    """
    return math.sqrt(2.0) * v_ll * math.sqrt(2.0 / 3.0) / v_dc_star


def _series_rl_from_power(p_w: float, q_var: float, v_ll: float, omega0: float) -> tuple[float, float]:
    # Series R-L drawing (P, Q) at voltage norm v_ll: Z = V^2 S* / |S|^2.
    s_sq = p_w * p_w + q_var * q_var
    r = v_ll * v_ll * p_w / s_sq
    x = v_ll * v_ll * q_var / s_sq
    return r, x / omega0


def resolve_config(model: NetworkConfigModel) -> NetworkConfig:
    sysc = model.system
    base_power = sysc.base_mva * 1e6
    v_ll = sysc.base_voltage_ll
    omega0 = 2.0 * math.pi * sysc.frequency_hz
    z_base = v_ll * v_ll / base_power

    bus_ids = tuple(b.id for b in model.buses)
    if len(set(bus_ids)) != len(bus_ids):
        raise ConfigError("buses: duplicate bus ids")
    id_set = set(bus_ids)

    branches = []
    for k, br in enumerate(model.branches):
        if br.from_bus not in id_set:
            raise ConfigError(f"branches[{k}].from: no such bus id {br.from_bus}")
        if br.to_bus not in id_set:
            raise ConfigError(f"branches[{k}].to: no such bus id {br.to_bus}")
        if br.from_bus == br.to_bus:
            raise ConfigError(f"branches[{k}]: self loop at bus {br.from_bus}")
        branches.append(
            Branch(
                bus_from=br.from_bus,
                bus_to=br.to_bus,
                r=br.r_pu * z_base,
                l=br.x_pu * z_base / omega0,
            )
        )

    loads = []
    for k, ld in enumerate(model.loads):
        if ld.bus not in id_set:
            raise ConfigError(f"loads[{k}].bus: no such bus id {ld.bus}")
        r, l = _series_rl_from_power(ld.p_mw * 1e6, ld.q_mvar * 1e6, v_ll, omega0)
        loads.append(Load(bus=ld.bus, p_nominal=ld.p_mw * 1e6, q_nominal=ld.q_mvar * 1e6, r=r, l=l))

    inverters = []
    seen_buses: set[int] = set()
    for k, inv in enumerate(model.inverters):
        if inv.bus not in id_set:
            raise ConfigError(f"inverters[{k}].bus: no such bus id {inv.bus}")
        if inv.bus in seen_buses:
            raise ConfigError(f"inverters[{k}].bus: bus {inv.bus} already has an inverter")
        seen_buses.add(inv.bus)
        s_rated = inv.s_rated_mva * 1e6
        base = dict(base_power=s_rated, base_voltage_ll=v_ll, base_frequency=sysc.frequency_hz)
        mu = inv.mu if inv.mu is not None else default_modulation_depth(v_ll, inv.v_dc_star_v)
        if not 0.0 < mu <= 1.0:
            raise ConfigError(f"inverters[{k}].mu: resolved value {mu:.4f} outside (0, 1]")
        params = InverterParams(
            c_dc=inv.c_dc_f,
            g_dc=inv.g_dc_s,
            c_f=per_unit_to_si(inv.c_f_pu, "capacitance", **base),
            g_f=per_unit_to_si(inv.g_f_pu, "conductance", **base),
            l_f=per_unit_to_si(inv.l_f_pu, "inductance", **base),
            r_f=per_unit_to_si(inv.r_f_pu, "resistance", **base),
            mu=mu,
            kappa=inv.kappa_s,
        )
        gains = HacGains(
            omega0=omega0,
            eta=inv.eta,
            gamma=inv.gamma,
            v_dc_star=inv.v_dc_star_v,
            theta_star0=inv.theta_star0_rad,
        )
        cert = None
        if inv.certificate is not None:
            cert = Certificate(
                eps1=inv.certificate.eps1,
                eps2=inv.certificate.eps2,
                lam=inv.certificate.lam,
                envelope=default_envelope(s_rated, v_ll, inv.v_dc_star_v),
            )
        inverters.append(
            InverterSpec(bus=inv.bus, s_rated=s_rated, params=params, gains=gains, certificate=cert)
        )

    sim = SimulationSettings(
        t_end=model.simulation.t_end_s,
        dt=model.simulation.dt_s,
        record_every=model.simulation.record_every,
    )

    load_buses = {ld.bus for ld in loads}
    events = []
    for k, ev in enumerate(model.events):
        if ev.bus not in id_set:
            raise ConfigError(f"events[{k}].bus: no such bus id {ev.bus}")
        if ev.bus not in load_buses:
            raise ConfigError(f"events[{k}].bus: bus {ev.bus} has no load to scale")
        if ev.time_s >= sim.t_end:
            raise ConfigError(
                f"events[{k}].time_s: {ev.time_s} is not before simulation end {sim.t_end}"
            )
        events.append(Event(time=ev.time_s, kind=ev.kind, bus=ev.bus, factor=ev.factor))
    events.sort(key=lambda e: e.time)

    _check_connected(bus_ids, branches)

    c_bus = sysc.bus_capacitance_pu / (z_base * omega0)
    return NetworkConfig(
        base_power=base_power,
        base_voltage_ll=v_ll,
        omega0=omega0,
        bus_capacitance=c_bus,
        bus_ids=bus_ids,
        branches=tuple(branches),
        loads=tuple(loads),
        inverters=tuple(inverters),
        events=tuple(events),
        sim=sim,
    )


def _check_connected(bus_ids: tuple[int, ...], branches: list[Branch]) -> None:
    adjacency: dict[int, list[int]] = {b: [] for b in bus_ids}
    for br in branches:
        adjacency[br.bus_from].append(br.bus_to)
        adjacency[br.bus_to].append(br.bus_from)
    seen = {bus_ids[0]}
    stack = [bus_ids[0]]
    while stack:
        node = stack.pop()
        for nxt in adjacency[node]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    missing = sorted(set(bus_ids) - seen)
    if missing:
        raise ConfigError(f"branches: buses {missing} are not connected to bus {bus_ids[0]}")


def parse_config_text(text: str) -> NetworkConfig:
    """Parse TOML text and resolve it; raises ConfigError on any problem."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc
    try:
        model = NetworkConfigModel.model_validate(data)
    except ValidationError as exc:
        locs = "; ".join(
            ".".join(str(p) for p in err["loc"]) + ": " + err["msg"] for err in exc.errors()
        )
        raise ConfigError(f"invalid configuration: {locs}") from exc
    return resolve_config(model)


def load_config(path: str | Path) -> NetworkConfig:
    return parse_config_text(Path(path).read_text())
