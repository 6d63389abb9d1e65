"""Operations shared by the command line and the HTTP service.

Each operation takes a resolved NetworkConfig, does one unit of work
(certify, sweep, simulate, verify), and returns a plain result object that
serializes to JSON without further translation.  File emission (CSV,
manifest) lives here too so both front ends produce identical artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .certify import (
    Certificate,
    InfeasibilityWitness,
    check_conditions,
    default_envelope,
    synthesize_certificate,
)
from .config import InverterSpec, NetworkConfig
from .model import HacGains, InverterParams
from .netsim import NetworkModel, export_csv, run_scenario
from .smallsignal import default_grid, equilibrium, linearize, setpoint_input, sweep
from .verify import InputSpec, incremental_storage_series, supplied_rate_series
from .verify import batch_trajectory_pairs, dissipation_check

__all__ = [
    "CertifyEntry",
    "CertifyOutcome",
    "SweepOutcome",
    "SimulateOutcome",
    "VerifyEntry",
    "VerifyOutcome",
    "RunManifest",
    "certify_network",
    "sweep_inverter",
    "simulate_network",
    "verify_inverter",
    "default_input_spec",
    "export_sweep_csv",
    "export_verify_csv",
    "config_fingerprint",
    "build_manifest",
    "write_manifest",
    "write_json_report",
]


def config_fingerprint(text: str) -> str:
    """Stable identity of the configuration content."""
    return hashlib.sha256(text.encode()).hexdigest()


def _inverter_by_bus(cfg: NetworkConfig, bus: int) -> InverterSpec:
    for inv in cfg.inverters:
        if inv.bus == bus:
            return inv
    raise ValueError(f"no inverter at bus {bus}")


def _override_gains(gains: HacGains, eta: Optional[float], gamma: Optional[float]) -> HacGains:
    if eta is None and gamma is None:
        return gains
    return HacGains(
        omega0=gains.omega0,
        eta=gains.eta if eta is None else eta,
        gamma=gains.gamma if gamma is None else gamma,
        v_dc_star=gains.v_dc_star,
        theta_star0=gains.theta_star0,
    )


# ---------------------------------------------------------------------------
# certify


@dataclass(frozen=True)
class CertifyEntry:
    bus: int
    feasible: bool
    synthesized: bool
    margins: Optional[tuple[float, float, float]]
    q_min_eig: Optional[float]
    eps1: Optional[float]
    eps2: Optional[float]
    lam: Optional[float]
    infeasibility: Optional[str]


@dataclass(frozen=True)
class CertifyOutcome:
    all_feasible: bool
    entries: tuple[CertifyEntry, ...]


def certify_network(
    cfg: NetworkConfig,
    synthesize: bool = False,
    eta: Optional[float] = None,
    gamma: Optional[float] = None,
) -> CertifyOutcome:
    """Check or synthesize one certificate per inverter.

    Stored witnesses are checked as-is; inverters without one (or all of
    them under synthesize=True) get parameters picked by the midpoint
    rules.  Gain overrides apply to every machine before checking.
    """
    entries = []
    for inv in cfg.inverters:
        gains = _override_gains(inv.gains, eta, gamma)
        cert = inv.certificate
        if cert is not None and not synthesize:
            report = check_conditions(inv.params, gains, cert)
            entries.append(
                CertifyEntry(
                    bus=inv.bus,
                    feasible=report.feasible,
                    synthesized=False,
                    margins=report.margins,
                    q_min_eig=report.q_min_eig,
                    eps1=cert.eps1,
                    eps2=cert.eps2,
                    lam=cert.lam,
                    infeasibility=None,
                )
            )
            continue
        envelope = (
            cert.envelope
            if cert is not None
            else default_envelope(inv.s_rated, cfg.base_voltage_ll, gains.v_dc_star)
        )
        picked = synthesize_certificate(inv.params, gains, envelope)
        if isinstance(picked, InfeasibilityWitness):
            entries.append(
                CertifyEntry(
                    bus=inv.bus,
                    feasible=False,
                    synthesized=True,
                    margins=None,
                    q_min_eig=None,
                    eps1=None,
                    eps2=None,
                    lam=None,
                    infeasibility=picked.violated,
                )
            )
            continue
        report = check_conditions(inv.params, gains, picked)
        entries.append(
            CertifyEntry(
                bus=inv.bus,
                feasible=report.feasible,
                synthesized=True,
                margins=report.margins,
                q_min_eig=report.q_min_eig,
                eps1=picked.eps1,
                eps2=picked.eps2,
                lam=picked.lam,
                infeasibility=None,
            )
        )
    return CertifyOutcome(
        all_feasible=all(e.feasible for e in entries), entries=tuple(entries)
    )


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SweepOutcome:
    bus: int
    omega: np.ndarray
    ifp: np.ndarray
    ofp: np.ndarray
    gaps: tuple[float, ...]
    all_positive: bool


def sweep_inverter(
    cfg: NetworkConfig,
    bus: int,
    grid: Optional[np.ndarray] = None,
    i_load_dq: tuple[float, float] = (0.0, 0.0),
    i_dc_ref: Optional[float] = None,
) -> SweepOutcome:
    """Passivity indices of one inverter's small-signal port map.

    The operating point comes from the setpoint-consistent input for the
    requested load current; overriding i_dc_ref moves the equilibrium off
    the setpoint (found by Newton iteration).
    """
    inv = _inverter_by_bus(cfg, bus)
    u0, eq = setpoint_input(inv.params, inv.gains, np.asarray(i_load_dq, dtype=float))
    if i_dc_ref is not None:
        u0 = dataclasses.replace(u0, i_dc_ref=i_dc_ref)
        eq = equilibrium(inv.params, inv.gains, u0)
    ss = linearize(inv.params, inv.gains, eq)
    result = sweep(ss, default_grid() if grid is None else grid)
    finite = np.isfinite(result.ifp) & np.isfinite(result.ofp)
    all_positive = bool(
        finite.any() and (result.ifp[finite] > 0).all() and (result.ofp[finite] > 0).all()
    )
    return SweepOutcome(
        bus=bus,
        omega=result.omega,
        ifp=result.ifp,
        ofp=result.ofp,
        gaps=result.gaps,
        all_positive=all_positive,
    )


def export_sweep_csv(outcome: SweepOutcome, path: Path) -> None:
    """Columns: omega_rad_s, freq_hz, ifp, ofp.  Gaps appear as nan."""
    table = np.column_stack(
        [outcome.omega, outcome.omega / (2.0 * math.pi), outcome.ifp, outcome.ofp]
    )
    np.savetxt(
        path, table, fmt="%.12g", delimiter=",",
        header="omega_rad_s,freq_hz,ifp,ofp", comments="",
    )


# ---------------------------------------------------------------------------
# simulate


@dataclass(frozen=True)
class SimulateOutcome:
    settled: bool
    peak_metric: float
    final_metric: float
    pre_event_load_powers: dict[int, tuple[float, float]]
    applied_events: tuple[dict, ...]
    skipped_events: tuple[dict, ...]
    n_samples: int
    t_end: float
    dt: float
    csv_path: Optional[str]


def simulate_network(
    cfg: NetworkConfig,
    out_dir: Optional[Path] = None,
    t_end: Optional[float] = None,
    dt: Optional[float] = None,
    basename: str = "trajectory",
) -> SimulateOutcome:
    """Run the configured scenario and optionally export the trajectory."""
    t_end = cfg.sim.t_end if t_end is None else t_end
    dt = cfg.sim.dt if dt is None else dt
    scenario = run_scenario(cfg, t_end=t_end, dt=dt)
    skipped = tuple(
        dataclasses.asdict(ev) for ev in cfg.events if ev.time >= t_end
    )
    csv_path = None
    if out_dir is not None:
        path = Path(out_dir) / f"{basename}.csv"
        export_csv(scenario.sim, NetworkModel(cfg), path)
        csv_path = str(path)
    return SimulateOutcome(
        settled=scenario.settled,
        peak_metric=scenario.peak_metric,
        final_metric=scenario.final_metric,
        pre_event_load_powers=scenario.pre_event_load_powers,
        applied_events=tuple(
            dataclasses.asdict(ev) for ev in scenario.sim.applied_events
        ),
        skipped_events=skipped,
        n_samples=int(scenario.sim.times.size),
        t_end=t_end,
        dt=dt,
        csv_path=csv_path,
    )


# ---------------------------------------------------------------------------
# verify


@dataclass(frozen=True)
class VerifyEntry:
    seed: int
    slack: float
    tol: float
    satisfied: bool
    storage_start: float
    storage_end: float
    supplied_integral: float
    pointwise_fraction_ok: float
    largest_rho: float
    reference_in_envelope: bool


@dataclass(frozen=True)
class VerifyOutcome:
    bus: int
    lam: float
    all_satisfied: bool
    entries: tuple[VerifyEntry, ...]


def default_input_spec(inv: InverterSpec, base_voltage_ll: float, i_load_dq) -> InputSpec:
    """Excitation scaled to the machine rating: small against the envelope,
    large against integration noise."""
    u0, _ = setpoint_input(inv.params, inv.gains, np.asarray(i_load_dq, dtype=float))
    i_rated_peak = math.sqrt(2.0) * inv.s_rated / (math.sqrt(3.0) * base_voltage_ll)
    return InputSpec(
        base=u0,
        amp_dc=0.01 * i_rated_peak,
        amp_load=0.01 * i_rated_peak,
        dev_v_dc=0.02 * inv.gains.v_dc_star,
        dev_v_ac=0.02 * inv.params.mu * inv.gains.v_dc_star,
        dev_i_ac=0.01 * i_rated_peak,
        dev_theta=0.1,
    )


def verify_inverter(
    cfg: NetworkConfig,
    bus: int,
    seeds: Sequence[int],
    lam: Optional[float] = None,
    t_end: float = 0.3,
    dt: float = 2e-5,
    spec: Optional[InputSpec] = None,
) -> tuple[VerifyOutcome, list]:
    """Dissipation checks on randomized trajectory pairs for one inverter.

    The storage weight comes from the stored certificate unless overridden;
    machines without one get a synthesized certificate first.  Returns the
    outcome plus the raw pairs for trace export.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    inv = _inverter_by_bus(cfg, bus)
    cert = inv.certificate
    if cert is None:
        envelope = default_envelope(inv.s_rated, cfg.base_voltage_ll, inv.gains.v_dc_star)
        picked = synthesize_certificate(inv.params, inv.gains, envelope)
        if isinstance(picked, InfeasibilityWitness):
            raise ValueError(
                f"no certificate for bus {bus} and synthesis failed: {picked.violated}"
            )
        cert = picked
    if lam is not None:
        cert = Certificate(eps1=cert.eps1, eps2=cert.eps2, lam=lam, envelope=cert.envelope)
    if spec is None:
        spec = default_input_spec(inv, cfg.base_voltage_ll, (0.0, 0.0))
    pairs = batch_trajectory_pairs(inv.params, inv.gains, spec, seeds, t_end, dt)
    entries = []
    for pair, seed in zip(pairs, seeds):
        rep = dissipation_check(pair, inv.params, inv.gains, cert.lam, cert.envelope, seed=seed)
        entries.append(
            VerifyEntry(
                seed=seed,
                slack=rep.slack,
                tol=rep.tol,
                satisfied=rep.satisfied,
                storage_start=rep.storage_start,
                storage_end=rep.storage_end,
                supplied_integral=rep.supplied_integral,
                pointwise_fraction_ok=rep.pointwise_fraction_ok,
                largest_rho=rep.largest_rho,
                reference_in_envelope=rep.reference_in_envelope,
            )
        )
    outcome = VerifyOutcome(
        bus=bus,
        lam=cert.lam,
        all_satisfied=all(e.satisfied for e in entries),
        entries=tuple(entries),
    )
    return outcome, pairs


def export_verify_csv(
    outcome: VerifyOutcome,
    pairs: Sequence,
    inv: InverterSpec,
    path: Path,
    stride: int = 10,
) -> None:
    """Pointwise storage and supplied rate per seed for plotting."""
    rows = []
    for entry, pair in zip(outcome.entries, pairs):
        v = incremental_storage_series(pair, inv.params, outcome.lam)
        s = supplied_rate_series(pair)
        sel = np.arange(0, pair.times.size, stride)
        block = np.column_stack(
            [np.full(sel.size, entry.seed), pair.times[sel], v[sel], s[sel]]
        )
        rows.append(block)
    np.savetxt(
        path, np.vstack(rows), fmt="%.12g", delimiter=",",
        header="seed,time_s,storage_J,supplied_rate_W", comments="",
    )


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class RunManifest:
    """Reproducibility anchor emitted once per artifact-producing run."""

    command: str
    config_sha256: str
    tool_version: str
    created_utc: str
    parameters: dict
    resolved_si: dict
    outputs: tuple[str, ...]
    results: dict = field(default_factory=dict)


def _resolved_si(cfg: NetworkConfig) -> dict:
    inverters = {}
    for inv in cfg.inverters:
        inverters[str(inv.bus)] = {
            "s_rated_va": inv.s_rated,
            "c_dc_f": inv.params.c_dc,
            "g_dc_s": inv.params.g_dc,
            "kappa_s": inv.params.kappa,
            "c_f_f": inv.params.c_f,
            "g_f_s": inv.params.g_f,
            "l_f_h": inv.params.l_f,
            "r_f_ohm": inv.params.r_f,
            "mu": inv.params.mu,
            "eta": inv.gains.eta,
            "gamma": inv.gains.gamma,
            "v_dc_star_v": inv.gains.v_dc_star,
            "theta_star0_rad": inv.gains.theta_star0,
        }
    return {
        "base_power_va": cfg.base_power,
        "base_voltage_ll_v": cfg.base_voltage_ll,
        "omega0_rad_s": cfg.omega0,
        "bus_capacitance_f": cfg.bus_capacitance,
        "inverters": inverters,
    }


def build_manifest(
    command: str,
    cfg: NetworkConfig,
    config_text: str,
    parameters: dict,
    outputs: Sequence[str],
    results: dict,
) -> RunManifest:
    return RunManifest(
        command=command,
        config_sha256=config_fingerprint(config_text),
        tool_version=__version__,
        created_utc=datetime.now(timezone.utc).isoformat(),
        parameters=parameters,
        resolved_si=_resolved_si(cfg),
        outputs=tuple(outputs),
        results=results,
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    return obj


def write_manifest(manifest: RunManifest, out_dir: Path) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return path


def write_json_report(payload, out_dir: Path, name: str) -> Path:
    path = Path(out_dir) / name
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path
