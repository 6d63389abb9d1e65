"""Request and response bodies for the HTTP service.

Configs travel as the same structured document the TOML files hold
(NetworkConfigModel), so one schema governs both front ends.  Non-finite
floats (sweep gaps, unbounded strictness) are mapped to null in responses
because strict JSON has no encoding for them.
"""

from __future__ import annotations

import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config import NetworkConfigModel


def none_if_nonfinite(x: float) -> Optional[float]:
    return float(x) if math.isfinite(x) else None


class _Body(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CertifyRequest(_Body):
    config: NetworkConfigModel
    synthesize: bool = False
    eta: Optional[float] = Field(None, ge=0)
    gamma: Optional[float] = Field(None, gt=0)


class CertifyEntryOut(_Body):
    bus: int
    feasible: bool
    synthesized: bool
    margins: Optional[tuple[float, float, float]]
    q_min_eig: Optional[float]
    eps1: Optional[float]
    eps2: Optional[float]
    lam: Optional[float]
    infeasibility: Optional[str]


class CertifyResponse(_Body):
    all_feasible: bool
    entries: list[CertifyEntryOut]


class SweepRequest(_Body):
    config: NetworkConfigModel
    bus: int
    n_points: int = Field(400, ge=1, le=5000)
    omega_min: float = Field(1e-1, gt=0)
    omega_max: float = Field(1e4, gt=0)
    i_load_d: float = 0.0
    i_load_q: float = 0.0
    i_dc_ref: Optional[float] = None

    @model_validator(mode="after")
    def _ordered(self):
        if self.omega_max < self.omega_min:
            raise ValueError("omega_max must be >= omega_min")
        return self


class SweepResponse(_Body):
    bus: int
    omega: list[float]
    freq_hz: list[float]
    ifp: list[Optional[float]]
    ofp: list[Optional[float]]
    gaps: list[float]
    all_positive: bool


class SimulateRequest(_Body):
    config: NetworkConfigModel
    # horizon and step caps keep one request's work bounded
    t_end: Optional[float] = Field(None, gt=0, le=30.0)
    dt: Optional[float] = Field(None, gt=0)


class EventOut(_Body):
    time: float
    kind: str
    bus: int
    factor: float


class SimulateResponse(_Body):
    settled: bool
    peak_metric: float
    final_metric: float
    pre_event_load_powers: dict[str, tuple[float, float]]
    applied_events: list[EventOut]
    skipped_events: list[EventOut]
    n_samples: int
    t_end: float
    dt: float


class VerifyRequest(_Body):
    config: NetworkConfigModel
    bus: int
    seeds: int = Field(20, ge=1, le=200)
    seed_start: int = 0
    lam: Optional[float] = Field(None, gt=0)
    t_end: float = Field(0.3, gt=0, le=2.0)
    dt: float = Field(2e-5, gt=0)


class VerifyEntryOut(_Body):
    seed: int
    slack: float
    tol: float
    satisfied: bool
    storage_start: float
    storage_end: float
    supplied_integral: float
    pointwise_fraction_ok: float
    largest_rho: Optional[float]
    reference_in_envelope: bool


class VerifyResponse(_Body):
    bus: int
    lam: float
    all_satisfied: bool
    entries: list[VerifyEntryOut]


class HealthResponse(_Body):
    status: str
    version: str
