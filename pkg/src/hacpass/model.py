"""Averaged two-level voltage-source inverter with hybrid angle control.

State convention (stationary alpha-beta frame, power-invariant Clarke
scaling so that p = v^T i and the norm of a balanced voltage vector equals
the line-to-line RMS value):

    x = (v_dc, v_ac[2], i_ac[2], theta)

The DC current command is i_dc = i_dc_ref + kappa * (v_dc_star - v_dc),
so the effective DC-side conductance is g_dc + kappa.  The modulation
vector is m = mu * psi(theta) with psi(theta) = (cos theta, sin theta);
the switch ports i_x = m . i_ac and v_x = m * v_dc are lossless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "J",
    "InverterParams",
    "HacGains",
    "InverterState",
    "PortInput",
    "ErrorState",
    "psi",
    "modulation",
    "hac_angle_rate",
    "closed_loop_rhs",
    "port_output",
    "error_rhs",
    "storage",
    "per_unit_to_si",
    "si_to_per_unit",
]

# 90 degree counterclockwise rotation; J @ psi(theta) = d psi / d theta.
J = np.array([[0.0, -1.0], [1.0, 0.0]])


def psi(theta: float) -> np.ndarray:
    """Unit modulation direction (cos theta, sin theta)."""
    return np.array([math.cos(theta), math.sin(theta)])


@dataclass(frozen=True)
class InverterParams:
    """Filter and DC-link hardware in SI units.

    c_dc [F] and c_f [F] are the DC-link and filter capacitances,
    g_dc [S] and g_f [S] the parallel conductances, l_f [H] and r_f [Ohm]
    the filter inductance and resistance, mu the modulation magnitude in
    [0, 1], and kappa [S] the proportional DC-source gain.
    """

    c_dc: float
    g_dc: float
    c_f: float
    g_f: float
    l_f: float
    r_f: float
    mu: float
    kappa: float

    def __post_init__(self) -> None:
        for name in ("c_dc", "c_f", "l_f", "r_f"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("g_dc", "g_f", "kappa"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")

    @property
    def g_dc_eff(self) -> float:
        """Effective DC conductance g_dc + kappa (never stored)."""
        return self.g_dc + self.kappa


@dataclass(frozen=True)
class HacGains:
    """Hybrid angle control gains and setpoints.

    theta_star(t) = theta_star0 + omega0 * t is the angle reference in the
    stationary frame; eta [rad/(V s)] couples the DC voltage error into the
    angle rate and gamma [rad/s] is the angle damping gain.
    """

    omega0: float
    eta: float
    gamma: float
    v_dc_star: float
    theta_star0: float

    def __post_init__(self) -> None:
        if self.omega0 < 0.0:
            raise ValueError(f"omega0 must be nonnegative, got {self.omega0}")
        if self.eta < 0.0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.v_dc_star <= 0.0:
            raise ValueError(f"v_dc_star must be positive, got {self.v_dc_star}")

    def theta_star(self, t: float) -> float:
        return self.theta_star0 + self.omega0 * t


@dataclass(frozen=True)
class InverterState:
    v_dc: float
    v_ac: np.ndarray
    i_ac: np.ndarray
    theta: float

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.v_dc, self.v_ac[0], self.v_ac[1], self.i_ac[0], self.i_ac[1], self.theta]
        )

    @staticmethod
    def from_vector(x: np.ndarray) -> "InverterState":
        x = np.asarray(x, dtype=float)
        if x.shape != (6,):
            raise ValueError(f"state vector must have shape (6,), got {x.shape}")
        return InverterState(x[0], x[1:3].copy(), x[3:5].copy(), x[5])


@dataclass(frozen=True)
class PortInput:
    """Exogenous inputs: DC current reference [A] and AC load current [A].

    The passive port pairing uses u = (i_dc_ref, -i_load) against
    y = (v_dc, v_ac); i_load is stored unsigned, consumers apply the sign.
    """

    i_dc_ref: float
    i_load: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.array([self.i_dc_ref, self.i_load[0], self.i_load[1]])


@dataclass(frozen=True)
class ErrorState:
    """Deviation between two trajectories: d_theta is an angle difference."""

    d_v_dc: float
    d_v_ac: np.ndarray
    d_i_ac: np.ndarray
    d_theta: float


def modulation(theta: float, mu: float) -> np.ndarray:
    """Modulation vector m = mu * (cos theta, sin theta)."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    return mu * psi(theta)


def hac_angle_rate(theta: float, v_dc: float, t: float, g: HacGains) -> float:
    """Angle dynamics: omega0 + eta*(v_dc - v_dc_star) - gamma*sin((theta - theta_star(t))/2)."""
    return (
        g.omega0
        + g.eta * (v_dc - g.v_dc_star)
        - g.gamma * math.sin(0.5 * (theta - g.theta_star(t)))
    )


def _rhs_array(t: float, x: np.ndarray, u: np.ndarray, p: InverterParams, g: HacGains) -> np.ndarray:
    """Closed-loop derivative on raw arrays; x = (v_dc, v_ac, i_ac, theta), u = (i_dc_ref, i_load)."""
    v_dc = x[0]
    v_ac = x[1:3]
    i_ac = x[3:5]
    theta = x[5]
    ps = psi(theta)
    i_dc = u[0] + p.kappa * (g.v_dc_star - v_dc)
    out = np.empty(6)
    out[0] = (-p.g_dc * v_dc + i_dc - p.mu * (ps @ i_ac)) / p.c_dc
    out[1:3] = (-p.g_f * v_ac - u[1:3] + i_ac) / p.c_f
    out[3:5] = (-p.r_f * i_ac - v_ac + p.mu * v_dc * ps) / p.l_f
    out[5] = hac_angle_rate(theta, v_dc, t, g)
    return out


def closed_loop_rhs(
    x: InverterState, u: PortInput, p: InverterParams, g: HacGains, t: float
) -> InverterState:
    """Time derivative of the closed-loop inverter, returned in state layout."""
    dx = _rhs_array(t, x.as_vector(), u.as_vector(), p, g)
    return InverterState.from_vector(dx)


def port_output(x: InverterState) -> tuple[float, np.ndarray]:
    """Passive port output y = (v_dc, v_ac)."""
    return x.v_dc, np.array(x.v_ac, dtype=float)


def error_rhs(
    dx: ErrorState,
    ref_v_dc: float,
    ref_i_ac: np.ndarray,
    ref_theta: float,
    p: InverterParams,
    g: HacGains,
    du: PortInput | None = None,
) -> ErrorState:
    """Error dynamics about a reference trajectory with theta_ref = theta_star(t).

    With du = None the input deviation terms vanish.  Equals the difference
    of two closed_loop_rhs evaluations whenever the reference angle tracks
    the setpoint angle exactly.
    """
    ref_i_ac = np.asarray(ref_i_ac, dtype=float)
    theta = ref_theta + dx.d_theta
    ps = psi(theta)
    d_psi = ps - psi(ref_theta)
    d_i_dc_ref = 0.0 if du is None else du.i_dc_ref
    d_i_load = np.zeros(2) if du is None else np.asarray(du.i_load, dtype=float)

    d_v_dc_dot = (
        -p.g_dc_eff * dx.d_v_dc
        + d_i_dc_ref
        - p.mu * (d_psi @ ref_i_ac + ps @ dx.d_i_ac)
    ) / p.c_dc
    d_v_ac_dot = (-p.g_f * dx.d_v_ac + dx.d_i_ac - d_i_load) / p.c_f
    d_i_ac_dot = (
        -p.r_f * dx.d_i_ac - dx.d_v_ac + p.mu * (ps * dx.d_v_dc + d_psi * ref_v_dc)
    ) / p.l_f
    d_theta_dot = g.eta * dx.d_v_dc - g.gamma * math.sin(0.5 * dx.d_theta)
    return ErrorState(d_v_dc_dot, d_v_ac_dot, d_i_ac_dot, d_theta_dot)


def storage(dx: ErrorState, p: InverterParams, lam: float) -> float:
    """Incremental storage V = quadratic electrical energy + 2*lam*(1 - cos(d_theta/2)).

    Positive definite for |d_theta| < 2*pi; lam must be positive.
    """
    if lam <= 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    quad = (
        p.c_dc * dx.d_v_dc**2
        + p.c_f * float(np.dot(dx.d_v_ac, dx.d_v_ac))
        + p.l_f * float(np.dot(dx.d_i_ac, dx.d_i_ac))
    )
    return 0.5 * quad + 2.0 * lam * (1.0 - math.cos(0.5 * dx.d_theta))


_PU_KINDS = ("resistance", "inductance", "capacitance", "conductance")


def _z_base(base_power: float, base_voltage_ll: float) -> float:
    if base_power <= 0.0:
        raise ValueError(f"base_power must be positive, got {base_power}")
    if base_voltage_ll <= 0.0:
        raise ValueError(f"base_voltage_ll must be positive, got {base_voltage_ll}")
    return base_voltage_ll**2 / base_power


def per_unit_to_si(
    value_pu: float,
    kind: str,
    base_power: float,
    base_voltage_ll: float,
    base_frequency: float,
) -> float:
    """Convert a per-unit impedance-like quantity to SI.

    Z_base = V_ll^2 / S, omega_base = 2*pi*f.  resistance -> Ohm,
    inductance -> H, capacitance -> F, conductance -> S.
    """
    if base_frequency <= 0.0:
        raise ValueError(f"base_frequency must be positive, got {base_frequency}")
    z_base = _z_base(base_power, base_voltage_ll)
    omega_base = 2.0 * math.pi * base_frequency
    if kind == "resistance":
        return value_pu * z_base
    if kind == "inductance":
        return value_pu * z_base / omega_base
    if kind == "capacitance":
        return value_pu / (z_base * omega_base)
    if kind == "conductance":
        return value_pu / z_base
    raise ValueError(f"kind must be one of {_PU_KINDS}, got {kind!r}")


def si_to_per_unit(
    value_si: float,
    kind: str,
    base_power: float,
    base_voltage_ll: float,
    base_frequency: float,
) -> float:
    """Inverse of per_unit_to_si."""
    if base_frequency <= 0.0:
        raise ValueError(f"base_frequency must be positive, got {base_frequency}")
    z_base = _z_base(base_power, base_voltage_ll)
    omega_base = 2.0 * math.pi * base_frequency
    if kind == "resistance":
        return value_si / z_base
    if kind == "inductance":
        return value_si * omega_base / z_base
    if kind == "capacitance":
        return value_si * z_base * omega_base
    if kind == "conductance":
        return value_si * z_base
    raise ValueError(f"kind must be one of {_PU_KINDS}, got {kind!r}")
