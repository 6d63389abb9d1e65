"""Shared fixtures: the three-machine hardware roster used across tests.

Ratings: S = 247.5 / 192 / 128 MVA at 690 V line-to-line, 1130 V DC link.
Filter values are per-unit on each machine's own base (l = 0.05, r = 0.05/30,
c = 0.05); DC-link capacitances and conductances and the DC-source gains are
given directly in SI.  Gains: eta = 1e-3 rad/(V s), gamma = 100 rad/s,
setpoints theta_star0 = 0.0108 rad, v_dc_star = 1130 V, 60 Hz system.
"""

import math
from importlib.resources import files

import numpy as np
import pytest

from hacpass.model import HacGains, InverterParams, per_unit_to_si

F_BASE = 60.0
OMEGA0 = 2.0 * math.pi * F_BASE
V_LL = 690.0
V_DC = 1130.0
THETA_STAR0 = 0.0108
MU_DEFAULT = math.sqrt(2.0) * V_LL * math.sqrt(2.0 / 3.0) / V_DC

RATINGS = {
    1: dict(s_rated=247.5e6, c_dc=8.07, g_dc=0.19, kappa=1.9494e4),
    2: dict(s_rated=192.0e6, c_dc=14.44, g_dc=0.15, kappa=1.5123e4),
    3: dict(s_rated=128.0e6, c_dc=5.78, g_dc=0.10, kappa=1.0082e4),
}

# Feasible certificate witness for machine 3 under the rated envelope.
WITNESS_3 = dict(eps1=2.2097e-4, eps2=1.4375e-3, lam=1e10)


def make_params(idx: int, mu: float = MU_DEFAULT) -> InverterParams:
    r = RATINGS[idx]
    base = dict(base_power=r["s_rated"], base_voltage_ll=V_LL, base_frequency=F_BASE)
    return InverterParams(
        c_dc=r["c_dc"],
        g_dc=r["g_dc"],
        c_f=per_unit_to_si(0.05, "capacitance", **base),
        g_f=per_unit_to_si(1e-4, "conductance", **base),
        l_f=per_unit_to_si(0.05, "inductance", **base),
        r_f=per_unit_to_si(0.05 / 30.0, "resistance", **base),
        mu=mu,
        kappa=r["kappa"],
    )


def make_gains(eta: float = 1e-3, gamma: float = 100.0) -> HacGains:
    return HacGains(
        omega0=OMEGA0, eta=eta, gamma=gamma, v_dc_star=V_DC, theta_star0=THETA_STAR0
    )


def rated_current_peak(idx: int) -> float:
    """Rated peak phase current sqrt(2) * S / (sqrt(3) * V_ll)."""
    return math.sqrt(2.0) * RATINGS[idx]["s_rated"] / (math.sqrt(3.0) * V_LL)


@pytest.fixture
def params3() -> InverterParams:
    return make_params(3)


@pytest.fixture
def params2() -> InverterParams:
    return make_params(2)


@pytest.fixture
def gains() -> HacGains:
    return make_gains()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260814)


def ieee9_config_text() -> str:
    return (files("hacpass") / "data" / "ieee9.cfg").read_text()


@pytest.fixture(scope="session")
def ieee9_cfg():
    from hacpass.config import parse_config_text

    return parse_config_text(ieee9_config_text())


# One inverter, one load, one bus: the network reduces to the single-machine
# closed loop with the load current as its port input.  Small and well
# damped, so it is the workhorse for integration-heavy tests.
SINGLE_BUS_CFG = """
[system]
base_mva = 128.0
base_voltage_ll = 690.0

[[buses]]
id = 1

[[loads]]
bus = 1
p_mw = 60.0
q_mvar = 25.0

[[inverters]]
bus = 1
s_rated_mva = 128.0
c_dc_f = 5.78
g_dc_s = 0.10
kappa_s = 1.0082e4
mu = 0.66573
v_dc_star_v = 1130.0
theta_star0_rad = 0.0108

[simulation]
t_end_s = 0.5
dt_s = 5e-5
"""
