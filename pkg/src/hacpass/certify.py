"""Decentralized incremental-passivity certificates for the closed-loop inverter.

A certificate is a triple (eps1, eps2, lam) of Young-inequality splittings
and a storage weight, valid over an operating envelope bounding the
reference DC voltage and AC current norm.  Feasibility is equivalent to
positive definiteness of a 6x6 dissipation matrix Q in the half-angle
error coordinates zeta = (d_v_dc, d_v_ac, d_i_ac, sin(d_theta/2)):

    d/dt V <= (du)^T (dy) - zeta^T Q zeta

The three scalar margins checked here are
    m_ac    = r_f - eps2^2
    m_dc    = g_dc_eff - (eps1 * i_norm * mu)^2
    m_angle = (lam*gamma - 1/eps1^2 - (mu*v_bar/eps2)^2) * m_dc - (lam*eta/2)^2
and Q > 0 iff all three are positive (given g_f > 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import HacGains, InverterParams

__all__ = [
    "OperatingEnvelope",
    "Certificate",
    "CertificateReport",
    "InfeasibilityWitness",
    "default_envelope",
    "build_q",
    "check_conditions",
    "synthesize_certificate",
    "gain_frontier",
]


@dataclass(frozen=True)
class OperatingEnvelope:
    """Bounds on the reference trajectory: max DC voltage [V] and AC current norm [A]."""

    v_dc_bar_max: float
    i_ac_norm_max: float

    def __post_init__(self) -> None:
        if self.v_dc_bar_max <= 0.0:
            raise ValueError(f"v_dc_bar_max must be positive, got {self.v_dc_bar_max}")
        if self.i_ac_norm_max < 0.0:
            raise ValueError(f"i_ac_norm_max must be nonnegative, got {self.i_ac_norm_max}")


@dataclass(frozen=True)
class Certificate:
    eps1: float
    eps2: float
    lam: float
    envelope: OperatingEnvelope

    def __post_init__(self) -> None:
        for name in ("eps1", "eps2", "lam"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class CertificateReport:
    """Outcome of a condition check: analytic margins plus the Q eigenvalue cross-check."""

    feasible: bool
    margins: tuple[float, float, float]
    q_min_eig: float
    certificate: Certificate


@dataclass(frozen=True)
class InfeasibilityWitness:
    """Names the inequality that cannot be satisfied and carries the blocking values."""

    violated: str
    detail: dict


def default_envelope(s_rated: float, v_ll: float, v_dc_star: float) -> OperatingEnvelope:
    """Rated envelope: 1.2x the DC setpoint, 1.5x rated peak phase current."""
    if s_rated <= 0.0 or v_ll <= 0.0:
        raise ValueError("s_rated and v_ll must be positive")
    i_rated_peak = math.sqrt(2.0) * s_rated / (math.sqrt(3.0) * v_ll)
    return OperatingEnvelope(v_dc_bar_max=1.2 * v_dc_star, i_ac_norm_max=1.5 * i_rated_peak)


def _margin_scalars(
    p: InverterParams, g: HacGains, eps1: float, eps2: float, lam: float,
    v_bar: float, i_norm: float,
) -> tuple[float, float, float]:
    m_ac = p.r_f - eps2**2
    m_dc = p.g_dc_eff - (eps1 * i_norm * p.mu) ** 2
    lam_cap = lam * g.gamma - 1.0 / eps1**2 - (p.mu * v_bar / eps2) ** 2
    m_angle = lam_cap * m_dc - (lam * g.eta / 2.0) ** 2
    return m_ac, m_dc, m_angle


def build_q(p: InverterParams, g: HacGains, cert: Certificate) -> np.ndarray:
    """Dissipation matrix in zeta = (d_v_dc, d_v_ac, d_i_ac, sin(d_theta/2))."""
    env = cert.envelope
    m_dc = p.g_dc_eff - (cert.eps1 * env.i_ac_norm_max * p.mu) ** 2
    lam_cap = (
        cert.lam * g.gamma
        - 1.0 / cert.eps1**2
        - (p.mu * env.v_dc_bar_max / cert.eps2) ** 2
    )
    q = np.zeros((6, 6))
    q[0, 0] = m_dc
    q[1, 1] = q[2, 2] = p.g_f
    q[3, 3] = q[4, 4] = p.r_f - cert.eps2**2
    q[5, 5] = lam_cap
    q[0, 5] = q[5, 0] = -cert.lam * g.eta / 2.0
    return q


def check_conditions(p: InverterParams, g: HacGains, cert: Certificate) -> CertificateReport:
    """Evaluate the three certificate inequalities and the Q eigenvalue cross-check.

    feasible is decided by the analytic margins; q_min_eig is reported for
    independent confirmation (they agree whenever g_f > 0, up to eigenvalue
    tolerance).
    """
    env = cert.envelope
    margins = _margin_scalars(
        p, g, cert.eps1, cert.eps2, cert.lam, env.v_dc_bar_max, env.i_ac_norm_max
    )
    q_min_eig = float(np.linalg.eigvalsh(build_q(p, g, cert)).min())
    feasible = all(m > 0.0 for m in margins)
    return CertificateReport(feasible=feasible, margins=margins, q_min_eig=q_min_eig, certificate=cert)


def synthesize_certificate(
    p: InverterParams, g: HacGains, envelope: OperatingEnvelope
) -> Certificate | InfeasibilityWitness:
    """Pick (eps1, eps2, lam) by midpoint rules, or explain why none exists.

    eps2^2 = r_f/2 and eps1^2 = g_dc_eff / (2 (i_norm mu)^2) split the
    resistive margins in half; lam sits at the midpoint of the interval on
    which the angle-coupling quadratic (eta^2/4) lam^2 - gamma b lam + a b
    is negative, where b is the DC margin and a = 1/eps1^2 + (mu v_bar/eps2)^2.
    Never raises on infeasible hardware.
    """
    eps2 = math.sqrt(p.r_f / 2.0)
    mi = p.mu * envelope.i_ac_norm_max
    if mi > 0.0:
        if p.g_dc_eff <= 0.0:
            return InfeasibilityWitness(
                violated="dc_margin",
                detail={"g_dc_eff": p.g_dc_eff, "i_norm_mu": mi},
            )
        eps1 = math.sqrt(p.g_dc_eff / 2.0) / mi
    else:
        # The midpoint rule degenerates when the coupling current vanishes;
        # any positive eps1 works, a unit splitting keeps the frontier finite.
        eps1 = 1.0
    b = p.g_dc_eff - (eps1 * mi) ** 2
    if b <= 0.0:
        return InfeasibilityWitness(
            violated="dc_margin", detail={"g_dc_eff": p.g_dc_eff, "b": b}
        )
    a = 1.0 / eps1**2 + (p.mu * envelope.v_dc_bar_max / eps2) ** 2
    if g.eta == 0.0:
        lam = 2.0 * a / g.gamma
    else:
        disc = (g.gamma * b) ** 2 - g.eta**2 * a * b
        if disc <= 0.0:
            return InfeasibilityWitness(
                violated="angle_margin",
                detail={"discriminant": disc, "a": a, "b": b, "eta": g.eta, "gamma": g.gamma},
            )
        lam = 2.0 * g.gamma * b / g.eta**2
    return Certificate(eps1=eps1, eps2=eps2, lam=lam, envelope=envelope)


def gain_frontier(
    p: InverterParams,
    envelope: OperatingEnvelope,
    gamma: float,
    rtol: float = 1e-6,
    max_doublings: int = 200,
) -> float:
    """Largest eta for which synthesis succeeds at the given gamma, by bisection."""
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")

    def feasible(eta: float) -> bool:
        g = HacGains(omega0=0.0, eta=eta, gamma=gamma, v_dc_star=1.0, theta_star0=0.0)
        return isinstance(synthesize_certificate(p, g, envelope), Certificate)

    if not feasible(0.0):
        return 0.0
    lo, hi = 0.0, 1e-6
    for _ in range(max_doublings):
        if not feasible(hi):
            break
        lo = hi
        hi *= 2.0
    else:
        return math.inf
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
