"""Trajectory-level validation of the incremental dissipation inequality.

Integrates pairs of closed-loop trajectories in the rotating frame (the
dynamics are autonomous there, so the check is invariant to time shifts),
forms the incremental storage between them, and tests

    V(T) - V(0) <= integral of (du . dy) dt

where du pairs the DC current reference with the negated load current and
dy the DC and AC voltages.  Certified parameter sets must satisfy this for
every pair whose reference stays inside the certificate envelope; the
module also reports pointwise rate violations and the largest output
strictness rho such that the inequality still holds with the supply
weakened by rho * |dy|^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import simpson

from .certify import Certificate, OperatingEnvelope
from .model import HacGains, InverterParams, PortInput
from .smallsignal import equilibrium

__all__ = [
    "InputSpec",
    "TrajectoryPair",
    "DissipationReport",
    "random_trajectory_pair",
    "batch_trajectory_pairs",
    "incremental_storage_series",
    "supplied_rate_series",
    "dissipation_check",
    "output_strict_check",
    "verify_certificate",
]


@dataclass(frozen=True)
class InputSpec:
    """Randomized excitation around a constant base input.

    Tones are sinusoids with log-uniform frequencies; initial conditions are
    offset from the base-input equilibrium by the stated deviations.  The
    reference trajectory uses the same recipe scaled by ref_scale, so
    ref_scale = 0 pins it to the equilibrium.
    """

    base: PortInput
    amp_dc: float = 0.0
    amp_load: float = 0.0
    dev_v_dc: float = 10.0
    dev_v_ac: float = 10.0
    dev_i_ac: float = 100.0
    dev_theta: float = 0.05
    ref_scale: float = 0.2
    n_tones: int = 3
    freq_low: float = 5.0
    freq_high: float = 500.0

    def __post_init__(self):
        if self.amp_dc < 0 or self.amp_load < 0:
            raise ValueError("tone amplitudes must be nonnegative")
        if not 0.0 < self.freq_low <= self.freq_high:
            raise ValueError("need 0 < freq_low <= freq_high")
        if self.n_tones < 0:
            raise ValueError("n_tones must be nonnegative")
        if self.ref_scale < 0:
            raise ValueError("ref_scale must be nonnegative")


@dataclass(frozen=True)
class TrajectoryPair:
    """Sampled rotating-frame pair: states (n, 6) and inputs (n, 3).

    Input columns are (i_dc_ref, i_load_d, i_load_q) with the load current
    stored unsigned; the port supply negates it.
    """

    times: np.ndarray
    z_a: np.ndarray
    z_b: np.ndarray
    u_a: np.ndarray
    u_b: np.ndarray


@dataclass(frozen=True)
class DissipationReport:
    seed: Optional[int]
    storage_start: float
    storage_end: float
    supplied_integral: float
    slack: float
    tol: float
    satisfied: bool
    n_samples: int
    pointwise_violations: int
    pointwise_fraction_ok: float
    max_pointwise_violation: float
    largest_rho: float
    reference_in_envelope: bool


def _rhs_batch(z: np.ndarray, u: np.ndarray, p: InverterParams, g: HacGains) -> np.ndarray:
    """Rotating-frame closed loop for a batch of states; z (m, 6), u (m, 3)."""
    out = np.empty_like(z)
    cos_t = np.cos(z[:, 5])
    sin_t = np.sin(z[:, 5])
    i_dc = u[:, 0] + p.kappa * (g.v_dc_star - z[:, 0])
    i_sw = cos_t * z[:, 3] + sin_t * z[:, 4]
    out[:, 0] = (-p.g_dc * z[:, 0] + i_dc - p.mu * i_sw) / p.c_dc
    out[:, 1] = (-p.g_f * z[:, 1] - u[:, 1] + z[:, 3]) / p.c_f + g.omega0 * z[:, 2]
    out[:, 2] = (-p.g_f * z[:, 2] - u[:, 2] + z[:, 4]) / p.c_f - g.omega0 * z[:, 1]
    out[:, 3] = (-p.r_f * z[:, 3] - z[:, 1] + p.mu * z[:, 0] * cos_t) / p.l_f + g.omega0 * z[:, 4]
    out[:, 4] = (-p.r_f * z[:, 4] - z[:, 2] + p.mu * z[:, 0] * sin_t) / p.l_f - g.omega0 * z[:, 3]
    out[:, 5] = g.eta * (z[:, 0] - g.v_dc_star) - g.gamma * np.sin(0.5 * (z[:, 5] - g.theta_star0))
    return out


def _integrate_batch(
    z0: np.ndarray, u_half: np.ndarray, p: InverterParams, g: HacGains, dt: float
) -> np.ndarray:
    """RK4 over a batch; u_half holds inputs on the half-step grid
    (2 n_steps + 1, m, 3).  Returns states (n_steps + 1, m, 6)."""
    n_half = u_half.shape[0]
    n_steps = (n_half - 1) // 2
    m = z0.shape[0]
    out = np.empty((n_steps + 1, m, 6))
    out[0] = z0
    z = z0.copy()
    half = 0.5 * dt
    sixth = dt / 6.0
    for k in range(n_steps):
        u0 = u_half[2 * k]
        um = u_half[2 * k + 1]
        u1 = u_half[2 * k + 2]
        k1 = _rhs_batch(z, u0, p, g)
        k2 = _rhs_batch(z + half * k1, um, p, g)
        k3 = _rhs_batch(z + half * k2, um, p, g)
        k4 = _rhs_batch(z + dt * k3, u1, p, g)
        z = z + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        out[k + 1] = z
    return out


def _draw_tones(rng: np.random.Generator, spec: InputSpec, scale: float) -> list[tuple]:
    tones = []
    for _ in range(spec.n_tones):
        w = math.exp(rng.uniform(math.log(spec.freq_low), math.log(spec.freq_high)))
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amp = rng.uniform(0.3, 1.0, size=3) * np.array(
            [spec.amp_dc, spec.amp_load, spec.amp_load]
        )
        tones.append((w, phase, amp * scale))
    return tones


def _input_series(base: np.ndarray, tones: list[tuple], t_half: np.ndarray) -> np.ndarray:
    u = np.tile(base, (t_half.size, 1))
    for w, phase, amp in tones:
        u += np.sin(w * t_half + phase)[:, None] * amp[None, :]
    return u


def _draw_offset(rng: np.random.Generator, spec: InputSpec, scale: float) -> np.ndarray:
    devs = np.array(
        [
            spec.dev_v_dc,
            spec.dev_v_ac,
            spec.dev_v_ac,
            spec.dev_i_ac,
            spec.dev_i_ac,
            spec.dev_theta,
        ]
    )
    return rng.uniform(-1.0, 1.0, size=6) * devs * scale


def batch_trajectory_pairs(
    p: InverterParams,
    g: HacGains,
    spec: InputSpec,
    seeds: Sequence[int],
    t_end: float = 0.3,
    dt: float = 2e-5,
    chunk: int = 32,
) -> list[TrajectoryPair]:
    """Simulate one perturbed/reference pair per seed, vectorized in chunks."""
    n_steps = round(t_end / dt)
    if abs(t_end / dt - n_steps) > 1e-9 * max(t_end / dt, 1.0):
        raise ValueError(f"t_end {t_end} is not a multiple of dt {dt}")
    times = np.arange(n_steps + 1) * dt
    t_half = np.arange(2 * n_steps + 1) * (0.5 * dt)
    eq = equilibrium(p, g, spec.base)
    z_eq = eq.as_vector()
    base = spec.base.as_vector()

    pairs: list[TrajectoryPair] = []
    seeds = list(seeds)
    for lo in range(0, len(seeds), chunk):
        group = seeds[lo : lo + chunk]
        m = len(group)
        z0 = np.empty((2 * m, 6))
        u_half = np.empty((2 * n_steps + 1, 2 * m, 3))
        for j, seed in enumerate(group):
            rng = np.random.default_rng(seed)
            z0[2 * j] = z_eq + _draw_offset(rng, spec, 1.0)
            u_half[:, 2 * j, :] = _input_series(base, _draw_tones(rng, spec, 1.0), t_half)
            z0[2 * j + 1] = z_eq + _draw_offset(rng, spec, spec.ref_scale)
            u_half[:, 2 * j + 1, :] = _input_series(
                base, _draw_tones(rng, spec, spec.ref_scale), t_half
            )
        states = _integrate_batch(z0, u_half, p, g, dt)
        for j, seed in enumerate(group):
            pairs.append(
                TrajectoryPair(
                    times=times.copy(),
                    z_a=states[:, 2 * j, :].copy(),
                    z_b=states[:, 2 * j + 1, :].copy(),
                    u_a=u_half[::2, 2 * j, :].copy(),
                    u_b=u_half[::2, 2 * j + 1, :].copy(),
                )
            )
    return pairs


def random_trajectory_pair(
    p: InverterParams,
    g: HacGains,
    spec: InputSpec,
    seed: int,
    t_end: float = 0.3,
    dt: float = 2e-5,
) -> TrajectoryPair:
    return batch_trajectory_pairs(p, g, spec, [seed], t_end, dt)[0]


def incremental_storage_series(pair: TrajectoryPair, p: InverterParams, lam: float) -> np.ndarray:
    """V(t) between the two trajectories at every sample."""
    d = pair.z_a - pair.z_b
    quad = (
        p.c_dc * d[:, 0] ** 2
        + p.c_f * (d[:, 1] ** 2 + d[:, 2] ** 2)
        + p.l_f * (d[:, 3] ** 2 + d[:, 4] ** 2)
    )
    return 0.5 * quad + 2.0 * lam * (1.0 - np.cos(0.5 * d[:, 5]))


def supplied_rate_series(pair: TrajectoryPair) -> np.ndarray:
    """du . dy at every sample; the load current enters the port negated."""
    dz = pair.z_a - pair.z_b
    du = pair.u_a - pair.u_b
    return du[:, 0] * dz[:, 0] - du[:, 1] * dz[:, 1] - du[:, 2] * dz[:, 2]


def _storage_rate_series(
    pair: TrajectoryPair, p: InverterParams, g: HacGains, lam: float
) -> np.ndarray:
    fa = _rhs_batch(pair.z_a, pair.u_a, p, g)
    fb = _rhs_batch(pair.z_b, pair.u_b, p, g)
    d = pair.z_a - pair.z_b
    dd = fa - fb
    return (
        p.c_dc * d[:, 0] * dd[:, 0]
        + p.c_f * (d[:, 1] * dd[:, 1] + d[:, 2] * dd[:, 2])
        + p.l_f * (d[:, 3] * dd[:, 3] + d[:, 4] * dd[:, 4])
        + lam * np.sin(0.5 * d[:, 5]) * dd[:, 5]
    )


def _check_envelope(pair: TrajectoryPair, envelope: Optional[OperatingEnvelope]) -> bool:
    if envelope is None:
        return True
    v_ok = float(np.max(pair.z_b[:, 0])) <= envelope.v_dc_bar_max
    i_norm = np.sqrt(pair.z_b[:, 3] ** 2 + pair.z_b[:, 4] ** 2)
    return v_ok and float(np.max(i_norm)) <= envelope.i_ac_norm_max


def output_strict_check(
    pair: TrajectoryPair,
    p: InverterParams,
    g: HacGains,
    lam: float,
    tol: float,
    max_doublings: int = 60,
) -> float:
    """Largest rho with V(t) - V(0) <= int (du.dy - rho |dy|^2) on every prefix."""
    v = incremental_storage_series(pair, p, lam)
    s = supplied_rate_series(pair)
    dz = pair.z_a - pair.z_b
    y_sq = dz[:, 0] ** 2 + dz[:, 1] ** 2 + dz[:, 2] ** 2
    dt = pair.times[1] - pair.times[0]
    # prefix integrals on the trapezoid rule: monotone in rho either way
    cum_s = np.concatenate([[0.0], np.cumsum(0.5 * (s[1:] + s[:-1]) * dt)])
    cum_y = np.concatenate([[0.0], np.cumsum(0.5 * (y_sq[1:] + y_sq[:-1]) * dt)])
    dv = v - v[0]

    def feasible(rho: float) -> bool:
        return bool(np.all(cum_s - rho * cum_y - dv >= -tol))

    if not feasible(0.0):
        return 0.0
    hi = 1e-6
    for _ in range(max_doublings):
        if not feasible(hi):
            break
        hi *= 2.0
    else:
        return math.inf
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def dissipation_check(
    pair: TrajectoryPair,
    p: InverterParams,
    g: HacGains,
    lam: float,
    envelope: Optional[OperatingEnvelope] = None,
    seed: Optional[int] = None,
) -> DissipationReport:
    """Integral and pointwise dissipation tests for one trajectory pair.

    The tolerance scales with dt^2, the horizon, and the larger of the
    supply magnitude and the storage swing rate, so refining the grid
    tightens the test.
    """
    v = incremental_storage_series(pair, p, lam)
    s = supplied_rate_series(pair)
    times = pair.times
    dt = float(times[1] - times[0])
    t_end = float(times[-1] - times[0])
    supplied = float(simpson(s, x=times))
    power_scale = max(1.0, float(np.max(np.abs(s))), float(np.max(v)) / max(t_end, 1e-12))
    tol = 10.0 * dt * dt * t_end * power_scale
    slack = supplied - (float(v[-1]) - float(v[0]))

    rate = _storage_rate_series(pair, p, g, lam)
    excess = rate - s
    rate_tol = 10.0 * dt * dt * power_scale
    violations = int(np.count_nonzero(excess > rate_tol))
    n = times.size
    report = DissipationReport(
        seed=seed,
        storage_start=float(v[0]),
        storage_end=float(v[-1]),
        supplied_integral=supplied,
        slack=slack,
        tol=tol,
        satisfied=slack >= -tol,
        n_samples=n,
        pointwise_violations=violations,
        pointwise_fraction_ok=1.0 - violations / n,
        max_pointwise_violation=float(np.max(excess)),
        largest_rho=output_strict_check(pair, p, g, lam, tol),
        reference_in_envelope=_check_envelope(pair, envelope),
    )
    return report


def verify_certificate(
    p: InverterParams,
    g: HacGains,
    cert: Certificate,
    spec: InputSpec,
    seeds: Sequence[int],
    t_end: float = 0.3,
    dt: float = 2e-5,
    chunk: int = 32,
) -> list[DissipationReport]:
    """Run the pairwise dissipation check for every seed under a certificate."""
    pairs = batch_trajectory_pairs(p, g, spec, seeds, t_end, dt, chunk)
    return [
        dissipation_check(pair, p, g, cert.lam, cert.envelope, seed=seed)
        for pair, seed in zip(pairs, seeds)
    ]
