"""Small-signal analysis in the synchronously rotating dq frame.

The rotating frame turns the periodic closed loop into an autonomous one:
dq pairs are the stationary alpha-beta pairs rotated by -omega0*t and the
angle state is theta - omega0*t.  Equilibria of the dq dynamics are the
periodic operating points of the stationary model.

Linearization uses half-angle coordinates x = (d_v_dc, d_v_dq, d_i_dq,
d_phi) with d_phi = d_theta/2, matching the storage weight P =
diag(c_dc, c_f, c_f, l_f, l_f, 2*lam).  With that P the feedthrough
identity B^T P = C holds, so the passivity LMI reduces to the state part
-(A^T P + P A)/2 >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .certify import Certificate, CertificateReport, _margin_scalars, build_q
from .model import J, HacGains, InverterParams, PortInput, psi

__all__ = [
    "Equilibrium",
    "StateSpace",
    "SweepResult",
    "ConvergenceError",
    "FrequencyResponseError",
    "dq_rhs",
    "dq_jacobian",
    "setpoint_input",
    "equilibrium",
    "linearize",
    "storage_matrix",
    "lmi_residual",
    "passivity_block_matrix",
    "lmi_report",
    "smallsignal_conditions",
    "ifp",
    "ofp",
    "sweep",
    "default_grid",
]

_I2 = np.eye(2)


class ConvergenceError(RuntimeError):
    """Newton failed; carries the last scaled residual and iterate."""

    def __init__(self, message: str, residual: float, iterations: int, last: np.ndarray):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.last = last


class FrequencyResponseError(RuntimeError):
    """Frequency response evaluation failed at a specific frequency."""

    def __init__(self, message: str, omega: float):
        super().__init__(message)
        self.omega = omega


@dataclass(frozen=True)
class Equilibrium:
    v_dc: float
    v_dq: np.ndarray
    i_dq: np.ndarray
    theta: float
    input_eq: PortInput

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.v_dc, self.v_dq[0], self.v_dq[1], self.i_dq[0], self.i_dq[1], self.theta]
        )


@dataclass(frozen=True)
class StateSpace:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray


@dataclass(frozen=True)
class SweepResult:
    """Passivity indices over a frequency grid; failed points are NaN."""

    omega: np.ndarray
    ifp: np.ndarray
    ofp: np.ndarray
    gaps: tuple[int, ...]


def dq_rhs(z: np.ndarray, u: np.ndarray, p: InverterParams, g: HacGains) -> np.ndarray:
    """Closed-loop derivative in the rotating frame; z = (v_dc, v_dq, i_dq, theta)."""
    v_dc = z[0]
    v_dq = z[1:3]
    i_dq = z[3:5]
    theta = z[5]
    ps = psi(theta)
    i_dc = u[0] + p.kappa * (g.v_dc_star - v_dc)
    out = np.empty(6)
    out[0] = (-p.g_dc * v_dc + i_dc - p.mu * (ps @ i_dq)) / p.c_dc
    out[1:3] = (-p.g_f * v_dq - u[1:3] + i_dq) / p.c_f - g.omega0 * (J @ v_dq)
    out[3:5] = (-p.r_f * i_dq - v_dq + p.mu * v_dc * ps) / p.l_f - g.omega0 * (J @ i_dq)
    out[5] = g.eta * (v_dc - g.v_dc_star) - g.gamma * math.sin(0.5 * (theta - g.theta_star0))
    return out


def dq_jacobian(z: np.ndarray, p: InverterParams, g: HacGains) -> np.ndarray:
    """Analytic Jacobian of dq_rhs with respect to the state."""
    v_dc = z[0]
    i_dq = z[3:5]
    theta = z[5]
    ps = psi(theta)
    dps = J @ ps
    jac = np.zeros((6, 6))
    jac[0, 0] = -p.g_dc_eff / p.c_dc
    jac[0, 3:5] = -p.mu * ps / p.c_dc
    jac[0, 5] = -p.mu * (dps @ i_dq) / p.c_dc
    jac[1:3, 1:3] = -(p.g_f / p.c_f) * _I2 - g.omega0 * J
    jac[1:3, 3:5] = _I2 / p.c_f
    jac[3:5, 1:3] = -_I2 / p.l_f
    jac[3:5, 3:5] = -(p.r_f / p.l_f) * _I2 - g.omega0 * J
    jac[3:5, 0] = p.mu * ps / p.l_f
    jac[3:5, 5] = p.mu * v_dc * dps / p.l_f
    jac[5, 0] = g.eta
    jac[5, 5] = -0.5 * g.gamma * math.cos(0.5 * (theta - g.theta_star0))
    return jac


def setpoint_input(
    p: InverterParams, g: HacGains, i_load_dq: np.ndarray
) -> tuple[PortInput, Equilibrium]:
    """Constant input pinning the equilibrium at (v_dc_star, theta_star0).

    Solves the linear AC subcircuit for the filter states under the given
    load current, then sets i_dc_ref to balance the DC node.
    """
    i_load_dq = np.asarray(i_load_dq, dtype=float)
    ps0 = psi(g.theta_star0)
    top = np.hstack([-p.g_f * _I2 - p.c_f * g.omega0 * J, _I2])
    bot = np.hstack([-_I2, -p.r_f * _I2 - p.l_f * g.omega0 * J])
    mat = np.vstack([top, bot])
    rhs = np.concatenate([i_load_dq, -p.mu * g.v_dc_star * ps0])
    sol = np.linalg.solve(mat, rhs)
    v_dq, i_dq = sol[:2], sol[2:]
    i_dc_ref = p.g_dc * g.v_dc_star + p.mu * float(ps0 @ i_dq)
    u = PortInput(i_dc_ref=i_dc_ref, i_load=i_load_dq)
    eq = Equilibrium(v_dc=g.v_dc_star, v_dq=v_dq, i_dq=i_dq, theta=g.theta_star0, input_eq=u)
    return u, eq


def equilibrium(
    p: InverterParams,
    g: HacGains,
    input_eq: PortInput,
    max_iter: int = 50,
    rtol: float = 1e-9,
) -> Equilibrium:
    """Newton solve of dq_rhs = 0 from the flat start, with step damping."""
    u = input_eq.as_vector()
    z = np.array([g.v_dc_star, p.mu * g.v_dc_star, 0.0, 0.0, 0.0, g.theta_star0])
    rate = max(g.omega0, g.gamma, 1.0)

    def scaled_residual(zz: np.ndarray) -> float:
        f = dq_rhs(zz, u, p, g)
        scale = rate * max(float(np.max(np.abs(zz))), 1.0)
        return float(np.max(np.abs(f))) / scale

    res = scaled_residual(z)
    for it in range(max_iter):
        if res < rtol:
            return Equilibrium(
                v_dc=float(z[0]),
                v_dq=z[1:3].copy(),
                i_dq=z[3:5].copy(),
                theta=float(z[5]),
                input_eq=input_eq,
            )
        f = dq_rhs(z, u, p, g)
        try:
            step = np.linalg.solve(dq_jacobian(z, p, g), -f)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(
                f"singular Jacobian at iteration {it}", res, it, z
            ) from exc
        alpha = 1.0
        for _ in range(30):
            z_new = z + alpha * step
            res_new = scaled_residual(z_new)
            if res_new < res or not math.isfinite(res):
                break
            alpha *= 0.5
        else:
            raise ConvergenceError(
                f"damped Newton stalled at iteration {it}", res, it, z
            )
        z, res = z_new, res_new
    if res < rtol:
        return Equilibrium(
            v_dc=float(z[0]), v_dq=z[1:3].copy(), i_dq=z[3:5].copy(), theta=float(z[5]),
            input_eq=input_eq,
        )
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations", res, max_iter, z
    )


def linearize(p: InverterParams, g: HacGains, eq: Equilibrium) -> StateSpace:
    """State space about an equilibrium in half-angle coordinates.

    States (d_v_dc, d_v_dq, d_i_dq, d_phi) with d_phi = d_theta/2; inputs
    (d_i_dc_ref, -d_i_load); outputs (d_v_dc, d_v_dq).
    """
    ps = psi(eq.theta)
    dps = J @ ps
    abar = np.zeros((6, 6))
    abar[0, 0] = -p.g_dc_eff
    abar[0, 3:5] = -p.mu * ps
    abar[0, 5] = -2.0 * p.mu * float(dps @ eq.i_dq)
    abar[1:3, 1:3] = -p.g_f * _I2 - p.c_f * g.omega0 * J
    abar[1:3, 3:5] = _I2
    abar[3:5, 0] = p.mu * ps
    abar[3:5, 1:3] = -_I2
    abar[3:5, 3:5] = -p.r_f * _I2 - p.l_f * g.omega0 * J
    abar[3:5, 5] = 2.0 * p.mu * eq.v_dc * dps
    abar[5, 0] = 0.5 * g.eta
    abar[5, 5] = -0.5 * g.gamma * math.cos(0.5 * (eq.theta - g.theta_star0))
    scale = np.array([p.c_dc, p.c_f, p.c_f, p.l_f, p.l_f, 1.0])
    a = abar / scale[:, None]
    b = np.zeros((6, 3))
    b[0, 0] = 1.0 / p.c_dc
    b[1, 1] = 1.0 / p.c_f
    b[2, 2] = 1.0 / p.c_f
    c = np.zeros((3, 6))
    c[0, 0] = 1.0
    c[1, 1] = 1.0
    c[2, 2] = 1.0
    d = np.zeros((3, 3))
    return StateSpace(a=a, b=b, c=c, d=d)


def storage_matrix(p: InverterParams, lam: float) -> np.ndarray:
    """Quadratic storage weight diag(c_dc, c_f, c_f, l_f, l_f, 2*lam)."""
    if lam <= 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    return np.diag([p.c_dc, p.c_f, p.c_f, p.l_f, p.l_f, 2.0 * lam])


def lmi_residual(ss: StateSpace, pmat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return M = -(A^T P + P A)/2 and its eigenvalues (ascending)."""
    m = -0.5 * (ss.a.T @ pmat + pmat @ ss.a)
    m = 0.5 * (m + m.T)
    return m, np.linalg.eigvalsh(m)


def passivity_block_matrix(
    p: InverterParams, g: HacGains, eq: Equilibrium, lam: float
) -> np.ndarray:
    """The dissipation matrix assembled directly from parameters.

    Block form, in the linearization coordinates:
        [ g_dc_eff   0      0          -tau           ]
        [ 0          g_f I  0          0              ]
        [ 0          0      r_f I      -mu*v_dc*dpsi  ]
        [ -tau       0      ...        lam*gamma*cos  ]
    with tau = (lam*eta - 2*mu*(dpsi . i_dq))/2 and dpsi = J psi(theta).
    """
    ps = psi(eq.theta)
    dps = J @ ps
    tau = 0.5 * (lam * g.eta - 2.0 * p.mu * float(dps @ eq.i_dq))
    m = np.zeros((6, 6))
    m[0, 0] = p.g_dc_eff
    m[1, 1] = m[2, 2] = p.g_f
    m[3, 3] = m[4, 4] = p.r_f
    m[5, 5] = lam * g.gamma * math.cos(0.5 * (eq.theta - g.theta_star0))
    m[0, 5] = m[5, 0] = -tau
    m[3:5, 5] = -p.mu * eq.v_dc * dps
    m[5, 3:5] = m[3:5, 5]
    return m


@dataclass(frozen=True)
class LmiReport:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    min_eig: float
    max_block_mismatch: float


def lmi_report(p: InverterParams, g: HacGains, eq: Equilibrium, lam: float) -> LmiReport:
    """Compute the LMI residual two ways and cross-check them elementwise."""
    ss = linearize(p, g, eq)
    pmat = storage_matrix(p, lam)
    m, eigs = lmi_residual(ss, pmat)
    block = passivity_block_matrix(p, g, eq, lam)
    scale = max(float(np.max(np.abs(block))), 1.0)
    mismatch = float(np.max(np.abs(m - block))) / scale
    if mismatch > 1e-10:
        raise AssertionError(
            f"parameter-form dissipation matrix disagrees with -(A^T P + P A)/2: "
            f"relative mismatch {mismatch:.3e}"
        )
    return LmiReport(matrix=m, eigenvalues=eigs, min_eig=float(eigs[0]), max_block_mismatch=mismatch)


def smallsignal_conditions(
    p: InverterParams, g: HacGains, cert: Certificate, eq: Equilibrium
) -> CertificateReport:
    """The certificate inequalities with equilibrium values in place of envelope bounds.

    Identical algebra to certify.check_conditions, evaluated at v_bar =
    equilibrium DC voltage and i_norm = equilibrium dq current norm.
    """
    margins = _margin_scalars(
        p, g, cert.eps1, cert.eps2, cert.lam, eq.v_dc, float(np.linalg.norm(eq.i_dq))
    )
    q_min_eig = float(np.linalg.eigvalsh(build_q(p, g, cert)).min())
    feasible = all(m > 0.0 for m in margins)
    return CertificateReport(feasible=feasible, margins=margins, q_min_eig=q_min_eig, certificate=cert)


def _freq_response(ss: StateSpace, omega: float) -> np.ndarray:
    n = ss.a.shape[0]
    if n == 0:
        return ss.d.astype(complex)
    try:
        resolvent = np.linalg.solve(1j * omega * np.eye(n) - ss.a, ss.b)
    except np.linalg.LinAlgError as exc:
        raise FrequencyResponseError(f"singular resolvent at omega={omega}", omega) from exc
    return ss.c @ resolvent + ss.d


def ifp(ss: StateSpace, omega: float) -> float:
    """Input-feedforward passivity index: min eig of the Hermitian part of G(j omega)."""
    g_jw = _freq_response(ss, omega)
    herm = 0.5 * (g_jw + g_jw.conj().T)
    return float(np.linalg.eigvalsh(herm)[0])


def ofp(ss: StateSpace, omega: float) -> float:
    """Output-feedback passivity index: min eig of the Hermitian part of G(j omega)^-1."""
    g_jw = _freq_response(ss, omega)
    if np.linalg.cond(g_jw) > 1e12:
        raise FrequencyResponseError(
            f"ill-conditioned frequency response at omega={omega}", omega
        )
    g_inv = np.linalg.inv(g_jw)
    herm = 0.5 * (g_inv + g_inv.conj().T)
    return float(np.linalg.eigvalsh(herm)[0])


def default_grid(n_points: int = 400) -> np.ndarray:
    """Logarithmic grid over [1e-1, 1e4] rad/s."""
    return np.logspace(-1.0, 4.0, n_points)


def sweep(ss: StateSpace, omega_grid: np.ndarray) -> SweepResult:
    """Evaluate both indices over a positive ascending grid; failures become gaps."""
    omega_grid = np.asarray(omega_grid, dtype=float)
    if omega_grid.ndim != 1 or omega_grid.size == 0:
        raise ValueError("omega_grid must be a nonempty 1-D array")
    if np.any(omega_grid <= 0.0):
        raise ValueError("omega_grid entries must be positive")
    if np.any(np.diff(omega_grid) <= 0.0) and omega_grid.size > 1:
        raise ValueError("omega_grid must be strictly ascending")
    ifp_vals = np.full(omega_grid.size, np.nan)
    ofp_vals = np.full(omega_grid.size, np.nan)
    gaps: list[int] = []
    for k, w in enumerate(omega_grid):
        try:
            ifp_k = ifp(ss, float(w))
            ofp_k = ofp(ss, float(w))
        except FrequencyResponseError:
            gaps.append(k)
            continue
        ifp_vals[k] = ifp_k
        ofp_vals[k] = ofp_k
    return SweepResult(omega=omega_grid, ifp=ifp_vals, ofp=ofp_vals, gaps=tuple(gaps))
