"""Acceptance suite: eight checkable claims, each with its runtime budget.

Every criterion is one test that prints a single ACCEPTANCE <n> PASS/FAIL
line (shown with -s, or in captured output on failure) and asserts the
same condition, so the -v report carries one line per criterion either way.
"""

import json
import math
import time

import numpy as np

from hacpass import ops
from hacpass.certify import (
    Certificate,
    OperatingEnvelope,
    build_q,
    check_conditions,
    default_envelope,
)
from hacpass.cli import main
from hacpass.model import PortInput
from hacpass.netsim import integrate, run_scenario
from hacpass.smallsignal import (
    default_grid,
    equilibrium,
    linearize,
    setpoint_input,
    smallsignal_conditions,
    storage_matrix,
)
from hacpass.verify import InputSpec, dissipation_check, random_trajectory_pair, verify_certificate

from conftest import (
    RATINGS,
    SINGLE_BUS_CFG,
    V_LL,
    WITNESS_3,
    make_gains,
    make_params,
    rated_current_peak,
)
from test_certify import random_hardware
from test_smallsignal import _T_ANGLE, _fd_jacobian, _fd_scales

# machine 3 with the feasible stored witness, as a complete config file
MACHINE3_WITNESS_CFG = SINGLE_BUS_CFG.replace(
    "theta_star0_rad = 0.0108",
    "theta_star0_rad = 0.0108\n\n[inverters.certificate]\n"
    f"eps1 = {WITNESS_3['eps1']}\neps2 = {WITNESS_3['eps2']}\nlam = {WITNESS_3['lam']}",
)


def _criterion(n: int, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {n} {status}: {detail}")
    assert ok, f"ACCEPTANCE {n} {status}: {detail}"


def _witness_certificate() -> Certificate:
    env = default_envelope(RATINGS[3]["s_rated"], V_LL, 1130.0)
    return Certificate(
        eps1=WITNESS_3["eps1"], eps2=WITNESS_3["eps2"], lam=WITNESS_3["lam"], envelope=env
    )


def test_criterion_1_certificate_reproduction(tmp_path):
    cfg_path = tmp_path / "machine3.cfg"
    cfg_path.write_text(MACHINE3_WITNESS_CFG)
    t0 = time.perf_counter()
    code = main(["certify", "--config", str(cfg_path), "--out-dir", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    entry = json.loads((tmp_path / "certify_report.json").read_text())["entries"][0]
    ok = (
        code == 0
        and entry["feasible"] is True
        and entry["synthesized"] is False
        and entry["q_min_eig"] > 0.0
        and elapsed < 1.0
    )
    _criterion(
        1, ok,
        f"certify command accepts the machine-3 stored witness, "
        f"min-eig {entry['q_min_eig']:.3e} > 0, {elapsed:.2f} s (budget 1 s)",
    )


def test_criterion_2_equivalence_suite():
    rng = np.random.default_rng(20260814)
    t0 = time.perf_counter()
    n_draws = 1000
    eig_disagreements = 0
    margin_mismatches = 0
    for _ in range(n_draws):
        p, g, cert = random_hardware(rng)
        rep = check_conditions(p, g, cert)
        tol = 1e-10 * np.linalg.norm(build_q(p, g, cert), 2)
        if rep.feasible:
            agree = rep.q_min_eig > -tol
        else:
            agree = rep.q_min_eig < tol
        eig_disagreements += 0 if agree else 1

        # margins from the envelope path and from the small-signal path
        # coincide bit-for-bit when the envelope sits at the equilibrium
        _, eq = setpoint_input(p, g, np.zeros(2))
        env_pt = OperatingEnvelope(
            v_dc_bar_max=eq.v_dc, i_ac_norm_max=float(np.linalg.norm(eq.i_dq))
        )
        cert_pt = Certificate(
            eps1=cert.eps1, eps2=cert.eps2, lam=cert.lam, envelope=env_pt
        )
        large = check_conditions(p, g, cert_pt)
        small = smallsignal_conditions(p, g, cert_pt, eq)
        if small.margins != large.margins or small.feasible != large.feasible:
            margin_mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = eig_disagreements == 0 and margin_mismatches == 0 and elapsed < 10.0
    _criterion(
        2, ok,
        f"{n_draws} draws: feasibility vs Q-eigenvalue disagreements "
        f"{eig_disagreements}, margin mismatches {margin_mismatches}, "
        f"{elapsed:.2f} s (budget 10 s)",
    )


def test_criterion_3_linearization_oracle():
    rng = np.random.default_rng(20260814)
    gains = make_gains()
    t0 = time.perf_counter()
    max_rel = 0.0
    feedthrough_exact = True
    for k in range(50):
        idx = 1 + k % 3
        p = make_params(idx)
        i_load = 0.3 * rated_current_peak(idx) * rng.uniform(-1.0, 1.0, size=2)
        u0, _ = setpoint_input(p, gains, i_load)
        u = PortInput(
            i_dc_ref=u0.i_dc_ref * (1.0 + 0.05 * rng.uniform(-1.0, 1.0)),
            i_load=u0.i_load,
        )
        eq = equilibrium(p, gains, u)
        ss = linearize(p, gains, eq)
        a_fd = _fd_jacobian(eq.as_vector(), u.as_vector(), p, gains, _fd_scales(idx))
        a_fd_half = np.linalg.inv(_T_ANGLE) @ a_fd @ _T_ANGLE
        max_rel = max(max_rel, np.linalg.norm(ss.a - a_fd_half) / np.linalg.norm(ss.a))
        pm = storage_matrix(p, WITNESS_3["lam"])
        feedthrough_exact &= bool(np.all(ss.b.T @ pm - ss.c == 0.0))
    elapsed = time.perf_counter() - t0
    ok = max_rel < 1e-6 and feedthrough_exact and elapsed < 10.0
    _criterion(
        3, ok,
        f"50 random equilibria: max FD relative error {max_rel:.2e} < 1e-6, "
        f"feedthrough identity exact={feedthrough_exact}, {elapsed:.2f} s (budget 10 s)",
    )


def test_criterion_4_smallsignal_sweep(ieee9_cfg):
    t0 = time.perf_counter()
    outcome = ops.sweep_inverter(ieee9_cfg, 2, default_grid())
    elapsed = time.perf_counter() - t0
    min_ifp = float(np.min(outcome.ifp))
    min_ofp = float(np.min(outcome.ofp))
    ok = (
        outcome.omega.size == 400
        and outcome.gaps == ()
        and min_ifp > 0.0
        and min_ofp > 0.0
        and elapsed < 5.0
    )
    _criterion(
        4, ok,
        f"inverter-2 indices positive at all 400 points in [1e-1, 1e4] rad/s "
        f"(min ifp {min_ifp:.3e}, min ofp {min_ofp:.3e}), {elapsed:.2f} s (budget 5 s)",
    )


def test_criterion_5_nine_bus_scenario(ieee9_cfg):
    t0 = time.perf_counter()
    scn = run_scenario(ieee9_cfg)
    elapsed = time.perf_counter() - t0
    p6, q6 = scn.pre_event_load_powers[6]
    events = [(ev.time, ev.bus, ev.factor) for ev in scn.sim.applied_events]
    ok = (
        abs(p6 / 125e6 - 1.0) < 0.02
        and abs(q6 / 50e6 - 1.0) < 0.02
        and events == [(1.5, 6, 2.0)]
        and scn.settled
        and bool(np.all(np.isfinite(scn.sim.states)))
        and elapsed < 300.0
    )
    _criterion(
        5, ok,
        f"pre-event bus-6 load {p6 / 1e6:.3f} MW / {q6 / 1e6:.3f} MVAr (within 2%), "
        f"doubling at 1.5 s, settling ratio {scn.final_metric / scn.peak_metric:.2e} "
        f"< 1e-4, all states finite, {elapsed:.1f} s (budget 300 s)",
    )


def _certified_spec() -> InputSpec:
    u0, _ = setpoint_input(make_params(3), make_gains(), np.array([3.0e4, -1.0e4]))
    return InputSpec(
        base=u0, amp_dc=2e3, amp_load=2e3,
        dev_v_dc=20.0, dev_v_ac=20.0, dev_i_ac=2e3, dev_theta=0.1,
    )


def test_criterion_6_dissipation_inequality():
    p = make_params(3)
    g = make_gains()
    cert = _witness_certificate()
    spec = _certified_spec()
    t0 = time.perf_counter()
    reports = verify_certificate(p, g, cert, spec, seeds=range(100))
    n_ok = sum(r.satisfied for r in reports)
    min_fraction = min(r.pointwise_fraction_ok for r in reports)

    # discretization error shrinks under dt halving: the slack differences
    # between grids contract by at least 2x (observed ~16x, 4th order)
    ratios_ok = True
    ratio_seen = []
    for seed in (0, 1, 2):
        slack = {}
        for dt in (8e-5, 4e-5, 2e-5):
            pair = random_trajectory_pair(p, g, spec, seed=seed, t_end=0.08, dt=dt)
            slack[dt] = dissipation_check(pair, p, g, cert.lam).slack
        d_coarse = abs(slack[8e-5] - slack[2e-5])
        d_fine = abs(slack[4e-5] - slack[2e-5])
        floor = 1e-9 * max(1.0, abs(slack[2e-5]))
        if d_fine > floor:
            ratio_seen.append(d_coarse / d_fine)
            ratios_ok &= d_coarse >= 2.0 * d_fine
    elapsed = time.perf_counter() - t0
    ok = n_ok == 100 and min_fraction >= 0.99 and ratios_ok and elapsed < 120.0
    _criterion(
        6, ok,
        f"100 seeded pairs: {n_ok}/100 slacks >= -tol, min pointwise fraction "
        f"{min_fraction:.4f} >= 0.99, dt-halving contraction ratios "
        f"{[f'{r:.1f}' for r in ratio_seen]} all >= 2, {elapsed:.1f} s (budget 120 s)",
    )


def test_criterion_7_negative_control():
    p = make_params(3)
    g_bad = make_gains(eta=1.0, gamma=1e-3)
    cert = _witness_certificate()
    u0, _ = setpoint_input(p, g_bad, np.zeros(2))
    spec = InputSpec(
        base=u0, amp_dc=0.0, amp_load=0.0, dev_v_dc=50.0, dev_v_ac=0.0,
        dev_i_ac=0.0, dev_theta=0.0, ref_scale=0.0,
    )
    t0 = time.perf_counter()
    reports = verify_certificate(p, g_bad, cert, spec, seeds=range(5), t_end=0.3)
    elapsed = time.perf_counter() - t0
    worst = max(-r.slack / r.tol for r in reports)
    ok = worst > 100.0 and any(not r.satisfied for r in reports) and elapsed < 120.0
    _criterion(
        7, ok,
        f"destabilizing tuning (eta=1, gamma=1e-3): worst violation {worst:.2e}x tol "
        f"> 100x, {elapsed:.1f} s (budget 120 s)",
    )


class _Exponential:
    """Scalar x' = -x, for which RK4's global error is analytic."""

    n_state = 1

    def rhs(self, t, x):
        return -x


def test_criterion_8_integrator_convergence():
    model = _Exponential()
    x0 = np.array([1.0])
    exact = math.exp(-1.0)
    t0 = time.perf_counter()
    errors = []
    for dt in (0.1, 0.05, 0.025):
        res = integrate(model, x0, 1.0, dt)
        errors.append(abs(float(res.states[-1, 0]) - exact))
    r1 = errors[0] / errors[1]
    r2 = errors[1] / errors[2]
    fine = integrate(model, x0, 1.0, 1e-3)
    fine_err = abs(float(fine.states[-1, 0]) - exact)
    elapsed = time.perf_counter() - t0
    ok = 14.0 <= r1 <= 18.0 and 14.0 <= r2 <= 18.0 and fine_err < 1e-12 and elapsed < 1.0
    _criterion(
        8, ok,
        f"RK4 on x' = -x: halving ratios {r1:.2f}, {r2:.2f} in [14, 18], "
        f"error {fine_err:.1e} at dt=1e-3, {elapsed:.2f} s (budget 1 s)",
    )
