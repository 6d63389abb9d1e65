"""Tests for rotating-frame equilibria, linearization, and passivity indices."""

import math

import numpy as np
import pytest

from hacpass.certify import OperatingEnvelope, check_conditions, default_envelope, synthesize_certificate
from hacpass.model import J, HacGains, InverterParams, PortInput, psi
from hacpass.smallsignal import (
    ConvergenceError,
    FrequencyResponseError,
    StateSpace,
    default_grid,
    dq_jacobian,
    dq_rhs,
    equilibrium,
    ifp,
    linearize,
    lmi_report,
    lmi_residual,
    ofp,
    passivity_block_matrix,
    setpoint_input,
    smallsignal_conditions,
    storage_matrix,
    sweep,
)

from conftest import (
    RATINGS,
    THETA_STAR0,
    V_DC,
    V_LL,
    WITNESS_3,
    make_gains,
    make_params,
    rated_current_peak,
)

# FD perturbation scales per state: voltages, currents, angle.
def _fd_scales(idx):
    i_s = rated_current_peak(idx)
    return np.array([V_DC, V_LL, V_LL, i_s, i_s, 1.0])


def _fd_jacobian(z0, u, p, g, scales):
    a = np.zeros((6, 6))
    for j in range(6):
        h = 1e-6 * scales[j]
        zp, zm = z0.copy(), z0.copy()
        zp[j] += h
        zm[j] -= h
        a[:, j] = (dq_rhs(zp, u, p, g) - dq_rhs(zm, u, p, g)) / (2.0 * h)
    return a


# Half-angle coordinate change: linearize() states use d_phi = d_theta / 2.
_T_ANGLE = np.diag([1.0, 1.0, 1.0, 1.0, 1.0, 2.0])


class TestSetpointInput:
    def test_rhs_vanishes_at_setpoint(self, gains):
        for idx in (1, 2, 3):
            p = make_params(idx)
            u, eq = setpoint_input(p, gains, np.array([2.0e4, -5.0e3]))
            f = dq_rhs(eq.as_vector(), u.as_vector(), p, gains)
            scale = gains.omega0 * max(np.max(np.abs(eq.as_vector())), 1.0)
            assert np.max(np.abs(f)) / scale < 1e-12

    def test_circuit_equations_hold(self, params3, gains):
        # Re-check the stacked linear solve against the raw branch equations.
        i_load = np.array([1.5e4, 4.0e3])
        u, eq = setpoint_input(params3, gains, i_load)
        ps0 = psi(gains.theta_star0)
        cap = -params3.g_f * eq.v_dq - params3.c_f * gains.omega0 * (J @ eq.v_dq) + eq.i_dq - i_load
        ind = (
            -params3.r_f * eq.i_dq
            - params3.l_f * gains.omega0 * (J @ eq.i_dq)
            - eq.v_dq
            + params3.mu * gains.v_dc_star * ps0
        )
        assert np.max(np.abs(cap)) < 1e-9 * np.linalg.norm(eq.i_dq)
        assert np.max(np.abs(ind)) < 1e-9 * np.linalg.norm(eq.v_dq)
        i_dc_expected = params3.g_dc * gains.v_dc_star + params3.mu * float(ps0 @ eq.i_dq)
        assert u.i_dc_ref == pytest.approx(i_dc_expected, rel=1e-14)

    def test_pins_dc_voltage_and_angle(self, params2, gains):
        _, eq = setpoint_input(params2, gains, np.zeros(2))
        assert eq.v_dc == gains.v_dc_star
        assert eq.theta == gains.theta_star0


class TestEquilibrium:
    def test_newton_recovers_setpoint(self, gains):
        for idx in (1, 2, 3):
            p = make_params(idx)
            u, eq_lin = setpoint_input(p, gains, np.array([1.0e4, -2.0e3]))
            eq = equilibrium(p, gains, u)
            assert eq.v_dc == pytest.approx(eq_lin.v_dc, rel=1e-8)
            assert eq.theta == pytest.approx(eq_lin.theta, abs=1e-9)
            np.testing.assert_allclose(eq.v_dq, eq_lin.v_dq, rtol=1e-6)
            np.testing.assert_allclose(eq.i_dq, eq_lin.i_dq, rtol=1e-6, atol=1e-3)

    def test_residual_below_tolerance(self, params3, gains):
        u, _ = setpoint_input(params3, gains, np.zeros(2))
        eq = equilibrium(params3, gains, u, rtol=1e-11)
        f = dq_rhs(eq.as_vector(), u.as_vector(), params3, gains)
        scale = gains.omega0 * max(np.max(np.abs(eq.as_vector())), 1.0)
        assert np.max(np.abs(f)) / scale < 1e-11

    def test_perturbed_input_converges(self, params3, gains):
        u0, _ = setpoint_input(params3, gains, np.array([5.0e3, 1.0e3]))
        u = PortInput(i_dc_ref=u0.i_dc_ref * 1.05 + 2.0e3, i_load=u0.i_load * 0.9)
        eq = equilibrium(params3, gains, u)
        f = dq_rhs(eq.as_vector(), u.as_vector(), params3, gains)
        assert np.max(np.abs(f)) < 1e-5
        # Raised DC injection lifts the DC voltage off the setpoint.
        assert eq.v_dc > gains.v_dc_star

    def test_determinism(self, params2, gains):
        u, _ = setpoint_input(params2, gains, np.array([3.0e4, 0.0]))
        u = PortInput(i_dc_ref=u.i_dc_ref * 1.01, i_load=u.i_load)
        eq_a = equilibrium(params2, gains, u)
        eq_b = equilibrium(params2, gains, u)
        assert eq_a.as_vector().tobytes() == eq_b.as_vector().tobytes()

    def test_nonconvergence_raises_with_residual(self, params3, gains):
        # DC injection so large the angle equation has no root.
        u = PortInput(i_dc_ref=1.0e10, i_load=np.zeros(2))
        with pytest.raises(ConvergenceError) as exc_info:
            equilibrium(params3, gains, u)
        err = exc_info.value
        assert err.residual > 0.0
        assert err.last.shape == (6,)

    def test_analytic_jacobian_matches_fd(self, params3, gains, rng):
        u, eq = setpoint_input(params3, gains, np.array([8.0e3, -1.0e3]))
        z = eq.as_vector() + rng.normal(size=6) * np.array([5.0, 5.0, 5.0, 50.0, 50.0, 1e-3])
        a_fd = _fd_jacobian(z, u.as_vector(), params3, gains, _fd_scales(3))
        a_an = dq_jacobian(z, params3, gains)
        assert np.linalg.norm(a_an - a_fd) < 1e-6 * np.linalg.norm(a_an)


class TestLinearize:
    @pytest.mark.parametrize("idx", [1, 2, 3])
    def test_matches_fd_at_setpoint(self, idx, gains):
        p = make_params(idx)
        u, eq = setpoint_input(p, gains, np.array([1.0e4, -3.0e3]))
        ss = linearize(p, gains, eq)
        a_fd = _fd_jacobian(eq.as_vector(), u.as_vector(), p, gains, _fd_scales(idx))
        a_fd_half = np.linalg.inv(_T_ANGLE) @ a_fd @ _T_ANGLE
        assert np.linalg.norm(ss.a - a_fd_half) < 1e-6 * np.linalg.norm(ss.a)

    def test_matches_fd_off_setpoint(self, params3, gains):
        # Equilibrium away from the angle setpoint exercises the cosine factor.
        u0, _ = setpoint_input(params3, gains, np.zeros(2))
        u = PortInput(i_dc_ref=u0.i_dc_ref * 1.02 + 5.0e3, i_load=u0.i_load)
        eq = equilibrium(params3, gains, u)
        assert eq.theta != pytest.approx(gains.theta_star0, abs=1e-6)
        ss = linearize(params3, gains, eq)
        a_fd = _fd_jacobian(eq.as_vector(), u.as_vector(), params3, gains, _fd_scales(3))
        a_fd_half = np.linalg.inv(_T_ANGLE) @ a_fd @ _T_ANGLE
        assert np.linalg.norm(ss.a - a_fd_half) < 1e-6 * np.linalg.norm(ss.a)

    def test_input_output_structure(self, params2, gains):
        _, eq = setpoint_input(params2, gains, np.zeros(2))
        ss = linearize(params2, gains, eq)
        b_expected = np.zeros((6, 3))
        b_expected[0, 0] = 1.0 / params2.c_dc
        b_expected[1, 1] = 1.0 / params2.c_f
        b_expected[2, 2] = 1.0 / params2.c_f
        assert np.array_equal(ss.b, b_expected)
        c_expected = np.zeros((3, 6))
        c_expected[0, 0] = c_expected[1, 1] = c_expected[2, 2] = 1.0
        assert np.array_equal(ss.c, c_expected)
        assert np.array_equal(ss.d, np.zeros((3, 3)))

    def test_zero_frequency_removes_rotation_coupling(self, params3):
        g0 = HacGains(omega0=0.0, eta=1e-3, gamma=100.0, v_dc_star=V_DC, theta_star0=0.0)
        _, eq = setpoint_input(params3, g0, np.zeros(2))
        ss = linearize(params3, g0, eq)
        assert ss.a[1, 2] == 0.0 and ss.a[2, 1] == 0.0
        assert ss.a[3, 4] == 0.0 and ss.a[4, 3] == 0.0


class TestStorageAndLmi:
    def test_storage_matrix_entries(self, params3):
        pm = storage_matrix(params3, 2.5)
        expected = np.diag(
            [params3.c_dc, params3.c_f, params3.c_f, params3.l_f, params3.l_f, 5.0]
        )
        assert np.array_equal(pm, expected)

    def test_storage_matrix_rejects_bad_lam(self, params3):
        with pytest.raises(ValueError):
            storage_matrix(params3, 0.0)

    @pytest.mark.parametrize("idx", [1, 2, 3])
    def test_feedthrough_identity_exact(self, idx, gains):
        # B^T P recovers C bit-for-bit for the roster hardware values.
        p = make_params(idx)
        _, eq = setpoint_input(p, gains, np.zeros(2))
        ss = linearize(p, gains, eq)
        pm = storage_matrix(p, 1e10)
        assert np.all(ss.b.T @ pm - ss.c == 0.0)

    def test_feedthrough_identity_random(self, rng):
        # x * (1/x) can differ from 1 by one ulp; allow exactly that much.
        for _ in range(200):
            c_dc, c_f, l_f = np.exp(rng.uniform(np.log(1e-7), np.log(1e2), size=3))
            p = InverterParams(
                c_dc=c_dc, g_dc=0.1, c_f=c_f, g_f=1e-4, l_f=l_f, r_f=1e-3, mu=0.5, kappa=0.0
            )
            g = make_gains()
            _, eq = setpoint_input(p, g, np.zeros(2))
            ss = linearize(p, g, eq)
            pm = storage_matrix(p, 1.0)
            res = ss.b.T @ pm - ss.c
            assert np.max(np.abs(res)) <= np.finfo(float).eps

    def test_block_matrix_matches_quadratic_form(self, params3, gains):
        _, eq = setpoint_input(params3, gains, np.array([1.0e4, 2.0e3]))
        lam = WITNESS_3["lam"]
        ss = linearize(params3, gains, eq)
        pm = storage_matrix(params3, lam)
        m, _ = lmi_residual(ss, pm)
        block = passivity_block_matrix(params3, gains, eq, lam)
        assert np.max(np.abs(m - block)) <= 1e-10 * np.max(np.abs(block))

    def test_block_matrix_rotation_terms_cancel(self, params3, gains):
        # The omega0 coupling is lossless: it must not appear in the dissipation matrix.
        _, eq = setpoint_input(params3, gains, np.zeros(2))
        block = passivity_block_matrix(params3, gains, eq, 1.0)
        assert block[1, 2] == 0.0 and block[3, 4] == 0.0

    def test_lmi_report_witness_positive(self, params3, gains):
        _, eq = setpoint_input(params3, gains, np.zeros(2))
        rep = lmi_report(params3, gains, eq, WITNESS_3["lam"])
        pm_norm = 2.0 * WITNESS_3["lam"]
        assert rep.min_eig >= -1e-10 * pm_norm
        assert rep.max_block_mismatch <= 1e-10

    def test_certificate_implies_lmi(self, gains, rng):
        # A feasible large-signal certificate whose envelope covers the
        # equilibrium must make the linearized dissipation matrix PSD.
        checked = 0
        for idx in (1, 2, 3):
            p = make_params(idx)
            i_scale = rated_current_peak(idx)
            for _ in range(20):
                i_load = rng.uniform(-0.3, 0.3, size=2) * i_scale
                _, eq = setpoint_input(p, gains, i_load)
                env = default_envelope(RATINGS[idx]["s_rated"], V_LL, gains.v_dc_star)
                if np.linalg.norm(eq.i_dq) > env.i_ac_norm_max or eq.v_dc > env.v_dc_bar_max:
                    continue
                cert = synthesize_certificate(p, gains, env)
                rep = lmi_report(p, gains, eq, cert.lam)
                tol = 1e-10 * max(np.max(np.abs(rep.matrix)), 1.0)
                assert rep.min_eig >= -tol
                checked += 1
        assert checked >= 30


class TestSmallsignalConditions:
    def test_bit_for_bit_with_envelope_form(self, params3, gains):
        _, eq = setpoint_input(params3, gains, np.array([2.0e4, -4.0e3]))
        env = OperatingEnvelope(
            v_dc_bar_max=eq.v_dc, i_ac_norm_max=max(float(np.linalg.norm(eq.i_dq)), 1e-12)
        )
        cert = synthesize_certificate(params3, gains, env)
        rep_env = check_conditions(params3, gains, cert)
        rep_eq = smallsignal_conditions(params3, gains, cert, eq)
        assert rep_eq.margins == rep_env.margins
        assert rep_eq.feasible == rep_env.feasible

    def test_feasible_at_witness(self, params3, gains):
        from hacpass.certify import Certificate

        env = default_envelope(RATINGS[3]["s_rated"], V_LL, gains.v_dc_star)
        cert = Certificate(
            eps1=WITNESS_3["eps1"], eps2=WITNESS_3["eps2"], lam=WITNESS_3["lam"], envelope=env
        )
        _, eq = setpoint_input(params3, gains, np.zeros(2))
        rep = smallsignal_conditions(params3, gains, cert, eq)
        assert rep.feasible
        assert all(m > 0.0 for m in rep.margins)


class TestFrequencyResponse:
    def test_static_gain_matrix(self):
        d0 = np.array([[2.0, 1.0], [1.0, 2.0]])
        ss0 = StateSpace(
            a=np.zeros((0, 0)), b=np.zeros((0, 2)), c=np.zeros((2, 0)), d=d0
        )
        assert ifp(ss0, 3.7) == pytest.approx(1.0, rel=1e-12)
        assert ofp(ss0, 3.7) == pytest.approx(1.0 / 3.0, rel=1e-12)

    def test_first_order_lag(self):
        # G(s) = 1/(s+1): Hermitian part 1/(1+w^2); inverse has constant real part 1.
        ss1 = StateSpace(
            a=np.array([[-1.0]]), b=np.array([[1.0]]), c=np.array([[1.0]]), d=np.array([[0.0]])
        )
        assert ifp(ss1, 0.0) == pytest.approx(1.0, rel=1e-12)
        assert ifp(ss1, 1.0) == pytest.approx(0.5, rel=1e-12)
        assert ofp(ss1, 1.0) == pytest.approx(1.0, rel=1e-12)
        assert ofp(ss1, 10.0) == pytest.approx(1.0, rel=1e-12)

    def test_even_in_frequency(self, params2, gains):
        _, eq = setpoint_input(params2, gains, np.array([1.0e4, 0.0]))
        ss2 = linearize(params2, gains, eq)
        for w in (0.5, 60.0, 377.0, 2.0e3):
            assert ifp(ss2, w) == pytest.approx(ifp(ss2, -w), rel=1e-9)

    def test_singular_resolvent_raises(self):
        osc = StateSpace(
            a=np.array([[0.0, 1.0], [-1.0, 0.0]]),
            b=np.eye(2),
            c=np.eye(2),
            d=np.zeros((2, 2)),
        )
        with pytest.raises(FrequencyResponseError) as exc_info:
            ifp(osc, 1.0)
        assert exc_info.value.omega == 1.0

    def test_singular_gain_blocks_ofp(self):
        dead = StateSpace(
            a=np.zeros((0, 0)),
            b=np.zeros((0, 2)),
            c=np.zeros((2, 0)),
            d=np.array([[1.0, 0.0], [0.0, 0.0]]),
        )
        with pytest.raises(FrequencyResponseError):
            ofp(dead, 5.0)

    def test_inverter_positive_on_grid(self, params2, gains):
        _, eq = setpoint_input(params2, gains, np.array([-2.0e4, 6.0e3]))
        ss2 = linearize(params2, gains, eq)
        res = sweep(ss2, default_grid(60))
        assert res.gaps == ()
        assert np.all(res.ifp > 0.0)
        assert np.all(res.ofp > 0.0)


class TestSweep:
    def test_grid_validation(self, params3, gains):
        _, eq = setpoint_input(params3, gains, np.zeros(2))
        ss3 = linearize(params3, gains, eq)
        with pytest.raises(ValueError):
            sweep(ss3, np.array([]))
        with pytest.raises(ValueError):
            sweep(ss3, np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            sweep(ss3, np.array([1.0, 1.0]))

    def test_gaps_are_nan(self):
        dead = StateSpace(
            a=np.zeros((0, 0)),
            b=np.zeros((0, 2)),
            c=np.zeros((2, 0)),
            d=np.array([[1.0, 0.0], [0.0, 0.0]]),
        )
        res = sweep(dead, np.array([1.0, 10.0, 100.0]))
        assert res.gaps == (0, 1, 2)
        assert np.all(np.isnan(res.ifp))
        assert np.all(np.isnan(res.ofp))

    def test_default_grid_shape(self):
        grid = default_grid()
        assert grid.size == 400
        assert grid[0] == pytest.approx(0.1)
        assert grid[-1] == pytest.approx(1e4)
        assert np.all(np.diff(grid) > 0.0)
