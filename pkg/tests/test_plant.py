"""Reference plant physics: analytic derivatives against finite
differences, equilibria, a high-accuracy adaptive-solver cross-check of
the switching cycle, passivity of the rail subsystem, and the dead-zone
contact delay."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from switchdiag.core import ParameterError, SimulationError
from switchdiag.plant import (FAULT_PARAM_NAMES, PLANT_CHANNELS, PlantParams,
                              PlantState, free_equilibrium, locked_equilibrium,
                              make_cycle_reference, model_stats, plant_dtheta_fault,
                              plant_jac, plant_outputs, plant_rhs, rail_energy,
                              ramp, ramp_d, ramp_dd, ramp_inv, random_excitation,
                              sat_smooth, simulate_plant, simulate_plant_batch)
from switchdiag.sim import IntegratorConfig, integrate


@pytest.fixture(scope="module")
def p():
    return PlantParams()


@pytest.fixture(scope="module")
def cycle_ts(p):
    return simulate_plant(p, make_cycle_reference(), dt_out=0.1)


def fd_jacobian(p, z, w_ref):
    J = np.empty((len(z), len(z)))
    for j in range(len(z)):
        h = 1e-6 * max(1.0, abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        J[:, j] = (plant_rhs(zp, w_ref, p) - plant_rhs(zm, w_ref, p)) / (2 * h)
    return J


class TestSmoothPrimitives:
    def test_ramp_limits(self):
        eps = 1e-4
        assert ramp(0.0, eps) == pytest.approx(eps / 2)
        assert ramp(1.0, eps) == pytest.approx(1.0, rel=1e-8)
        assert ramp(-1.0, eps) == pytest.approx(0.0, abs=1e-8)
        s = np.linspace(-0.01, 0.01, 401)
        assert np.all(np.diff(ramp(s, eps)) > 0)

    def test_ramp_derivatives_match_fd(self):
        eps = 1e-4
        s = np.linspace(-5e-4, 5e-4, 101)
        h = 1e-9
        fd1 = (ramp(s + h, eps) - ramp(s - h, eps)) / (2 * h)
        assert np.max(np.abs(ramp_d(s, eps) - fd1)) < 1e-5
        h = 1e-7
        fd2 = (ramp_d(s + h, eps) - ramp_d(s - h, eps)) / (2 * h)
        assert np.max(np.abs(ramp_dd(s, eps) - fd2)) < 1e-2

    def test_ramp_inverse(self):
        eps = 1e-4
        for y in np.geomspace(eps, 1e3, 25):
            assert ramp(ramp_inv(y, eps), eps) == pytest.approx(y, rel=1e-12)

    def test_sat_identity_inside_linear_band(self):
        v_sat = 48.0
        u = np.linspace(-0.8 * v_sat, 0.8 * v_sat, 33)
        val, slope, curv = sat_smooth(u, v_sat)
        assert np.array_equal(val, u)
        assert np.all(slope == 1.0)
        assert np.all(curv == 0.0)

    def test_sat_clamps_beyond_blend(self):
        v_sat = 48.0
        for u in (1.2 * v_sat, 2 * v_sat, 100 * v_sat):
            val, slope, _ = sat_smooth(u, v_sat)
            assert val == pytest.approx(v_sat, rel=1e-14)
            assert abs(slope) < 1e-12
            val, slope, _ = sat_smooth(-u, v_sat)
            assert val == pytest.approx(-v_sat, rel=1e-14)

    def test_sat_smooth_and_monotone(self):
        v_sat = 48.0
        u = np.linspace(-80, 80, 3001)
        val, slope, curv = sat_smooth(u, v_sat)
        assert np.all(np.diff(val) >= 0)
        assert np.all(np.abs(val) <= v_sat + 1e-12)
        h = u[1] - u[0]
        fd_slope = np.gradient(val, h)
        assert np.max(np.abs(slope[2:-2] - fd_slope[2:-2])) < 5e-3
        fd_curv = np.gradient(slope, h)
        assert np.max(np.abs(curv[2:-2] - fd_curv[2:-2])) < 5e-3

    def test_sat_odd(self):
        u = np.linspace(0, 80, 100)
        vp, _, _ = sat_smooth(u, 48.0)
        vm, _, _ = sat_smooth(-u, 48.0)
        assert np.allclose(vp, -vm, atol=1e-15)


class TestDerivatives:
    def test_jacobian_matches_fd(self, p):
        rng = np.random.default_rng(1)
        z_lock = locked_equilibrium(p, 1.0)
        states = [
            (z_lock + 1e-3 * rng.standard_normal(p.n_states), 0.0),
            (z_lock + 1e-2 * rng.standard_normal(p.n_states), 7.2),
            (z_lock, 3.0),
        ]
        for z, w in states:
            J = plant_jac(z, w, p)
            Jfd = fd_jacobian(p, z, w)
            rel = np.abs(J - Jfd) / (np.abs(Jfd) + 1.0)
            assert np.max(rel) < 1e-5

    def test_jacobian_in_saturation(self, p):
        z = locked_equilibrium(p, 1.0)
        z = z.copy()
        z[3] = 3.0   # large error integral pushes u into the blend region
        for w in (20.0, 0.0, -20.0):
            J = plant_jac(z, w, p)
            Jfd = fd_jacobian(p, z, w)
            rel = np.abs(J - Jfd) / (np.abs(Jfd) + 1.0)
            assert np.max(rel) < 1e-5

    def test_jacobian_with_faults_active(self):
        pf = PlantParams(b_extra=3000.0, sigma_obs=8e4, x_obs=1.1,
                         gap_right=0.05)
        rng = np.random.default_rng(2)
        z = locked_equilibrium(pf, 1.0) + 1e-3 * rng.standard_normal(pf.n_states)
        z[4] = 1.099    # sit inside the obstacle window
        z[4 + pf.n_seg] = 0.03
        J = plant_jac(z, 5.0, pf)
        Jfd = fd_jacobian(pf, z, 5.0)
        rel = np.abs(J - Jfd) / (np.abs(Jfd) + 1.0)
        assert np.max(rel) < 1e-5

    def test_fault_param_partials_match_fd(self):
        base = PlantParams(b_extra=500.0, sigma_obs=5e4, x_obs=1.1,
                           gap_left=0.01, gap_right=0.02)
        rng = np.random.default_rng(3)

        def state(x1, v1):
            # rod parked at rod_x0 (theta = 0), rail placed so the probed
            # term is engaged at a realistic millimetre-scale depth
            z = locked_equilibrium(base, 1.0) + 1e-4 * rng.standard_normal(base.n_states)
            z[1] = 0.0
            z[4] = x1
            z[4 + base.n_seg] = v1
            return z

        cases = {"gap_left": state(0.9835, -0.02),
                 "gap_right": state(1.0165, 0.03),
                 "b_extra": state(1.05, 0.04),
                 "sigma_obs": state(1.095, 0.03),
                 "x_obs": state(1.095, 0.03)}
        for k, name in enumerate(FAULT_PARAM_NAMES):
            z = cases[name]
            D = plant_dtheta_fault(z, 4.0, base)
            v0 = getattr(base, name)
            h = 1e-6 * max(1.0, abs(v0))
            fp = plant_rhs(z, 4.0, base.replace(**{name: v0 + h}))
            fm = plant_rhs(z, 4.0, base.replace(**{name: v0 - h}))
            fd = (fp - fm) / (2 * h)
            scale = np.abs(fd) + np.max(np.abs(fd)) * 1e-3 + 1e-12
            assert np.max(np.abs(D[:, k] - fd) / scale) < 1e-5, name

    def test_batched_rhs_matches_loop(self, p):
        rng = np.random.default_rng(4)
        Z = locked_equilibrium(p, 1.0) + 1e-3 * rng.standard_normal((5, p.n_states))
        w = rng.uniform(-7, 7, size=5)
        batch = plant_rhs(Z, w, p)
        for b in range(5):
            assert np.array_equal(batch[b], plant_rhs(Z[b], w[b], p))


class TestEquilibria:
    def test_locked_is_stationary(self, p):
        z = locked_equilibrium(p, 1.0)
        assert np.max(np.abs(plant_rhs(z, 0.0, p))) < 1e-9
        assert z[4] == pytest.approx(1.0, abs=1e-12)
        assert np.all(z[4 + p.n_seg:] == pytest.approx(0.0, abs=1e-12))
        # voltage balance in the linear controller band
        u = p.Kp * (0.0 - z[2]) + p.Ki * z[3]
        assert abs(u) < 0.8 * p.v_sat
        assert u == pytest.approx(p.R * z[0], abs=1e-8)

    def test_locked_other_side(self, p):
        z = locked_equilibrium(p, p.x_max)
        assert np.max(np.abs(plant_rhs(z, 0.0, p))) < 1e-9
        assert z[4] == pytest.approx(p.x_max, abs=1e-12)
        assert z[0] > 0   # holding against the anchor pull needs + current

    def test_free_equilibrium(self, p):
        z = free_equilibrium(p)
        assert np.max(np.abs(plant_rhs(z, 0.0, p))) < 1e-9
        x = z[4:4 + p.n_seg]
        assert np.max(np.abs(x - p.x_neutral)) < 1e-6
        assert abs(z[0]) < 0.05   # nearly no holding current mid-gap

    def test_velocity_faults_do_not_move_equilibrium(self, p):
        z0 = locked_equilibrium(p, 1.0)
        z1 = locked_equilibrium(p.replace(b_extra=5000.0), 1.0)
        z2 = locked_equilibrium(p.replace(sigma_obs=1e5, x_obs=1.0), 1.0)
        assert np.allclose(z0, z1, atol=1e-10)
        assert np.allclose(z0, z2, atol=1e-10)

    def test_equilibrium_holds_under_integration(self, p):
        z0 = locked_equilibrium(p, 1.0)
        t_grid = np.array([0.0, 1.0])
        field = lambda t, z: plant_rhs(z, 0.0, p)
        jac = lambda t, z: plant_jac(z, 0.0, p)
        out = integrate(field, z0, t_grid, IntegratorConfig("trapezoidal", dt=1e-3),
                        jac=jac)
        assert abs(out[-1, 4] - 1.0) < 1e-9
        assert abs(out[-1, 0] - z0[0]) < 1e-6


class TestContactLimit:
    def test_zero_gap_reduces_to_linear_coupling(self):
        """With both gaps at zero the smooth two-sided contact collapses
        to an exact spring-damper for any smoothing eps."""
        p = PlantParams(gap_left=0.0, gap_right=0.0)
        rng = np.random.default_rng(5)
        for _ in range(20):
            z = locked_equilibrium(p, 1.0).copy()
            z[1] += rng.uniform(-2, 2)
            z[2] = rng.uniform(-8, 8)
            z[4] += rng.uniform(-5e-3, 5e-3)
            z[4 + p.n_seg] = rng.uniform(-0.05, 0.05)
            F = plant_outputs(z, 0.0, p)[3]
            x_rod = p.rod_x0 + p.c_cam * z[1]
            v_rod = p.c_cam * z[2]
            expect = p.k_contact * (x_rod - z[4]) + p.d_contact * (v_rod - z[4 + p.n_seg])
            assert F == pytest.approx(expect, rel=1e-9, abs=1e-6)


class TestCycleAgainstAdaptiveSolver:
    def test_matches_radau_reference(self, p, cycle_ts):
        """The fixed-step implicit run must agree with an adaptive
        high-accuracy solver on every output channel."""
        ref = make_cycle_reference()
        z0 = locked_equilibrium(p, p.x_min)
        t_eval = np.arange(141) * 0.1
        sol = solve_ivp(lambda t, z: plant_rhs(z, ref.omega_ref(t), p),
                        (0.0, 14.0), z0, method="Radau", rtol=1e-8, atol=1e-10,
                        jac=lambda t, z: plant_jac(z, ref.omega_ref(t), p),
                        t_eval=t_eval)
        assert sol.success
        oracle = plant_outputs(sol.y.T, ref.omega_ref(t_eval), p)
        tol = {"i": 0.05, "theta": 1e-4, "omega": 5e-3, "F": 2.0,
               "x": 1e-5, "v": 1e-4, "a": 0.1}
        for j, (name, _) in enumerate(PLANT_CHANNELS):
            err = np.max(np.abs(cycle_ts.values[:, j] - oracle[:, j]))
            assert err < tol[name], f"{name}: {err}"

    def test_cycle_behavior(self, p, cycle_ts):
        x = cycle_ts["x"]
        assert x[0] == pytest.approx(p.x_min, abs=1e-9)
        assert x.max() > 1.15          # reaches and presses the far stop
        assert x.max() < p.x_max + 1e-3
        assert abs(x[-1] - p.x_min) < 5e-3   # returns home
        assert np.abs(cycle_ts["i"]).max() > 15.0   # stall spike
        assert cycle_ts["theta"][-1] == pytest.approx(cycle_ts["theta"][0], abs=2e-3)

    def test_step_size_consistency(self, p, cycle_ts):
        finer = simulate_plant(p, make_cycle_reference(), dt_out=0.1,
                               cfg=IntegratorConfig("trapezoidal", dt=5e-4))
        assert np.max(np.abs(finer["x"] - cycle_ts["x"])) < 1e-6
        assert np.max(np.abs(finer["F"] - cycle_ts["F"])) < 1.0

    def test_determinism(self, p, cycle_ts):
        again = simulate_plant(p, make_cycle_reference(), dt_out=0.1)
        assert np.array_equal(again.values, cycle_ts.values)


class TestRailPassivity:
    def test_energy_bounded_by_port_work(self, p):
        """Rail stores at most the work delivered through the connection
        force; bearings and segment damping only remove energy."""
        ref = random_excitation(p, 20.0, 7.2, seed=3)
        z0 = free_equilibrium(p)
        t_grid = np.arange(0, 2001) * 1e-2
        field = lambda t, z: plant_rhs(z, ref.omega_ref(t), p)
        jac = lambda t, z: plant_jac(z, ref.omega_ref(t), p)
        zs = integrate(field, z0, t_grid, IntegratorConfig("trapezoidal", dt=1e-3),
                       jac=jac)
        E = rail_energy(zs, p)
        out = plant_outputs(zs, ref.omega_ref(t_grid), p)
        P = out[:, 3] * out[:, 5]   # F * v at the connection
        W = np.concatenate([[0.0], np.cumsum(0.5 * (P[1:] + P[:-1]) * 1e-2)])
        violation = (E - E[0]) - W
        assert np.max(violation) < 1e-3


class TestDeadZoneDelay:
    def test_catch_delay_monotone_in_gap(self):
        """Early travel is anchor-driven creep toward neutral, so the bolt
        gap shows up in the time the rod needs to catch the rail and push
        it past neutral. A wider right gap means a later catch."""
        delays = []
        for gap in (5e-3, 2e-2, 5e-2):
            p = PlantParams(gap_right=gap)
            z0 = locked_equilibrium(p, 1.0)   # latched with the loose bolt
            ts = simulate_plant(p, make_cycle_reference(), dt_out=0.01, x0=z0)
            moved = np.nonzero(ts["x"] > 1.10)[0]
            assert len(moved) > 0
            delays.append(ts.times[moved[0]])
        assert delays[0] < delays[1] < delays[2]
        assert delays[2] - delays[0] > 0.5


class TestAccelerationChannel:
    def test_a_matches_derivative_of_v(self, p):
        ts = simulate_plant(p, make_cycle_reference(), dt_out=1e-3)
        a_fd = np.gradient(ts["v"], 1e-3)
        err = ts["a"][5:-5] - a_fd[5:-5]
        rms = np.sqrt(np.mean(ts["a"] ** 2))
        assert np.sqrt(np.mean(err ** 2)) < 0.02 * rms


class TestReferenceProfiles:
    def test_cycle_reference_shape(self):
        ref = make_cycle_reference(omega_amp=7.2, horizon=14.0)
        assert ref.horizon == 14.0
        assert ref.omega_ref(0.25) == pytest.approx(3.6)
        assert ref.omega_ref(3.0) == pytest.approx(7.2)
        assert ref.omega_ref(6.0) == 0.0
        assert ref.omega_ref(9.0) == pytest.approx(-7.2)
        assert ref.net_angle() == pytest.approx(0.0, abs=1e-12)

    def test_random_excitation_deterministic(self, p):
        r1 = random_excitation(p, 50.0, 7.2, seed=9)
        r2 = random_excitation(p, 50.0, 7.2, seed=9)
        r3 = random_excitation(p, 50.0, 7.2, seed=10)
        assert np.array_equal(r1.knots_t, r2.knots_t)
        assert np.array_equal(r1.knots_w, r2.knots_w)
        assert not np.array_equal(r1.knots_w, r3.knots_w)

    def test_random_excitation_bounds(self, p):
        for seed in range(5):
            ref = random_excitation(p, 80.0, 7.2, seed=seed)
            assert np.all(np.abs(ref.knots_w) <= 7.2)
            assert ref.knots_t[-1] == pytest.approx(80.0)

    def test_random_excitation_keeps_rail_off_stops(self, p):
        z0 = free_equilibrium(p)
        for seed in (0, 1, 2):
            ref = random_excitation(p, 30.0, 7.2, seed=seed)
            ts = simulate_plant(p, ref, dt_out=0.1, x0=z0)
            assert ts["x"].min() > p.x_min + 0.02
            assert ts["x"].max() < p.x_max - 0.02


class TestApi:
    def test_channel_schema(self, cycle_ts):
        assert cycle_ts.channels == (("i", "A"), ("theta", "rad"),
                                     ("omega", "rad/s"), ("F", "N"),
                                     ("x", "m"), ("v", "m/s"), ("a", "m/s2"))
        assert cycle_ts.n_samples == 141
        assert cycle_ts.t0 == 0.0

    def test_bad_output_step_rejected(self, p):
        with pytest.raises(ParameterError):
            simulate_plant(p, make_cycle_reference(), dt_out=0.3)

    def test_bad_x0_rejected(self, p):
        with pytest.raises(ParameterError):
            simulate_plant(p, make_cycle_reference(), x0=np.zeros(3))

    def test_batch_matches_single(self, p):
        # the batched Newton shares its iteration count across members, so
        # agreement is to solver tolerance rather than bitwise
        refs = [make_cycle_reference(), make_cycle_reference(omega_amp=5.0)]
        batch = simulate_plant_batch(p, refs, dt_out=0.1)
        single = simulate_plant(p, refs[1], dt_out=0.1)
        atol = {"i": 1e-6, "theta": 1e-9, "omega": 1e-6, "F": 1e-4,
                "x": 1e-8, "v": 1e-7, "a": 1e-4}
        for j, (name, _) in enumerate(PLANT_CHANNELS):
            err = np.max(np.abs(batch[1].values[:, j] - single.values[:, j]))
            assert err < atol[name], name

    def test_model_stats(self, p):
        s = model_stats(p)
        assert s == {"states": 44, "parameters": 30, "equations": 51}
        assert model_stats(PlantParams(n_seg=1)) == {"states": 6, "parameters": 30,
                                                     "equations": 13}

    def test_params_validation(self):
        with pytest.raises(ParameterError):
            PlantParams(R=0.0)
        with pytest.raises(ParameterError):
            PlantParams(n_seg=0)
        with pytest.raises(ParameterError):
            PlantParams(x_neutral=2.0)
        with pytest.raises(ParameterError):
            PlantParams(gap_left=-1e-3)

    def test_params_round_trip(self, p):
        d = p.to_dict()
        assert len(d) == 30
        assert PlantParams.from_dict(d) == p

    def test_state_round_trip(self, p):
        z = locked_equilibrium(p, 1.0)
        st = PlantState.from_array(z, p.n_seg)
        assert np.array_equal(st.to_array(), z)
        assert st.x.shape == (p.n_seg,)
        with pytest.raises(ParameterError):
            PlantState.from_array(z[:-1], p.n_seg)
