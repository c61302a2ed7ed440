"""Tests for the fitting pipelines: splitting, causal regression, the
derivative-free polish, and the sensitivity-based acausal fits."""

import math
import warnings

import numpy as np
import pytest

from switchdiag import _kernels as _k
from switchdiag.core import Dataset, FitError, ParameterError, SchemaError, TimeSeries
from switchdiag.fit import (FitConfig, FitReport, element_series, fit_acausal_nn,
                            fit_acausal_poly, fit_causal, powell_finetune,
                            powell_minimize, split)
from switchdiag.plant import PlantParams, ramp
from switchdiag.surrogates import (CausalNet, PolyGMSD, causal_force,
                                   causal_params, check_dissipative, load_model,
                                   poly_forces, poly_params, posmap_params,
                                   save_model)

ELEMENT_CHANNELS = (("F", "N"), ("x", "m"), ("v", "m/s"))


def element_ts(F, x, v, dt=0.01):
    return TimeSeries(0.0, dt, ELEMENT_CHANNELS, np.column_stack([F, x, v]))


def poly_series(model, F, dt=0.01, x0=None, v0=0.0):
    """Drive a polynomial element with F and record the exact trajectory."""
    th = poly_params(model)
    x0 = model.x_fix if x0 is None else x0
    xs, vs, flag = _k.element_sim_poly(th, F, x0, v0, 1, dt)
    assert flag == 0
    return element_ts(F, xs, vs, dt)


def known_causal_dataset(n_series=15, m=401, seed=11):
    """Noiseless force data from a known mildly nonlinear causal net."""
    net = CausalNet.random(hidden=8, scale=0.2, seed=9)
    net = CausalNet(net.W0, net.b0, 100.0 * net.W1, 20.0 * net.b1)
    rng = np.random.default_rng(seed)
    series = []
    for k in range(n_series):
        x = 1.08 + 0.05 * np.sin(np.linspace(0, 6 + k, m)) + 0.02 * rng.standard_normal(m)
        v = 0.8 * rng.standard_normal(m)
        a = 5.0 * rng.standard_normal(m)
        F = causal_force(net, x, v, a)
        series.append(TimeSeries(0.0, 0.01,
                                 (("F", "N"), ("x", "m"), ("v", "m/s"), ("a", "m/s2")),
                                 np.column_stack([F, x, v, a])))
    return net, Dataset(series, {})


def pure_mass_series(m_true=120.0, dt=0.01, T=6.0):
    """Bounded data exactly consistent with F = m * a and nothing else."""
    n = int(T / dt) + 1
    t = np.arange(n) * dt
    om = 2.3
    x = 1.05 + 0.25 * np.sin(om * t)
    v = 0.25 * om * np.cos(om * t)
    F = -m_true * 0.25 * om * om * np.sin(om * t)
    return element_ts(F, x, v, dt)


def multisine(n, dt, amps, freqs, phases):
    t = np.arange(n) * dt
    F = np.zeros(n)
    for A, w, ph in zip(amps, freqs, phases):
        F += A * np.sin(w * t + ph)
    return F


class TestFitConfig:
    def test_defaults_construct(self):
        cfg = FitConfig()
        assert cfg.split_ratio == 0.7
        assert cfg.lr0 == 1e-2
        assert cfg.lr_decay == 0.99
        assert cfg.epochs == 500

    @pytest.mark.parametrize("kw", [
        {"split_ratio": 0.0}, {"split_ratio": 1.0}, {"split_ratio": 1.2},
        {"lr0": 0.0}, {"lr0": -1.0},
        {"lr_decay": 0.0}, {"lr_decay": 1.1},
        {"epochs": -1}, {"batch": 0}, {"restarts": 0}, {"hidden": 0},
    ])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ParameterError):
            FitConfig(**kw)


class TestFitReport:
    def test_rejects_negative_mse(self):
        with pytest.raises(ParameterError):
            FitReport(train_mse=-1.0, test_mse=0.0, iterations=1, converged=True)
        with pytest.raises(ParameterError):
            FitReport(train_mse=0.0, test_mse=float("nan"), iterations=1,
                      converged=True)

    def test_to_dict_carries_fields(self):
        rep = FitReport(train_mse=1.5, test_mse=2.5, iterations=7,
                        converged=False, params={"m": 3.0}, history=(4.0, 1.5),
                        improvement=0.25, warnings=("w",))
        d = rep.to_dict()
        assert d["train_mse"] == 1.5 and d["test_mse"] == 2.5
        assert d["iterations"] == 7 and d["converged"] is False
        assert d["history"] == [4.0, 1.5]
        assert d["improvement"] == 0.25 and d["warnings"] == ["w"]
        assert d["schema_version"] == 1


class TestSplit:
    def make_dataset(self, n):
        series = [element_ts(np.full(5, float(k)), np.full(5, 1.0), np.zeros(5))
                  for k in range(n)]
        return Dataset(series, {"origin": "unit"})

    @pytest.mark.parametrize("n,ratio,want_train", [
        (15, 0.7, 10), (2, 0.5, 1), (10, 0.99, 9), (10, 0.01, 1), (3, 0.34, 1),
    ])
    def test_counts(self, n, ratio, want_train):
        ds = self.make_dataset(n)
        train, test = split(ds, ratio, seed=0)
        assert len(train.series) == want_train
        assert len(test.series) == n - want_train

    def test_partition_preserves_series(self):
        ds = self.make_dataset(12)
        train, test = split(ds, 0.7, seed=3)
        got = {id(s) for s in train.series} | {id(s) for s in test.series}
        assert got == {id(s) for s in ds.series}
        assert not ({id(s) for s in train.series} & {id(s) for s in test.series})

    def test_deterministic_and_seed_sensitive(self):
        ds = self.make_dataset(15)
        a1, _ = split(ds, 0.7, seed=0)
        a2, _ = split(ds, 0.7, seed=0)
        b1, _ = split(ds, 0.7, seed=1)
        assert [id(s) for s in a1.series] == [id(s) for s in a2.series]
        assert [id(s) for s in a1.series] != [id(s) for s in b1.series]

    def test_split_tags_meta(self):
        ds = self.make_dataset(4)
        train, test = split(ds, 0.5, seed=0)
        assert train.meta["split"] == "train" and test.meta["split"] == "test"
        assert train.meta["origin"] == "unit"

    def test_rejects_small_or_bad_input(self):
        with pytest.raises(ParameterError):
            split(self.make_dataset(1), 0.5, seed=0)
        with pytest.raises(ParameterError):
            split(self.make_dataset(4), 0.0, seed=0)
        with pytest.raises(ParameterError):
            split(self.make_dataset(4), 1.0, seed=0)


class TestElementSeries:
    def test_removes_stop_reaction(self):
        p = PlantParams()
        n = 50
        rng = np.random.default_rng(0)
        x = np.linspace(p.x_min - 2e-4, p.x_max + 2e-4, n)
        v = 0.1 * rng.standard_normal(n)
        a = rng.standard_normal(n)
        F = 500.0 * rng.standard_normal(n)
        ts = TimeSeries(0.0, 0.1,
                        (("F", "N"), ("x", "m"), ("v", "m/s"), ("a", "m/s2")),
                        np.column_stack([F, x, v, a]))
        out = element_series(ts, p)
        F_stop = p.k_stop * (ramp(x - p.x_max, p.eps_smooth)
                             - ramp(p.x_min - x, p.eps_smooth))
        assert np.max(np.abs(F_stop)) > 100.0  # the stops really engage here
        np.testing.assert_allclose(out["F"], F - F_stop, rtol=0, atol=1e-9)
        np.testing.assert_array_equal(out["x"], x)
        np.testing.assert_array_equal(out["v"], v)
        np.testing.assert_array_equal(out["a"], a)
        assert out.dt == ts.dt and out.t0 == ts.t0

    def test_acceleration_channel_optional(self):
        p = PlantParams()
        ts = element_ts(np.zeros(5), np.full(5, 1.08), np.zeros(5))
        out = element_series(ts, p)
        assert out.names == ("F", "x", "v")


class TestFitCausal:
    def test_recovers_known_net(self):
        _, ds = known_causal_dataset()
        cfg = FitConfig(lr0=0.1, lr_decay=0.997, epochs=1500, seed=0)
        net, rep = fit_causal(ds, cfg)
        var_F = float(np.var(np.concatenate([s["F"] for s in ds.series])))
        assert rep.test_mse < 1e-4 * var_F
        assert rep.train_mse < 1e-4 * var_F
        assert rep.iterations == 1500
        assert len(rep.history) == 1500
        assert rep.converged

    def test_training_beats_initial_net(self):
        _, ds = known_causal_dataset()
        base = FitConfig(lr0=0.05, lr_decay=0.995, epochs=0, seed=4)
        _, rep0 = fit_causal(ds, base)
        _, rep1 = fit_causal(ds, FitConfig(lr0=0.05, lr_decay=0.995,
                                           epochs=150, seed=4))
        assert rep1.test_mse < rep0.test_mse

    def test_constant_force_is_exact(self):
        F0 = 312.5
        series = [element_ts(np.full(30, F0), 1.0 + 0.01 * np.arange(30.0),
                             np.linspace(-1, 1, 30))
                  for _ in range(4)]
        with_a = [TimeSeries(0.0, 0.01,
                             (("F", "N"), ("x", "m"), ("v", "m/s"), ("a", "m/s2")),
                             np.column_stack([s.values,
                                              np.linspace(0, 2, 30)]))
                  for s in series]
        ds = Dataset(with_a, {})
        net, rep = fit_causal(ds, FitConfig(seed=0, epochs=50))
        assert rep.test_mse < 1e-6 * F0 ** 2
        pred = causal_force(net, np.array([1.0, 1.3]), np.array([0.0, 2.0]),
                            np.array([0.0, -3.0]))
        np.testing.assert_allclose(pred, F0, rtol=0, atol=1e-9 * F0)

    def test_missing_channel_raises(self):
        series = [element_ts(np.zeros(10), np.full(10, 1.0), np.zeros(10))
                  for _ in range(3)]
        with pytest.raises(SchemaError):
            fit_causal(Dataset(series, {}), FitConfig(epochs=1))

    def test_divergent_learning_rate_raises(self):
        _, ds = known_causal_dataset()
        with pytest.raises(FitError):
            fit_causal(ds, FitConfig(lr0=3.0, epochs=300, seed=0))

    def test_deterministic_per_seed(self):
        _, ds = known_causal_dataset()
        cfg = FitConfig(lr0=0.05, epochs=60, seed=2)
        n1, r1 = fit_causal(ds, cfg)
        n2, r2 = fit_causal(ds, cfg)
        np.testing.assert_array_equal(n1.W0, n2.W0)
        np.testing.assert_array_equal(n1.W1, n2.W1)
        assert r1.train_mse == r2.train_mse
        assert r1.test_mse == r2.test_mse

    def test_report_params_describe_model(self):
        _, ds = known_causal_dataset(n_series=4, m=80)
        net, rep = fit_causal(ds, FitConfig(epochs=5, seed=0))
        assert rep.params["type"] == "causal"
        assert rep.params["dims"] == [3, 50, 1]


class TestPowellMinimize:
    def test_quadratic_in_three_sweeps(self):
        Q = np.array([[3.0, 1.2], [1.2, 2.0]])
        f = lambda z: float(z @ Q @ z) - 4.0 * z[0] + 1.0
        z_star = np.linalg.solve(2.0 * Q, np.array([4.0, 0.0]))
        res = powell_minimize(f, np.array([5.0, -7.0]))
        assert res["converged"]
        assert res["sweeps"] <= 3
        assert res["fun"] - f(z_star) <= 1e-8

    def test_random_quadratics(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            A = rng.standard_normal((3, 3))
            Q = A @ A.T + 0.5 * np.eye(3)
            b = rng.standard_normal(3)
            f = lambda z: float(z @ Q @ z - b @ z)
            z_star = np.linalg.solve(2.0 * Q, b)
            res = powell_minimize(f, rng.standard_normal(3) * 4.0)
            assert res["fun"] - f(z_star) <= 1e-8

    def test_rosenbrock_within_budget(self):
        f = lambda z: float(100.0 * (z[1] - z[0] ** 2) ** 2 + (1.0 - z[0]) ** 2)
        res = powell_minimize(f, np.array([-1.2, 1.0]), budget=10000)
        assert res["fun"] < 1e-6
        assert res["n_evals"] <= 10000
        hist = np.array(res["history"])
        assert np.all(np.diff(hist) <= 0.0)

    def test_budget_exhaustion_returns_best(self):
        f = lambda z: float(100.0 * (z[1] - z[0] ** 2) ** 2 + (1.0 - z[0]) ** 2)
        res = powell_minimize(f, np.array([-1.2, 1.0]), budget=25)
        assert not res["converged"]
        assert res["n_evals"] <= 25
        assert res["fun"] <= res["history"][0]
        assert np.isfinite(res["fun"])

    def test_nan_objective_treated_as_worst(self):
        def f(z):
            if z[0] < 0.0:
                return float("nan")
            return float((z[0] - 2.0) ** 2 + z[1] * z[1])
        res = powell_minimize(f, np.array([3.0, 1.0]), budget=2000)
        assert np.isfinite(res["fun"])
        assert res["fun"] <= res["history"][0]

    def test_rejects_degenerate_input(self):
        with pytest.raises(ParameterError):
            powell_minimize(lambda z: 0.0, np.array([1.0]), budget=0)
        with pytest.raises(ParameterError):
            powell_minimize(lambda z: 0.0, np.array([]))


class TestPowellFinetune:
    def make_net(self):
        return CausalNet.random(hidden=3, scale=0.3, seed=4)

    def test_improves_offset_quadratic(self):
        net0 = self.make_net()
        theta_star = causal_params(net0) + 0.5
        loss = lambda q: float(np.sum((q - theta_star) ** 2)) + 0.25
        net1, rep = powell_finetune(net0, loss, budget=8000)
        assert rep.improvement is not None and rep.improvement > 0.9
        assert rep.converged
        assert abs(rep.train_mse - 0.25) < 1e-9
        np.testing.assert_allclose(causal_params(net1), theta_star,
                                   rtol=0, atol=1e-6)
        hist = np.array(rep.history)
        assert np.all(np.diff(hist) <= 0.0)

    def test_stationary_start_reports_zero(self):
        net0 = self.make_net()
        theta0 = causal_params(net0)
        loss = lambda q: float(np.sum((q - theta0) ** 2)) + 0.1
        net1, rep = powell_finetune(net0, loss, budget=8000)
        assert rep.improvement == 0.0
        assert rep.converged
        np.testing.assert_array_equal(causal_params(net1), theta0)

    def test_budget_flagged(self):
        net0 = self.make_net()
        theta_star = causal_params(net0) + 2.0
        loss = lambda q: float(np.sum((q - theta_star) ** 2))
        _, rep = powell_finetune(net0, loss, budget=30)
        assert not rep.converged

    def test_negative_loss_clamped_in_report(self):
        net0 = self.make_net()
        theta0 = causal_params(net0)
        loss = lambda q: float(np.sum((q - theta0 - 0.1) ** 2)) - 5.0
        _, rep = powell_finetune(net0, loss, budget=8000)
        assert rep.train_mse == 0.0


class TestFitAcausalPoly:
    TRUE = PolyGMSD(150.0, (6e3, 2e4, 5e4), (600.0, 50.0, 20.0), 1.08)

    def rich_series(self):
        n = 801
        dt = 0.01
        F = multisine(n, dt, (2500.0, 1800.0, 900.0), (1.7, 0.53, 4.1),
                      (0.0, 1.0, 0.3))
        return poly_series(self.TRUE, F, dt)

    def test_recovers_known_model(self):
        ts = self.rich_series()
        model, rep = fit_acausal_poly(ts, FitConfig(seed=1, restarts=2, epochs=300))
        th_fit = poly_params(model)
        th_true = poly_params(self.TRUE)
        rel = np.abs(th_fit - th_true) / np.abs(th_true)
        assert np.max(rel) < 1e-2
        assert rep.train_mse < 1e-12
        assert rep.converged

    def test_pure_mass_drops_spring_and_damper(self):
        ts = pure_mass_series(m_true=120.0)
        model, rep = fit_acausal_poly(ts, FitConfig(seed=0, restarts=2, epochs=300))
        F_rms = float(np.sqrt(np.mean(ts["F"] ** 2)))
        x_std = float(np.std(ts["x"]))
        v_std = float(np.std(ts["v"]))
        assert abs(model.m - 120.0) / 120.0 < 1e-3
        assert model.c[0] * x_std < 1e-3 * F_rms
        assert model.d[0] * v_std < 1e-3 * F_rms
        assert rep.train_mse < 1e-10

    def test_noisy_fit_keeps_coefficients_nonnegative(self):
        ts = self.rich_series()
        rng = np.random.default_rng(8)
        vals = ts.values.copy()
        vals[:, 1] += 1e-3 * rng.standard_normal(vals.shape[0])
        vals[:, 2] += 1e-2 * rng.standard_normal(vals.shape[0])
        noisy = TimeSeries(ts.t0, ts.dt, ts.channels, vals)
        model, _ = fit_acausal_poly(noisy, FitConfig(seed=2, restarts=2, epochs=150))
        assert model.m >= 1e-3
        assert np.all(np.asarray(model.c) >= 0.0)
        assert np.all(np.asarray(model.d) >= 0.0)
        assert check_dissipative(model)["ok"]

    def test_mass_clamp_warns(self):
        ts = pure_mass_series(m_true=120.0)
        with pytest.warns(RuntimeWarning):
            model, rep = fit_acausal_poly(
                ts, FitConfig(seed=0, restarts=1, epochs=200,
                              bounds={"m": (200.0, math.inf)}))
        assert model.m >= 200.0 * (1.0 - 1e-12)
        assert model.m <= 200.0 * (1.0 + 1e-2)
        assert len(rep.warnings) == 1

    def test_bounds_override_is_honored(self):
        ts = self.rich_series()
        model, _ = fit_acausal_poly(
            ts, FitConfig(seed=0, restarts=1, epochs=80,
                          bounds={"c2": (0.0, 1000.0)}))
        assert model.c[2] <= 1000.0 * (1.0 + 1e-9)

    def test_deterministic_per_seed(self):
        ts = self.rich_series()
        cfg = FitConfig(seed=5, restarts=2, epochs=60)
        m1, r1 = fit_acausal_poly(ts, cfg)
        m2, r2 = fit_acausal_poly(ts, cfg)
        np.testing.assert_array_equal(poly_params(m1), poly_params(m2))
        assert r1.train_mse == r2.train_mse

    def test_rejects_bad_input(self):
        short = element_ts(np.zeros(3), np.full(3, 1.0), np.zeros(3))
        with pytest.raises(ParameterError):
            fit_acausal_poly(short, FitConfig())
        no_v = TimeSeries(0.0, 0.01, (("F", "N"), ("x", "m")),
                          np.zeros((10, 2)))
        with pytest.raises(SchemaError):
            fit_acausal_poly(no_v, FitConfig())
        ts = pure_mass_series()
        with pytest.raises(ParameterError):
            fit_acausal_poly(ts, FitConfig(bounds={"k_wrong": (0, 1)}))

    def test_fitted_values_fixture_round_trips(self, tmp_path):
        """A model with realistic fitted magnitudes survives disk round trip
        and reproduces the force arithmetic term by term."""
        model = PolyGMSD(150.0, (6.5e3, 0.45, 4.15e4), (5.96e2, 0.0, 0.0), 1.077)
        path = tmp_path / "element.json"
        save_model(model, str(path))
        back = load_model(str(path))
        assert isinstance(back, PolyGMSD)
        np.testing.assert_array_equal(poly_params(back), poly_params(model))
        x = np.array([1.0, 1.077, 1.16])
        v = np.array([-0.4, 0.0, 1.3])
        a = np.array([2.0, 0.0, -5.0])
        forces = poly_forces(back, x, v, a)
        dx = x - 1.077
        np.testing.assert_allclose(
            forces["F_c"], 6.5e3 * dx + 0.45 * dx ** 3 + 4.15e4 * dx ** 5,
            rtol=1e-15)
        np.testing.assert_allclose(forces["F_d"], 5.96e2 * v, rtol=1e-15)
        np.testing.assert_allclose(forces["F_m"], 150.0 * a, rtol=1e-15)
        np.testing.assert_allclose(
            forces["F_total"], forces["F_m"] + forces["F_c"] + forces["F_d"],
            rtol=1e-15)


class TestFitAcausalNN:
    def known_series(self):
        from switchdiag.surrogates import PosMapGMSD, PosMapNet
        h = 15
        def rnd_net(scale, r):
            rr = np.random.default_rng(r)
            return PosMapNet(0.3 * rr.standard_normal((h, 2)),
                             0.3 * rr.standard_normal(h),
                             0.3 * rr.standard_normal((1, h)),
                             np.ones(1), scale)
        true = PosMapGMSD(180.0, rnd_net(80.0, 1), rnd_net(25.0, 2), 1.07)
        n = 601
        dt = 0.01
        F = multisine(n, dt, (2200.0, 1500.0, 700.0), (1.3, 0.47, 3.7),
                      (0.0, 0.8, 0.0))
        th = posmap_params(true)
        xs, vs, flag = _k.element_sim_posmap(th, h, F, 1.07, 0.0, 1, dt)
        assert flag == 0
        return element_ts(F, xs, vs, dt)

    def rest_series(self):
        n = 101
        return TimeSeries(0.0, 0.1, ELEMENT_CHANNELS,
                          np.column_stack([np.zeros(n), np.full(n, 1.08),
                                           np.zeros(n)]))

    def test_tracks_known_model_trajectory(self):
        ts = self.known_series()
        model, rep = fit_acausal_nn(ts, FitConfig(seed=2, restarts=2, epochs=250))
        signal_var = float(np.var(ts["x"]) + np.var(ts["v"]))
        assert rep.train_mse < 1e-3 * signal_var
        assert model.hidden == 15
        assert check_dissipative(model)["ok"]

    def test_rest_data_stays_at_rest(self):
        ts = self.rest_series()
        model, rep = fit_acausal_nn(ts, FitConfig(seed=1, restarts=1, epochs=50))
        assert rep.train_mse < 1e-15
        assert rep.converged
        assert check_dissipative(model)["ok"]
        th = posmap_params(model)
        xs, vs, flag = _k.element_sim_posmap(th, model.hidden, ts["F"],
                                             1.08, 0.0, 10, ts.dt)
        assert flag == 0
        np.testing.assert_allclose(xs, 1.08, rtol=0, atol=1e-12)
        np.testing.assert_allclose(vs, 0.0, rtol=0, atol=1e-12)

    def test_hidden_override(self):
        ts = self.rest_series()
        model, _ = fit_acausal_nn(ts, FitConfig(seed=0, restarts=1, epochs=20,
                                                hidden=5))
        assert model.hidden == 5

    def test_deterministic_per_seed(self):
        ts = self.known_series()
        cfg = FitConfig(seed=3, restarts=1, epochs=40)
        m1, r1 = fit_acausal_nn(ts, cfg)
        m2, r2 = fit_acausal_nn(ts, cfg)
        np.testing.assert_array_equal(posmap_params(m1), posmap_params(m2))
        assert r1.train_mse == r2.train_mse

    def test_rejects_unknown_bound(self):
        ts = self.rest_series()
        with pytest.raises(ParameterError):
            fit_acausal_nn(ts, FitConfig(bounds={"c0": (0, 1)}))
