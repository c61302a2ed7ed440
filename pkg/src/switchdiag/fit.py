"""Training pipelines for the reduced representations.

Three fitting routes live here.  The causal net is trained as a plain
regression (force from position, velocity, acceleration) with mini-batch
gradient descent, then optionally polished against a whole-system loss by
a derivative-free conjugate-direction search.  The two acausal elements
are fitted in simulation: the element is driven by the recorded force,
its trajectory is compared against the recorded one, and the loss gradient
comes from forward sensitivities integrated alongside the state.  That
gradient is exact for the discrete integrator, which is what makes a
bounded quasi-Newton solve practical.

All fits are deterministic for a given seed.  Restarts use seed-derived
random streams, so they are logically independent of each other; this
implementation runs them one after another and keeps the best result.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .core import (Dataset, FitError, ParameterError, SchemaError, TimeSeries,
                   derived_rng)
from .plant import PlantParams, ramp
from .surrogates import (CausalNet, PolyGMSD, PosMapGMSD, PosMapNet,
                         causal_force, causal_from_params, causal_params,
                         model_to_dict, poly_from_params, posmap_from_params,
                         posmap_params)
from . import _kernels as _k

__all__ = [
    "FitConfig", "FitReport", "split", "element_series",
    "fit_causal", "powell_minimize", "powell_finetune",
    "fit_acausal_poly", "fit_acausal_nn",
]

# Internal integration step target for the simulated element, in seconds.
# Recorded data is typically sampled at 0.1 s; the element itself moves on
# a ~0.1 s time scale, so a 0.01 s internal step keeps RK4 well resolved.
_STEP_TARGET = 0.01

# Gradient agreement demanded from the pre-flight finite-difference check.
_FD_REL = 1e-4

_POLY_NAMES = ("m", "c0", "c1", "c2", "d0", "d1", "d2", "x_fix")


# ---------------------------------------------------------------------------
# configuration and report containers


@dataclass(frozen=True)
class FitConfig:
    """Knobs shared by all fitting routes.

    ``epochs`` is the gradient-descent epoch count for the causal fit and
    the iteration cap per restart for the quasi-Newton acausal fits.
    ``bounds`` optionally overrides box bounds per parameter name.
    """

    split_ratio: float = 0.7
    lr0: float = 1e-2
    lr_decay: float = 0.99
    epochs: int = 500
    batch: int = 64
    seed: int = 0
    restarts: int = 5
    hidden: int | None = None
    bounds: dict | None = None

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ParameterError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if not self.lr0 > 0.0:
            raise ParameterError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ParameterError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch < 1:
            raise ParameterError(f"batch must be at least 1, got {self.batch}")
        if self.restarts < 1:
            raise ParameterError(f"restarts must be at least 1, got {self.restarts}")
        if self.hidden is not None and self.hidden < 1:
            raise ParameterError(f"hidden must be at least 1, got {self.hidden}")


@dataclass(frozen=True)
class FitReport:
    """Outcome of one fit: losses, iteration count, and the final parameters."""

    train_mse: float
    test_mse: float
    iterations: int
    converged: bool
    params: dict = field(default_factory=dict)
    history: tuple = ()
    improvement: float | None = None
    warnings: tuple = ()

    def __post_init__(self):
        for name in ("train_mse", "test_mse"):
            val = getattr(self, name)
            if math.isnan(val) or val < 0.0:
                raise ParameterError(f"{name} must be nonnegative, got {val}")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "train_mse": self.train_mse,
            "test_mse": self.test_mse,
            "iterations": self.iterations,
            "converged": self.converged,
            "params": self.params,
            "history": list(self.history),
            "improvement": self.improvement,
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# dataset handling


def split(data: Dataset, ratio: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Shuffle whole series and split them into train and test datasets.

    The split never cuts inside a series.  Counts use the floor of
    ``n * ratio`` clamped so both sides keep at least one series, so 15
    series at 0.7 give 10 train and 5 test.  Deterministic per seed.
    """
    if not 0.0 < ratio < 1.0:
        raise ParameterError(f"ratio must be in (0, 1), got {ratio}")
    n = len(data.series)
    if n < 2:
        raise ParameterError(f"need at least 2 series to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(math.floor(n * ratio)), 1), n - 1)
    take = lambda idx, tag: Dataset(
        [data.series[i] for i in sorted(idx)],
        {**data.meta, "split": tag},
    )
    return take(perm[:n_train], "train"), take(perm[n_train:], "test")


def element_series(ts: TimeSeries, p: PlantParams) -> TimeSeries:
    """Reduce a plant recording to the element training channels.

    The recorded contact force still contains whatever the end stops
    absorb.  The stop reaction is a known function of position, so it is
    recomputed and removed; what remains is the force the rail chain
    itself answers for, which is exactly what a surrogate element has to
    reproduce.  Output channels are (F, x, v) plus (a) when present.
    """
    x = ts["x"]
    F_stop = p.k_stop * (ramp(x - p.x_max, p.eps_smooth)
                         - ramp(p.x_min - x, p.eps_smooth))
    cols = [ts["F"] - F_stop, x, ts["v"]]
    channels = [("F", "N"), ("x", "m"), ("v", "m/s")]
    if "a" in ts.names:
        cols.append(ts["a"])
        channels.append(("a", "m/s2"))
    return TimeSeries(ts.t0, ts.dt, tuple(channels), np.column_stack(cols))


def _stack_causal(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for ts in data.series:
        F, x, v, a = (ts[c] for c in ("F", "x", "v", "a"))
        xs.append(np.column_stack([x, v, a]))
        ys.append(F)
    return np.concatenate(xs), np.concatenate(ys)


# ---------------------------------------------------------------------------
# causal net training


def fit_causal(data: Dataset, cfg: FitConfig | None = None) -> tuple[CausalNet, FitReport]:
    """Train the causal force map F = net(x, v, a) by mini-batch descent.

    Series are split whole into train and test sets.  Inputs and targets
    are standardized over the training set for conditioning; the learned
    standardization is folded back into the returned weights, so the net
    maps raw physical units.  The learning rate decays as
    ``lr0 * lr_decay ** epoch``.  A non-finite batch loss aborts the fit.
    """
    cfg = cfg or FitConfig()
    train, test = split(data, cfg.split_ratio, cfg.seed)
    Xtr, ytr = _stack_causal(train)
    Xte, yte = _stack_causal(test)

    mu_in = Xtr.mean(axis=0)
    sd_in = Xtr.std(axis=0)
    sd_in[sd_in == 0.0] = 1.0
    mu_F = float(ytr.mean())
    sd_F = float(ytr.std())
    const_target = sd_F == 0.0
    if const_target:
        sd_F = 1.0

    Xs = (Xtr - mu_in) / sd_in
    ys = (ytr - mu_F) / sd_F

    h = cfg.hidden if cfg.hidden is not None else 50
    rng = derived_rng(cfg.seed, "fit-causal")
    W0 = rng.standard_normal((h, 3)) / math.sqrt(3.0)
    b0 = np.zeros(h)
    W1 = rng.standard_normal((1, h)) / math.sqrt(h)
    b1 = np.zeros(1)

    n = ys.size
    history = []
    if const_target:
        # Every training target is the same value; the exact optimum is the
        # constant map, so descent has nothing left to do.
        W1 = np.zeros((1, h))
        epochs_run = 0
    else:
        epochs_run = cfg.epochs
        # Overflow on a diverging run is the detection signal, not a bug;
        # keep numpy quiet and let the finiteness check below speak.
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(cfg.epochs):
                lr = cfg.lr0 * cfg.lr_decay ** epoch
                order = rng.permutation(n)
                ep_sum = 0.0
                for s in range(0, n, cfg.batch):
                    idx = order[s:s + cfg.batch]
                    Xb = Xs[idx]
                    yb = ys[idx]
                    B = idx.size
                    Z = Xb @ W0.T + b0
                    T = np.tanh(Z)
                    pred = T @ W1[0] + b1[0]
                    e = pred - yb
                    loss = float(e @ e) / B
                    if not math.isfinite(loss):
                        raise FitError(
                            f"training loss became non-finite at epoch {epoch}; "
                            "lower lr0 or check the data scaling")
                    g = (2.0 / B) * e
                    gW1 = g @ T
                    gb1 = g.sum()
                    dZ = np.outer(g, W1[0]) * (1.0 - T * T)
                    gW0 = dZ.T @ Xb
                    gb0 = dZ.sum(axis=0)
                    W0 -= lr * gW0
                    b0 -= lr * gb0
                    W1[0] -= lr * gW1
                    b1[0] -= lr * gb1
                    ep_sum += loss * B
                history.append(ep_sum / n * sd_F ** 2)

    # Fold standardization into the weights: the returned net acts on raw
    # (x, v, a) and returns raw force.
    net = CausalNet(W0 / sd_in, b0 - W0 @ (mu_in / sd_in),
                    sd_F * W1, sd_F * b1 + mu_F)

    def _raw_mse(X, y):
        pred = causal_force(net, X[:, 0], X[:, 1], X[:, 2])
        d = pred - y
        return float(d @ d) / y.size

    train_mse = _raw_mse(Xtr, ytr)
    test_mse = _raw_mse(Xte, yte)
    if not (math.isfinite(train_mse) and math.isfinite(test_mse)):
        raise FitError("fitted net produces non-finite predictions")
    converged = not history or history[-1] <= history[0]
    report = FitReport(train_mse=train_mse, test_mse=test_mse,
                       iterations=epochs_run, converged=converged,
                       params=model_to_dict(net), history=tuple(history))
    return net, report


# ---------------------------------------------------------------------------
# derivative-free polish (conjugate directions with bracketed line searches)


class _OutOfBudget(Exception):
    pass


class _CountedFun:
    """Wraps an objective with an evaluation budget and best-point memory."""

    def __init__(self, f, limit):
        self.f = f
        self.limit = int(limit)
        self.count = 0
        self.best_x = None
        self.best_f = math.inf

    def __call__(self, x):
        if self.count >= self.limit:
            raise _OutOfBudget
        self.count += 1
        fx = float(self.f(np.asarray(x, float)))
        if math.isnan(fx):
            fx = math.inf
        if fx < self.best_f:
            self.best_f = fx
            self.best_x = np.array(x, float)
        return fx


_GOLD = 1.6180339887498949
_CGOLD = 0.3819660112501051


def _bracket(g, f0, step):
    """Expand downhill from (0, step) until a minimum is bracketed."""
    xa, fa = 0.0, f0
    xb = step
    fb = g(xb)
    if fb > fa:
        xa, xb = xb, xa
        fa, fb = fb, fa
    xc = xb + _GOLD * (xb - xa)
    fc = g(xc)
    for _ in range(60):
        if fb <= fc:
            break
        r = (xb - xa) * (fb - fc)
        q = (xb - xc) * (fb - fa)
        denom = 2.0 * math.copysign(max(abs(q - r), 1e-21), q - r)
        u = xb - ((xb - xc) * q - (xb - xa) * r) / denom
        ulim = xb + 100.0 * (xc - xb)
        if (xb - u) * (u - xc) > 0.0:
            fu = g(u)
            if fu < fc:
                return xb, u, xc, fb, fu, fc
            if fu > fb:
                return xa, xb, u, fa, fb, fu
            u = xc + _GOLD * (xc - xb)
            fu = g(u)
        elif (xc - u) * (u - ulim) > 0.0:
            fu = g(u)
            if fu < fc:
                xb, xc = xc, u
                fb, fc = fc, fu
                u = xc + _GOLD * (xc - xb)
                fu = g(u)
        elif (u - ulim) * (ulim - xc) >= 0.0:
            u = ulim
            fu = g(u)
        else:
            u = xc + _GOLD * (xc - xb)
            fu = g(u)
        xa, xb, xc = xb, xc, u
        fa, fb, fc = fb, fc, fu
    return xa, xb, xc, fa, fb, fc


def _brent_1d(g, xa, xb, xc, fb, tol=1e-11, maxiter=80):
    """Brent minimization of g on a bracketing triple; returns (x, g(x))."""
    a, b = (xa, xc) if xa < xc else (xc, xa)
    x = w = v = xb
    fx = fw = fv = fb
    d = e = 0.0
    for _ in range(maxiter):
        xm = 0.5 * (a + b)
        tol1 = tol * abs(x) + 1e-15
        tol2 = 2.0 * tol1
        if abs(x - xm) <= tol2 - 0.5 * (b - a):
            break
        use_golden = True
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            etemp = e
            e = d
            if not (abs(p) >= abs(0.5 * q * etemp) or p <= q * (a - x)
                    or p >= q * (b - x)):
                d = p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = math.copysign(tol1, xm - x)
                use_golden = False
        if use_golden:
            e = (a - x) if x >= xm else (b - x)
            d = _CGOLD * e
        u = x + d if abs(d) >= tol1 else x + math.copysign(tol1, d)
        fu = g(u)
        if fu <= fx:
            if u >= x:
                a = x
            else:
                b = x
            v, w, x = w, x, u
            fv, fw, fx = fw, fx, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, w = w, u
                fv, fw = fw, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x, fx


def _line_min(F, x, f0, u, step):
    """Minimize along x + alpha*u; never returns a point worse than f0."""
    g = lambda alpha: F(x + alpha * u)
    xa, xb, xc, fa, fb, fc = _bracket(g, f0, step)
    alpha, falpha = _brent_1d(g, xa, xb, xc, fb)
    if falpha < f0:
        return alpha, falpha
    return 0.0, f0


def powell_minimize(f, x0, budget: int = 10000, ftol: float = 1e-12,
                    max_sweeps: int = 200) -> dict:
    """Powell's conjugate-direction search without derivatives.

    Each sweep line-minimizes along every direction in turn, then applies
    the standard replacement test to swap the direction of largest descent
    for the net sweep displacement.  The returned history holds the best
    value after each sweep and is nonincreasing by construction.  When the
    evaluation budget runs out mid-sweep the best point seen so far is
    returned with ``converged`` False.
    """
    x = np.asarray(x0, float).copy()
    n = x.size
    if n == 0:
        raise ParameterError("x0 must have at least one coordinate")
    if budget < 1:
        raise ParameterError(f"budget must be positive, got {budget}")
    F = _CountedFun(f, budget)
    try:
        f0 = F(x)
    except _OutOfBudget:  # pragma: no cover - budget >= 1 guarantees one eval
        raise ParameterError("budget too small for a single evaluation")
    U = np.eye(n)
    steps = np.ones(n)
    history = [f0]
    sweeps = 0
    converged = False
    try:
        for _ in range(max_sweeps):
            f_start = f0
            x_start = x.copy()
            biggest = 0.0
            bigdir = 0
            for i in range(n):
                f_before = f0
                alpha, fl = _line_min(F, x, f0, U[i], steps[i])
                if fl < f0:
                    x = x + alpha * U[i]
                    f0 = fl
                    steps[i] = max(abs(alpha), 1e-10)
                if f_before - f0 > biggest:
                    biggest = f_before - f0
                    bigdir = i
            sweeps += 1
            history.append(f0)
            if 2.0 * (f_start - f0) <= ftol * (abs(f_start) + abs(f0)) + 1e-300:
                converged = True
                break
            # Replacement test: only adopt the sweep displacement as a new
            # direction when the quadratic model says it pays off.
            fe = F(2.0 * x - x_start)
            if fe < f_start:
                t = (2.0 * (f_start - 2.0 * f0 + fe)
                     * (f_start - f0 - biggest) ** 2
                     - biggest * (f_start - fe) ** 2)
                if t < 0.0:
                    u_new = x - x_start
                    norm = float(np.linalg.norm(u_new))
                    if norm > 0.0:
                        u_new = u_new / norm
                        alpha, fl = _line_min(F, x, f0, u_new, 1.0)
                        if fl < f0:
                            x = x + alpha * u_new
                            f0 = fl
                        U[bigdir] = U[n - 1]
                        steps[bigdir] = steps[n - 1]
                        U[n - 1] = u_new
                        steps[n - 1] = max(abs(alpha), 1.0)
    except _OutOfBudget:
        pass
    if F.best_f < f0 and F.best_x is not None:
        x, f0 = F.best_x.copy(), F.best_f
    return {"x": x, "fun": f0, "history": tuple(history),
            "n_evals": F.count, "sweeps": sweeps, "converged": converged}


def powell_finetune(initial: CausalNet, system_loss, budget: int = 10000,
                    ftol: float = 1e-10) -> tuple[CausalNet, FitReport]:
    """Polish a trained causal net against a whole-system loss.

    ``system_loss`` maps the flat net parameter vector to a scalar; it is
    typically a closed-loop simulation error, so no gradients exist and
    the search is derivative free.  The loss sequence is monotone.  The
    report's ``improvement`` is the fractional decrease from the starting
    loss; a start at a stationary point reports zero improvement.
    """
    theta0 = causal_params(initial)
    res = powell_minimize(system_loss, theta0, budget=budget, ftol=ftol)
    net = causal_from_params(res["x"], hidden=initial.hidden)
    f_init = res["history"][0]
    f_final = res["fun"]
    if math.isfinite(f_init) and f_init > 0.0:
        improvement = max(0.0, (f_init - f_final) / f_init)
    else:
        improvement = 0.0
    final = max(f_final, 0.0)
    report = FitReport(train_mse=final, test_mse=final,
                       iterations=res["sweeps"], converged=res["converged"],
                       params=model_to_dict(net), history=res["history"],
                       improvement=improvement)
    return net, report


# ---------------------------------------------------------------------------
# acausal element fits (simulation-error least squares)


def _element_arrays(series: TimeSeries):
    F = series["F"]
    x = series["x"]
    v = series["v"]
    if series.n_samples < 4:
        raise ParameterError(f"series too short to fit: {series.n_samples} samples")
    return F, x, v


def _substeps(dt: float) -> int:
    return max(1, int(round(dt / _STEP_TARGET)))


def _linear_prefit(series: TimeSeries, F, x, v):
    """Least-squares F ~ m*a + c0*(x - x_fix) + d0*v, used only to seed the fit.

    Uses the recorded acceleration channel when one exists; otherwise a
    central-difference estimate of dv/dt stands in.  The result is a
    starting point, never a reported parameter.
    """
    x_fix0 = float(x.mean())
    if "a" in series.names:
        a = series["a"]
    else:
        a = np.gradient(v, series.dt)
    A = np.column_stack([a, x - x_fix0, v])
    coef, *_ = np.linalg.lstsq(A, F, rcond=None)
    m0 = max(float(coef[0]), 1e-3)
    c00 = max(float(coef[1]), 0.0)
    d00 = max(float(coef[2]), 0.0)
    return m0, c00, d00, x_fix0


def _preflight_grad_check(fun, u0, coords, what):
    """Compare analytic loss gradients against central differences.

    Per-coordinate relative agreement of 1e-4 is demanded, with an absolute
    floor tied to the gradient's overall scale: coordinates whose true
    gradient is many orders below the dominant one carry no usable finite
    difference signal (the difference quotient is pure roundoff there), so
    they are judged against that floor instead of their own magnitude.

    Each coordinate is probed over a ladder of step sizes and passes if any
    step agrees.  A single step cannot serve every coordinate: where the
    loss is strongly nonlinear the difference quotient needs a small step
    to reach the linear regime, while a near-flat coordinate needs a large
    one to rise above roundoff.  A wrong gradient fails at every step.
    """
    f0, g0 = fun(u0)
    if not math.isfinite(f0):
        return
    gmax = max(float(np.max(np.abs(g0))), 1e-300)
    for j in coords:
        ga = float(g0[j])
        last = None
        ok = False
        for h_rel in (1e-4, 1e-5, 1e-6, 1e-7):
            h = h_rel * (1.0 + abs(u0[j]))
            e = np.zeros_like(u0)
            e[j] = h
            fp, _ = fun(u0 + e)
            fm, _ = fun(u0 - e)
            if not (math.isfinite(fp) and math.isfinite(fm)):
                continue
            gf = (fp - fm) / (2.0 * h)
            tol = (_FD_REL * (abs(ga) + abs(gf)) + _FD_REL * 1e-3 * gmax
                   + 1e-12 * (1.0 + gmax))
            last = gf
            if abs(ga - gf) <= tol:
                ok = True
                break
        if not ok and last is not None:
            raise FitError(
                f"{what} gradient check failed on coordinate {j}: "
                f"analytic {ga:.6e} vs finite difference {last:.6e}")


def _run_restarts(make_init, loss_grad, lo, hi, scales_of, coords_of, cfg, what):
    """Shared multi-start L-BFGS-B driver for the acausal fits.

    Restarts with a non-finite starting loss are skipped.  The first viable
    restart undergoes the finite-difference pre-flight check.  Returns the
    best (theta, loss, history, nit, success) tuple.
    """
    best = None
    checked = False
    for r in range(cfg.restarts):
        theta_r = np.clip(make_init(r), lo, hi)
        s = scales_of(theta_r)
        u0 = theta_r / s

        def fun(u, _s=s):
            loss, g = loss_grad(u * _s)
            return loss, g * _s

        f_init, _ = fun(u0)
        if not math.isfinite(f_init) or f_init >= 1e9:
            continue
        if not checked:
            _preflight_grad_check(fun, u0, coords_of(theta_r.size), what)
            checked = True
        hist = [f_init]
        last = {"f": f_init}

        def fun_tracked(u, _fun=fun, _last=last):
            loss, g = _fun(u)
            _last["f"] = loss
            return loss, g

        sb = [(l / si if math.isfinite(l) else None,
               h_ / si if math.isfinite(h_) else None)
              for l, h_, si in zip(lo, hi, s)]
        res = minimize(fun_tracked, u0, jac=True, method="L-BFGS-B",
                       bounds=sb, callback=lambda uk: hist.append(last["f"]),
                       options={"maxiter": cfg.epochs, "ftol": 1e-15,
                                "gtol": 1e-12, "maxcor": 20})
        theta_fit = res.x * s
        loss_fit = float(res.fun)
        if best is None or loss_fit < best[1]:
            best = (theta_fit, loss_fit, tuple(hist), int(res.nit), bool(res.success))
    if best is None:
        raise FitError(f"all {cfg.restarts} restarts of the {what} fit failed "
                       "to reach a finite starting loss")
    return best


def _merge_bounds(names, defaults, overrides):
    lo = np.array([defaults[n][0] for n in names], float)
    hi = np.array([defaults[n][1] for n in names], float)
    if overrides:
        for key, pair in overrides.items():
            if key not in names:
                raise ParameterError(f"unknown bound name {key!r}")
            k = names.index(key)
            lo[k], hi[k] = float(pair[0]), float(pair[1])
    return lo, hi


def fit_acausal_poly(series: TimeSeries, cfg: FitConfig | None = None
                     ) -> tuple[PolyGMSD, FitReport]:
    """Fit the odd-polynomial element to one recorded (F, x, v) series.

    The element is simulated from the recorded initial state under the
    recorded force, and the squared trajectory error in x and v (equally
    weighted) is minimized with L-BFGS-B.  Gradients come from forward
    sensitivities, so they are exact for the discrete integrator.  Box
    bounds keep the mass and every polynomial coefficient nonnegative,
    which preserves dissipativity; the equilibrium offset is free.  A mass
    fitted onto its lower clamp is reported as a warning.
    """
    cfg = cfg or FitConfig()
    F, x, v = _element_arrays(series)
    m_sub = _substeps(series.dt)
    dt = series.dt
    n = x.size

    m0, c00, d00, x_fix0 = _linear_prefit(series, F, x, v)
    theta0 = np.array([m0, c00, 0.0, 0.0, d00, 0.0, 0.0, x_fix0])

    defaults = {"m": (1e-3, math.inf), "c0": (0.0, math.inf),
                "c1": (0.0, math.inf), "c2": (0.0, math.inf),
                "d0": (0.0, math.inf), "d1": (0.0, math.inf),
                "d2": (0.0, math.inf), "x_fix": (-math.inf, math.inf)}
    lo, hi = _merge_bounds(_POLY_NAMES, defaults, cfg.bounds)

    def loss_grad(theta):
        xs, vs, Sx, Sv, flag = _k.fit_sim_poly(theta, F, x[0], v[0], m_sub, dt)
        if flag:
            return 1e9, np.zeros(theta.size)
        dx = xs - x
        dv = vs - v
        loss = 0.5 * (float(dx @ dx) + float(dv @ dv)) / n
        g = (Sx.T @ dx + Sv.T @ dv) / n
        return loss, g

    floors = np.array([1.0, 100.0, 100.0, 100.0, 10.0, 10.0, 10.0, 0.1])

    def make_init(r):
        if r == 0:
            return theta0.copy()
        rng = derived_rng(cfg.seed, "acausal-poly", r)
        return theta0 * np.exp(0.2 * rng.standard_normal(theta0.size))

    theta, loss, hist, nit, ok = _run_restarts(
        make_init, loss_grad, lo, hi,
        scales_of=lambda t: np.maximum(np.abs(t), floors),
        coords_of=lambda size: range(size),
        cfg=cfg, what="polynomial element")

    warn_list = []
    if theta[0] <= lo[0] * (1.0 + 1e-3):
        msg = (f"fitted mass {theta[0]:.3e} sits at its lower bound; the data "
               "carries little inertial information")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        warn_list.append(msg)

    model = poly_from_params(theta)
    mse = (2.0 * loss)  # loss is half the mean squared state error
    report = FitReport(train_mse=mse, test_mse=mse, iterations=nit,
                       converged=ok, params=dict(zip(_POLY_NAMES, theta.tolist())),
                       history=hist, warnings=tuple(warn_list))
    return model, report


def _posmap_coords(size: int, hidden: int):
    """Representative coordinate subset for the pre-flight check.

    Checking all ~126 net weights would cost hundreds of simulations for
    no extra assurance, so the check covers the mass, the offset, both
    output scales and biases, and a spread of weights from each block.
    """
    so = 2
    do_ = so + 4 * hidden + 2
    picks = [0, 1,
             so, so + 1, so + 2 * hidden, so + 3 * hidden,
             so + 4 * hidden, so + 4 * hidden + 1,
             do_, do_ + 1, do_ + 2 * hidden, do_ + 3 * hidden,
             do_ + 4 * hidden, do_ + 4 * hidden + 1]
    return [k for k in picks if k < size]


def fit_acausal_nn(series: TimeSeries, cfg: FitConfig | None = None
                   ) -> tuple[PosMapGMSD, FitReport]:
    """Fit the squared-network element to one recorded (F, x, v) series.

    Same simulation-error objective and sensitivity gradients as the
    polynomial fit.  The network weights are unconstrained; squaring the
    net outputs keeps the spring and damper coefficient fields nonnegative
    by construction, and only the mass carries a positivity bound.
    Restarts redraw the network weights from seed-derived streams.
    """
    cfg = cfg or FitConfig()
    F, x, v = _element_arrays(series)
    m_sub = _substeps(series.dt)
    dt = series.dt
    n = x.size
    h = cfg.hidden if cfg.hidden is not None else 15

    m0, c00, d00, x_fix0 = _linear_prefit(series, F, x, v)
    scale_c = math.sqrt(max(c00, 1.0))
    scale_d = math.sqrt(max(d00, 1.0))
    # The initial coefficient fields are O(max(d00, 1)) by construction, so
    # a near-zero prefit mass would start the search on a trajectory too
    # stiff to integrate.  Floor the starting mass for stability; the
    # optimizer is free to descend from there.
    h_int = dt / m_sub
    m0 = max(m0, 0.5, 2.0 * h_int * max(d00, 1.0))

    def make_init(r):
        rng = derived_rng(cfg.seed, "acausal-nn", r)
        def net(scale):
            return PosMapNet(0.1 * rng.standard_normal((h, 2)),
                             0.1 * rng.standard_normal(h),
                             0.1 * rng.standard_normal((1, h)),
                             np.ones(1), scale)
        if r == 0:
            m_r, x_r = m0, x_fix0
        else:
            m_r = m0 * math.exp(0.2 * rng.standard_normal())
            x_r = x_fix0 + 0.02 * rng.standard_normal()
        model = PosMapGMSD(m_r, net(scale_c), net(scale_d), x_r)
        return posmap_params(model)

    p_total = 2 + 2 * (4 * h + 2)
    lo = np.full(p_total, -math.inf)
    hi = np.full(p_total, math.inf)
    lo[0] = 1e-3
    if cfg.bounds:
        extras = {"m": (lo[0], hi[0]), "x_fix": (lo[1], hi[1])}
        for key, pair in cfg.bounds.items():
            if key not in extras:
                raise ParameterError(f"unknown bound name {key!r}")
            idx = 0 if key == "m" else 1
            lo[idx], hi[idx] = float(pair[0]), float(pair[1])

    def loss_grad(theta):
        xs, vs, Sx, Sv, flag = _k.fit_sim_posmap(theta, h, F, x[0], v[0], m_sub, dt)
        if flag:
            return 1e9, np.zeros(theta.size)
        dx = xs - x
        dv = vs - v
        loss = 0.5 * (float(dx @ dx) + float(dv @ dv)) / n
        g = (Sx.T @ dx + Sv.T @ dv) / n
        return loss, g

    def scales_of(theta):
        s = np.ones(theta.size)
        s[0] = max(abs(theta[0]), 1.0)
        return s

    theta, loss, hist, nit, ok = _run_restarts(
        make_init, loss_grad, lo, hi, scales_of,
        coords_of=lambda size: _posmap_coords(size, h),
        cfg=cfg, what="network element")

    warn_list = []
    if theta[0] <= lo[0] * (1.0 + 1e-3):
        msg = (f"fitted mass {theta[0]:.3e} sits at its lower bound; the data "
               "carries little inertial information")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        warn_list.append(msg)

    model = posmap_from_params(theta, hidden=h)
    mse = 2.0 * loss
    report = FitReport(train_mse=mse, test_mse=mse, iterations=nit,
                       converged=ok, params=model_to_dict(model),
                       history=hist, warnings=tuple(warn_list))
    return model, report
