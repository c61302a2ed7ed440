"""Fault diagnosis on reduced-order hybrid models.

A hybrid model keeps the plant side of the machine exactly (servo motor,
PI speed loop, cam and rod, adjuster contact, end stops, fault forces)
and replaces the 2N-state rail chain with one fitted two-state force
element at the connection point. Candidate fault parameters are then
estimated by differential evolution against a recorded response,
comparing the current, motor angle, and motor speed channels.

The observed recording always comes from the full plant (or the real
machine); the hybrid is only the forward model inside the optimizer.
Simulation failures inside the search do not abort it: the member is
assigned a large penalty loss and evolution continues.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import _kernels as _K
from .core import (ParameterError, ParamVector, SchemaError, SimulationError,
                   TimeSeries, mse, write_json_atomic)
from .faults import (FAULT_BOUNDS, FAULT_MODES, FaultScenario, ThresholdSet,
                     apply_fault)
from .plant import (PLANT_CHANNELS, PlantParams, ReferenceProfile,
                    _contact_forces, locked_equilibrium, make_cycle_reference,
                    ramp, ramp_inv, sat_smooth, simulate_plant)
from .surrogates import (CausalNet, PolyGMSD, PosMapGMSD, causal_force,
                         check_dissipative, model_from_dict, model_to_dict,
                         poly_forces, posmap_forces)

HYBRID_TAGS = ("causal", "poly", "posmap", "full")

SIM_PENALTY = 1e9

LOSS_CHANNELS = ("i", "theta", "omega")

# column layout of a resolved fault row: totals after fault application
_FAULT_COLS = {"delta_gap_left": 0, "delta_gap_right": 1, "b_extra": 2,
               "sigma_obs": 3, "x_obs": 4}
_ADDITIVE = ("delta_gap_left", "delta_gap_right")


# ---------------------------------------------------------------------------
# hybrid model


@dataclass(frozen=True)
class HybridModel:
    """Plant-side dynamics plus one surrogate rail element.

    tag selects the element family: "poly" and "posmap" are two-state
    mass-spring-damper reductions, "causal" closes the loop through an
    implicit force relation F_net(x, v, a) = F_available, and "full"
    keeps the complete reference chain (no surrogate, used as a slow
    exact baseline)."""

    params: PlantParams
    tag: str
    surrogate: object = None

    def __post_init__(self):
        if self.tag not in HYBRID_TAGS:
            raise ParameterError(f"tag must be one of {HYBRID_TAGS}, got {self.tag!r}")
        if self.tag == "full":
            if self.surrogate is not None:
                raise ParameterError("tag 'full' takes no surrogate")
            return
        expected = {"causal": CausalNet, "poly": PolyGMSD, "posmap": PosMapGMSD}[self.tag]
        if not isinstance(self.surrogate, expected):
            raise ParameterError(
                f"tag {self.tag!r} needs a {expected.__name__}, got "
                f"{type(self.surrogate).__name__}")
        if self.tag in ("poly", "posmap"):
            cert = check_dissipative(self.surrogate)
            if not cert["ok"]:
                raise ParameterError(
                    f"surrogate fails the dissipativity check: {cert['reason']}")

    @property
    def n_states(self) -> int:
        return self.params.n_states if self.tag == "full" else 6


def hybrid_to_dict(model: HybridModel) -> dict:
    return {"schema_version": "1",
            "tag": model.tag,
            "plant": model.params.to_dict(),
            "surrogate": None if model.surrogate is None
            else model_to_dict(model.surrogate)}


def hybrid_from_dict(d: dict) -> HybridModel:
    try:
        tag = d["tag"]
        plant = PlantParams.from_dict(d["plant"])
        sur = d["surrogate"]
    except (KeyError, TypeError) as e:
        raise SchemaError(f"malformed hybrid model record: {e!r}") from e
    surrogate = None if sur is None else model_from_dict(sur)
    return HybridModel(params=plant, tag=tag, surrogate=surrogate)


def save_hybrid(model: HybridModel, path: str):
    write_json_atomic(path, hybrid_to_dict(model))


def load_hybrid(path: str) -> HybridModel:
    with open(path) as fh:
        return hybrid_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# excitation


def make_diagnosis_reference(omega_amp: float = 7.2,
                             horizon: float = 18.0) -> ReferenceProfile:
    """Switching profile with an extended return stroke for fault runs.

    The push half matches the normal cycle, but the pull phase keeps
    going well past the point where a healthy machine parks against the
    left stop. The extra rod travel sweeps the whole right-bolt search
    box: a widened right gap shows up as a delayed catch instead of
    silently saturating once the gap exceeds the rail's travel, which is
    what happens on the symmetric cycle."""
    A = float(omega_amp)
    t = np.array([0.0, 0.5, 5.0, 5.5, 7.0, 7.5, horizon - 2.0,
                  horizon - 1.5, horizon])
    w = np.array([0.0, A, A, 0.0, 0.0, -A, -A, 0.0, 0.0])
    return ReferenceProfile(t, w, horizon)


# ---------------------------------------------------------------------------
# shared plumbing


def _pp_array(p: PlantParams) -> np.ndarray:
    """Plant scalars in the kernel layout (fault fields excluded)."""
    return np.array([p.R, p.L, p.kt, p.ke, p.Jm, p.bm, p.Kp, p.Ki, p.v_sat,
                     p.c_cam, p.rod_x0, p.k_contact, p.d_contact, p.eps_smooth,
                     p.x_min, p.x_max, p.k_stop, p.w_obs])


def fault_row(p: PlantParams) -> np.ndarray:
    """(gap_left, gap_right, b_extra, sigma_obs, x_obs) totals for p."""
    return np.array([p.gap_left, p.gap_right, p.b_extra, p.sigma_obs, p.x_obs])


def _surrogate_rest_force(model: HybridModel, x: float) -> float:
    if model.tag == "poly":
        return float(poly_forces(model.surrogate, x, 0.0, 0.0)["F_c"])
    if model.tag == "posmap":
        return float(posmap_forces(model.surrogate, x, 0.0, 0.0)["F_c"])
    return float(causal_force(model.surrogate, x, 0.0, 0.0))


def hybrid_equilibrium(model: HybridModel, lock_x: float | None = None,
                       scenario: FaultScenario | None = None) -> np.ndarray:
    """Rest state with the rail held at lock_x (default: the left stop).

    For surrogate tags the state is (i, theta, omega, e_int, x, v): the
    rod angle solves the force balance against the stop preload plus the
    surrogate's rest force, and the drive settles where the armature
    voltage cancels the holding current."""
    p = model.params if scenario is None else apply_fault(model.params, scenario)
    lock = float(p.x_min if lock_x is None else lock_x)
    if model.tag == "full":
        return locked_equilibrium(p, lock_x=lock)

    eps = p.eps_smooth
    F_stop = p.k_stop * (ramp(lock - p.x_max, eps) - ramp(p.x_min - lock, eps))
    F_need = F_stop + _surrogate_rest_force(model, lock)

    # warm start on the engaged side, then Newton on the rod angle
    if F_need < 0:
        depth = ramp_inv(max(-F_need, 1.0) / p.k_contact, eps) \
            if -F_need > p.k_contact * eps else 0.0
        x_rod = lock - p.gap_right - depth
    else:
        depth = ramp_inv(max(F_need, 1.0) / p.k_contact, eps) \
            if F_need > p.k_contact * eps else 0.0
        x_rod = lock + p.gap_left + depth
    theta = (x_rod - p.rod_x0) / p.c_cam

    scale = max(1.0, abs(F_need))
    for _ in range(80):
        F, dF_dth = _contact_forces(theta, 0.0, lock, 0.0, p)[:2]
        g = F - F_need
        if abs(g) < 1e-10 * scale:
            break
        if dF_dth <= 0:
            raise SimulationError("contact force lost monotonicity in theta")
        theta = theta - g / dF_dth
    else:
        raise SimulationError(
            f"hybrid rest solve did not converge (residual {g:.3e})")

    i = p.c_cam * F_need / p.kt
    u_need = p.R * i
    if abs(u_need) >= 0.8 * p.v_sat:
        raise SimulationError("rest pose would need a saturated drive voltage")
    e_int = u_need / p.Ki
    return np.array([i, theta, 0.0, e_int, lock, 0.0])


def hybrid_rhs(model: HybridModel, z: np.ndarray, omega_ref: float,
               row: np.ndarray | None = None) -> np.ndarray:
    """Reference implementation of the six-state hybrid vector field,
    written with the plant's numpy primitives. The compiled kernels are
    cross-checked against this. row holds fault totals (defaults to the
    model's own parameters)."""
    if model.tag == "full":
        raise ParameterError("hybrid_rhs covers the surrogate tags only")
    p = model.params
    row = fault_row(p) if row is None else np.asarray(row, float)
    gapL, gapR, b_extra, sigma, x_obs = row
    i, theta, omega, e_int, x, v = (float(q) for q in z)

    q = p.replace(gap_left=float(gapL), gap_right=float(gapR))
    F_rod = _contact_forces(theta, omega, x, v, q)[0]
    eps = p.eps_smooth
    F_stop = p.k_stop * (ramp(x - p.x_max, eps) - ramp(p.x_min - x, eps))
    F_fault = (b_extra + sigma * math.exp(-((x - x_obs) / p.w_obs) ** 2)) * v
    F_ext = float(F_rod - F_stop - F_fault)

    if model.tag == "poly":
        f = poly_forces(model.surrogate, x, v, 0.0)
        a = (F_ext - f["F_c"] - f["F_d"]) / model.surrogate.m
    elif model.tag == "posmap":
        f = posmap_forces(model.surrogate, x, v, 0.0)
        a = (F_ext - f["F_c"] - f["F_d"]) / model.surrogate.m
    else:
        a, ok = _solve_accel_py(model.surrogate, x, v, F_ext, 0.0)
        if not ok:
            raise SimulationError("causal acceleration solve failed")

    err = omega_ref - omega
    u_raw = p.Kp * err + p.Ki * e_int
    u, slope, _ = sat_smooth(u_raw, p.v_sat)
    di = (u - p.R * i - p.ke * omega) / p.L
    dw = (p.kt * i - p.bm * omega - p.c_cam * F_rod) / p.Jm
    return np.array([di, omega, dw, err * slope, v, float(a)])


def _solve_accel_py(net: CausalNet, x: float, v: float, F_avail: float,
                    a_init: float):
    """Python twin of the kernel's acceleration solve (same algorithm)."""
    tol = 1e-9 * (1.0 + abs(F_avail))

    def geval(a):
        F = float(causal_force(net, x, v, a))
        return F_avail - F

    a = a_init
    for _ in range(40):
        F = float(causal_force(net, x, v, a))
        g = F_avail - F
        if abs(g) < tol:
            return a, True
        t = np.tanh(net.W0 @ np.array([x, v, a]) + net.b0)
        dF = float((net.W1[0] * (1.0 - t * t)) @ net.W0[:, 2])
        if dF == 0.0 or not math.isfinite(dF):
            break
        a = a + float(np.clip(g / dF, -1e5, 1e5))
        if not math.isfinite(a):
            break
    lo, hi = -1e6, 1e6
    glo, ghi = geval(lo), geval(hi)
    if glo == 0.0:
        return lo, True
    if ghi == 0.0:
        return hi, True
    if (glo > 0.0) == (ghi > 0.0):
        return 0.0, False
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        gm = geval(mid)
        if abs(gm) < tol or (hi - lo) < 1e-12 * (1.0 + abs(mid)):
            return mid, True
        if (gm > 0.0) == (glo > 0.0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi), True


def _grid_shape(reference: ReferenceProfile, n_out: int, dt_out: float,
                dt: float) -> int:
    m_sub = int(round(dt_out / dt))
    if m_sub < 1 or abs(m_sub * dt - dt_out) > 1e-9 * dt_out:
        raise ParameterError(f"dt_out {dt_out} must be a multiple of dt {dt}")
    horizon = (n_out - 1) * dt_out
    if horizon > reference.horizon + 1e-9:
        raise ParameterError(
            f"recording spans {horizon} s but the profile ends at "
            f"{reference.horizon} s")
    return m_sub


def _simulate_rows(model: HybridModel, rows: np.ndarray,
                   reference: ReferenceProfile, n_out: int, dt_out: float,
                   dt: float, z0: np.ndarray):
    """Batched hybrid simulation for resolved fault rows (B, 5).

    Returns (out (B, n_out, 7), flags (B,)) in the plant channel order."""
    rows = np.ascontiguousarray(np.atleast_2d(np.asarray(rows, float)))
    if rows.ndim != 2 or rows.shape[1] != 5:
        raise ParameterError(f"fault rows must be (B, 5), got {rows.shape}")
    m_sub = _grid_shape(reference, n_out, dt_out, dt)
    p = model.params

    if model.tag == "full":
        out = np.empty((rows.shape[0], n_out, 7))
        flags = np.zeros(rows.shape[0], dtype=np.int64)
        for b, r in enumerate(rows):
            q = p.replace(gap_left=float(r[0]), gap_right=float(r[1]),
                          b_extra=float(r[2]), sigma_obs=float(r[3]),
                          x_obs=float(r[4]))
            try:
                ts = simulate_plant(q, reference, dt_out=dt_out, x0=z0)
                if ts.n_samples < n_out:
                    raise SimulationError("profile shorter than the recording")
                out[b] = ts.values[:n_out]
            except SimulationError:
                flags[b] = 1
                out[b] = np.nan
        return out, flags

    kt = np.ascontiguousarray(reference.knots_t)
    kw = np.ascontiguousarray(reference.knots_w)
    pp = _pp_array(p)
    z0 = np.ascontiguousarray(np.asarray(z0, float))
    if z0.shape != (6,):
        raise ParameterError(f"hybrid start state must have shape (6,), got {z0.shape}")

    if model.tag == "poly":
        sp = np.concatenate([[model.surrogate.m], model.surrogate.c,
                             model.surrogate.d, [model.surrogate.x_fix]])
        return _K.sim_poly_batch(rows, z0, kt, kw, pp, sp, n_out, m_sub, dt)
    if model.tag == "posmap":
        g = model.surrogate
        return _K.sim_posmap_batch(
            rows, z0, kt, kw, pp, g.m, g.x_fix,
            np.ascontiguousarray(g.spring.W0), np.ascontiguousarray(g.spring.b0),
            np.ascontiguousarray(g.spring.W1[0]), float(g.spring.b1[0]),
            float(g.spring.scale),
            np.ascontiguousarray(g.damper.W0), np.ascontiguousarray(g.damper.b0),
            np.ascontiguousarray(g.damper.W1[0]), float(g.damper.b1[0]),
            float(g.damper.scale), n_out, m_sub, dt)
    net = model.surrogate
    return _K.sim_causal_batch(
        rows, z0, kt, kw, pp,
        np.ascontiguousarray(net.W0), np.ascontiguousarray(net.b0),
        np.ascontiguousarray(net.W1[0]), float(net.b1[0]), n_out, m_sub, dt)


def simulate_hybrid(model: HybridModel, reference: ReferenceProfile | None = None,
                    scenario: FaultScenario | None = None, dt_out: float = 0.1,
                    dt: float = 1e-3, x0: np.ndarray | None = None) -> TimeSeries:
    """Response of the hybrid model over the profile, with an optional
    fault scenario applied. Starts from the nominal locked pose unless an
    explicit state is given, mirroring how faulty recordings are taken on
    the full plant. Raises SimulationError if the run diverges."""
    if reference is None:
        reference = make_cycle_reference()
    p = model.params
    q = p if scenario is None else apply_fault(p, scenario)
    if model.tag == "full":
        if x0 is None:
            x0 = locked_equilibrium(p, lock_x=p.x_min)
        return simulate_plant(q, reference, dt_out=dt_out, x0=x0)

    n_out = int(round(reference.horizon / dt_out)) + 1
    if abs(reference.horizon / dt_out - (n_out - 1)) > 1e-9:
        raise ParameterError(
            f"horizon {reference.horizon} is not a multiple of dt_out {dt_out}")
    if x0 is None:
        x0 = hybrid_equilibrium(model, lock_x=p.x_min)
    out, flags = _simulate_rows(model, fault_row(q)[None, :], reference,
                                n_out, dt_out, dt, x0)
    if flags[0]:
        raise SimulationError("hybrid simulation diverged")
    return TimeSeries(0.0, dt_out, PLANT_CHANNELS, out[0])


# ---------------------------------------------------------------------------
# diagnosis loss


class _BatchObjective:
    """Vectorized loss over candidate fault-parameter rows.

    Maps optimizer vectors to resolved fault rows (bolt deltas add to the
    model's nominal gaps; drag, severity, and position are absolute),
    simulates the batch, and scores each member against the observed
    current/angle/speed channels. Failed members receive SIM_PENALTY."""

    def __init__(self, model: HybridModel, observed: TimeSeries,
                 reference: ReferenceProfile, names: tuple[str, ...],
                 dt: float = 1e-3):
        if abs(observed.t0) > 1e-9:
            raise ParameterError(f"recording must start at t=0, got t0={observed.t0}")
        self.model = model
        self.reference = reference
        self.names = tuple(names)
        self.dt = float(dt)
        self.dt_out = observed.dt
        self.n_out = observed.n_samples
        _grid_shape(reference, self.n_out, self.dt_out, self.dt)
        self.base = fault_row(model.params)
        self.obs = np.stack([observed[c] for c in LOSS_CHANNELS], axis=0)
        self.z0 = (locked_equilibrium(model.params, lock_x=model.params.x_min)
                   if model.tag == "full"
                   else hybrid_equilibrium(model, lock_x=model.params.x_min))
        self.failures = 0
        self.n_evals = 0

    def rows_for(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, float))
        if theta.shape[1] != len(self.names):
            raise ParameterError(
                f"expected {len(self.names)} parameters {self.names}, "
                f"got {theta.shape[1]}")
        rows = np.tile(self.base, (theta.shape[0], 1))
        for j, name in enumerate(self.names):
            col = _FAULT_COLS[name]
            if name in _ADDITIVE:
                rows[:, col] = self.base[col] + theta[:, j]
            else:
                rows[:, col] = theta[:, j]
        return rows

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, float))
        out, flags = _simulate_rows(self.model, self.rows_for(theta),
                                    self.reference, self.n_out, self.dt_out,
                                    self.dt, self.z0)
        self.n_evals += theta.shape[0]
        losses = np.empty(theta.shape[0])
        for b in range(theta.shape[0]):
            if flags[b] or not np.all(np.isfinite(out[b, :, :3])):
                losses[b] = SIM_PENALTY
                self.failures += 1
                continue
            acc = 0.0
            for k, name in enumerate(LOSS_CHANNELS):
                d = out[b, :, k] - self.obs[k]
                acc += float(np.mean(d * d))
            losses[b] = acc / len(LOSS_CHANNELS)
        return losses


def diagnosis_loss(model: HybridModel, observed: TimeSeries,
                   scenario: FaultScenario, reference: ReferenceProfile | None = None,
                   dt: float = 1e-3, return_failure: bool = False):
    """Mean squared mismatch between the hybrid response under the
    scenario and the observed recording, averaged over the current,
    angle, and speed channels. A diverged simulation scores SIM_PENALTY
    instead of raising, so population searches keep moving."""
    if reference is None:
        reference = make_cycle_reference()
    q = apply_fault(model.params, scenario)
    obj = _BatchObjective(model, observed, reference, (), dt=dt)
    out, flags = _simulate_rows(model, fault_row(q)[None, :], reference,
                                obj.n_out, obj.dt_out, dt, obj.z0)
    if flags[0] or not np.all(np.isfinite(out[0, :, :3])):
        return (SIM_PENALTY, True) if return_failure else SIM_PENALTY
    sim = TimeSeries(0.0, obj.dt_out, PLANT_CHANNELS, out[0])
    loss = mse(sim, observed, LOSS_CHANNELS)
    return (loss, False) if return_failure else loss


# ---------------------------------------------------------------------------
# differential evolution


@dataclass(frozen=True)
class DEConfig:
    """Knobs for the rand/1/bin differential evolution search.

    The population holds pop_mult members per search dimension (at least
    five). Search stops after max_gen generations or earlier once the
    population's loss spread drops below tol."""

    pop_mult: int = 15
    F: float = 0.8
    CR: float = 0.9
    max_gen: int = 100
    tol: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.F < 2.0:
            raise ParameterError(f"F must be in (0, 2), got {self.F}")
        if not 0.0 < self.CR <= 1.0:
            raise ParameterError(f"CR must be in (0, 1], got {self.CR}")
        if self.pop_mult < 1:
            raise ParameterError(f"pop_mult must be >= 1, got {self.pop_mult}")
        if self.max_gen < 1:
            raise ParameterError(f"max_gen must be >= 1, got {self.max_gen}")
        if not self.tol >= 0.0:
            raise ParameterError(f"tol must be >= 0, got {self.tol}")


def differential_evolution(loss, bounds, cfg: DEConfig | None = None,
                           vectorized: bool = False) -> dict:
    """Minimize loss over a box with rand/1/bin differential evolution.

    Mutation v = a + F (b - c) over three distinct members, binomial
    crossover with one forced coordinate, greedy selection, candidates
    clipped to the box. Fully deterministic for a given config seed.
    With vectorized=True the loss is called once per generation on a
    (pop, dim) matrix and must return (pop,) losses.

    Returns {"theta", "loss", "history", "generations", "n_evals",
    "converged"}; history is the best loss so far after the initial
    evaluation and after each generation, so it never increases."""
    cfg = cfg or DEConfig()
    bl = np.asarray([b[0] for b in bounds], float)
    bu = np.asarray([b[1] for b in bounds], float)
    if bl.ndim != 1 or len(bl) == 0:
        raise ParameterError("bounds must be a non-empty sequence of (lo, hi)")
    if not (np.all(np.isfinite(bl)) and np.all(np.isfinite(bu)) and np.all(bl < bu)):
        raise ParameterError("each bound must satisfy lo < hi and be finite")
    d = len(bl)
    P = max(cfg.pop_mult * d, 5)
    rng = np.random.default_rng(cfg.seed)

    def evaluate(block):
        if vectorized:
            vals = np.asarray(loss(block), float)
            if vals.shape != (block.shape[0],):
                raise ParameterError(
                    f"vectorized loss returned {vals.shape}, expected ({block.shape[0]},)")
            return vals
        return np.array([float(loss(row)) for row in block])

    pop = bl + rng.random((P, d)) * (bu - bl)
    losses = evaluate(pop)
    n_evals = P
    best = int(np.argmin(losses))
    best_theta = pop[best].copy()
    best_loss = float(losses[best])
    history = [best_loss]
    converged = False
    generations = 0

    for _ in range(cfg.max_gen):
        trials = np.empty_like(pop)
        for k in range(P):
            r = rng.choice(P - 1, size=3, replace=False)
            r[r >= k] += 1
            mutant = pop[r[0]] + cfg.F * (pop[r[1]] - pop[r[2]])
            np.clip(mutant, bl, bu, out=mutant)
            cross = rng.random(d) < cfg.CR
            cross[rng.integers(d)] = True
            trials[k] = np.where(cross, mutant, pop[k])
        trial_losses = evaluate(trials)
        n_evals += P
        improved = trial_losses <= losses
        pop[improved] = trials[improved]
        losses[improved] = trial_losses[improved]
        generations += 1
        gb = int(np.argmin(losses))
        if losses[gb] < best_loss:
            best_loss = float(losses[gb])
            best_theta = pop[gb].copy()
        history.append(best_loss)
        if float(np.std(losses)) < cfg.tol:
            converged = True
            break

    return {"theta": best_theta, "loss": best_loss,
            "history": np.array(history), "generations": generations,
            "n_evals": n_evals, "converged": converged}


# ---------------------------------------------------------------------------
# fault tracking


@dataclass(frozen=True)
class FaultEstimate:
    """One tracked fault hypothesis: the best parameters found for a
    mode and the residual loss they leave."""

    mode: str
    theta: ParamVector | None
    mse: float
    ok: bool = True
    failures: int = 0
    n_evals: int = 0
    converged: bool = False
    error: str | None = None


@dataclass(frozen=True)
class DiagnosisReport:
    """Per-mode tracking table plus the optional joint estimate and the
    isolation verdict. rows maps mode name to FaultEstimate."""

    rows: dict
    joint: FaultEstimate | None = None
    verdict: dict | None = None
    thresholds: ThresholdSet | None = None
    meta: dict = field(default_factory=dict)

    def with_verdict(self, verdict: dict,
                     thresholds: ThresholdSet | None = None) -> "DiagnosisReport":
        return dc_replace(self, verdict=verdict,
                          thresholds=thresholds or self.thresholds)


def _mode_bounds(mode: str):
    spec = FAULT_BOUNDS[mode]
    names = tuple(n for n, _, _ in spec)
    bounds = [(lo, hi) for _, lo, hi in spec]
    return names, bounds


def _default_de(mode: str, seed: int) -> DEConfig:
    # two-parameter searches get more generations to settle the position
    gens = 80 if mode in ("Obstacle", "Joint") else 50
    return DEConfig(max_gen=gens, seed=seed)


def track_single_fault(model: HybridModel, observed: TimeSeries, mode: str,
                       reference: ReferenceProfile | None = None,
                       de: DEConfig | None = None, seed: int | None = None,
                       dt: float = 1e-3) -> FaultEstimate:
    """Estimate one fault mode's parameters against a recording.

    The search runs differential evolution over that mode's parameter box
    only; all other fault parameters stay at their nominal values."""
    if mode not in FAULT_MODES or mode == "Nominal":
        raise ParameterError(f"mode must be a fault mode, got {mode!r}")
    if reference is None:
        reference = make_cycle_reference()
    names, bounds = _mode_bounds(mode)
    cfg = de or _default_de(mode, seed or 0)
    if seed is not None:
        cfg = dc_replace(cfg, seed=seed)
    obj = _BatchObjective(model, observed, reference, names, dt=dt)
    res = differential_evolution(obj, bounds, cfg, vectorized=True)
    theta = ParamVector(names, res["theta"],
                        np.array([b[0] for b in bounds]),
                        np.array([b[1] for b in bounds]))
    return FaultEstimate(mode=mode, theta=theta, mse=res["loss"],
                         failures=obj.failures, n_evals=res["n_evals"],
                         converged=res["converged"])


def track_all_faults(model: HybridModel, observed: TimeSeries,
                     reference: ReferenceProfile | None = None,
                     de: DEConfig | None = None, seed: int | None = None,
                     dt: float = 1e-3) -> DiagnosisReport:
    """Run track_single_fault for every fault mode and tabulate.

    A mode whose search raises is recorded as a failed row with an error
    message; the remaining modes still complete."""
    rows = {}
    for mode in FAULT_MODES[1:]:
        try:
            rows[mode] = track_single_fault(model, observed, mode,
                                            reference=reference, de=de,
                                            seed=seed, dt=dt)
        except (SimulationError, ParameterError) as e:
            rows[mode] = FaultEstimate(mode=mode, theta=None, mse=math.inf,
                                       ok=False, error=str(e))
    meta = {"seed": 0 if seed is None else int(seed), "tag": model.tag}
    return DiagnosisReport(rows=rows, meta=meta)


JOINT_MODE = "Joint"


def _joint_bounds():
    names, bounds = [], []
    for mode in FAULT_MODES[1:]:
        for n, lo, hi in FAULT_BOUNDS[mode]:
            names.append(n)
            bounds.append((lo, hi))
    return tuple(names), bounds


def estimate_simultaneous(model: HybridModel, observed: TimeSeries,
                          reference: ReferenceProfile | None = None,
                          de: DEConfig | None = None, seed: int | None = None,
                          dt: float = 1e-3) -> FaultEstimate:
    """Joint search over all five fault parameters at once, for cases
    where more than one defect may be present."""
    if reference is None:
        reference = make_cycle_reference()
    names, bounds = _joint_bounds()
    cfg = de or _default_de(JOINT_MODE, seed or 0)
    if seed is not None:
        cfg = dc_replace(cfg, seed=seed)
    obj = _BatchObjective(model, observed, reference, names, dt=dt)
    res = differential_evolution(obj, bounds, cfg, vectorized=True)
    theta = ParamVector(names, res["theta"],
                        np.array([b[0] for b in bounds]),
                        np.array([b[1] for b in bounds]))
    return FaultEstimate(mode=JOINT_MODE, theta=theta, mse=res["loss"],
                         failures=obj.failures, n_evals=res["n_evals"],
                         converged=res["converged"])


# ---------------------------------------------------------------------------
# isolation


def isolate(report: DiagnosisReport, thresholds: ThresholdSet,
            obstacle_travel_range: tuple[float, float] | None = None) -> dict:
    """Pick the fault mode the report supports.

    A mode is a candidate when its estimated parameters deviate from
    nominal by at least the calibrated threshold; an obstacle whose
    estimated position lies outside the traveled range (padded by the
    position threshold) is ruled out no matter how severe it looks. Among
    candidates the smallest residual wins; competitors within a factor
    two stay in as an ambiguous set. No candidates means Nominal.

    Returns {"kind": "fault" | "ambiguous" | "nominal", "modes": [...]}.
    """
    if not report.rows:
        raise ParameterError("report has no tracked modes to isolate from")
    usable = {m: r for m, r in report.rows.items() if r.ok and r.theta is not None}
    if not usable:
        raise ParameterError("every tracked mode failed; nothing to isolate")

    candidates = {}
    for mode, row in usable.items():
        est = row.theta.as_dict()
        if mode == "LeftBolt":
            significant = est["delta_gap_left"] >= thresholds["delta_gap_left"]
        elif mode == "RightBolt":
            significant = est["delta_gap_right"] >= thresholds["delta_gap_right"]
        elif mode == "MissingBearing":
            significant = est["b_extra"] >= thresholds["b_extra"]
        elif mode == "Obstacle":
            significant = est["sigma_obs"] >= thresholds["sigma_obs"]
            if significant and obstacle_travel_range is not None:
                lo, hi = obstacle_travel_range
                pad = thresholds["x_obs"]
                if not (lo - pad <= est["x_obs"] <= hi + pad):
                    significant = False
        else:
            raise ParameterError(f"unknown mode {mode!r} in report")
        if significant:
            candidates[mode] = row.mse

    if not candidates:
        return {"kind": "nominal", "modes": ["Nominal"]}
    ranked = sorted(candidates, key=lambda m: candidates[m])
    best = candidates[ranked[0]]
    close = [m for m in ranked if candidates[m] <= 2.0 * best]
    if len(close) == 1:
        return {"kind": "fault", "modes": close}
    return {"kind": "ambiguous", "modes": close}


# ---------------------------------------------------------------------------
# report serialization


def _estimate_to_dict(r: FaultEstimate) -> dict:
    theta = None
    if r.theta is not None:
        theta = {"names": list(r.theta.names),
                 "values": [float(v) for v in r.theta.values],
                 "lower": [float(v) for v in r.theta.lower],
                 "upper": [float(v) for v in r.theta.upper]}
    return {"mode": r.mode, "theta": theta,
            "mse": None if not math.isfinite(r.mse) else float(r.mse),
            "ok": bool(r.ok), "failures": int(r.failures),
            "n_evals": int(r.n_evals), "converged": bool(r.converged),
            "error": r.error}


def _estimate_from_dict(d: dict) -> FaultEstimate:
    theta = None
    if d["theta"] is not None:
        t = d["theta"]
        theta = ParamVector(tuple(t["names"]), np.array(t["values"], float),
                            np.array(t["lower"], float), np.array(t["upper"], float))
    m = d["mse"]
    return FaultEstimate(mode=d["mode"], theta=theta,
                         mse=math.inf if m is None else float(m),
                         ok=bool(d["ok"]), failures=int(d["failures"]),
                         n_evals=int(d["n_evals"]), converged=bool(d["converged"]),
                         error=d["error"])


def report_to_dict(report: DiagnosisReport) -> dict:
    return {"schema_version": "1",
            "rows": {m: _estimate_to_dict(r) for m, r in report.rows.items()},
            "joint": None if report.joint is None else _estimate_to_dict(report.joint),
            "verdict": report.verdict,
            "thresholds": None if report.thresholds is None
            else report.thresholds.to_dict(),
            "meta": dict(report.meta)}


def report_from_dict(d: dict) -> DiagnosisReport:
    try:
        rows = {m: _estimate_from_dict(r) for m, r in d["rows"].items()}
        joint = None if d["joint"] is None else _estimate_from_dict(d["joint"])
        verdict = d["verdict"]
        thr = d["thresholds"]
    except (KeyError, TypeError) as e:
        raise SchemaError(f"malformed diagnosis report: {e!r}") from e
    return DiagnosisReport(rows=rows, joint=joint, verdict=verdict,
                           thresholds=None if thr is None else ThresholdSet.from_dict(thr),
                           meta=dict(d.get("meta", {})))


def save_report(report: DiagnosisReport, path: str):
    write_json_atomic(path, report_to_dict(report))


def load_report(path: str) -> DiagnosisReport:
    with open(path) as fh:
        return report_from_dict(json.load(fh))
