"""High-fidelity rail-switch plant: DC servo + PI speed loop + cam drive,
a dead-zone adjuster with two bolts, and a lumped flexible rail chain
riding on bearings between two end stops.

Everything is smooth (C1 or better): contacts and stops use the ramp
phi(s) = 0.5*(s + sqrt(s^2 + eps^2)), and the voltage saturation is a C2
piecewise polynomial so the vector field has no switching events. Fault
hooks (extra gap per bolt, extra viscous drag, a localized obstacle) are
part of the parameter set and enter the first rail mass.

State layout: z = [i, theta, omega, e_int, x_1..x_N, v_1..v_N],
dimension 4 + 2N. e_int integrates the speed error (rad), weighted by the
saturation slope so the integrator holds during deep saturation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace, fields as dc_fields

import numpy as np

from .core import ParameterError, SimulationError, TimeSeries
from .sim import IntegratorConfig, integrate

PLANT_CHANNELS = (("i", "A"), ("theta", "rad"), ("omega", "rad/s"),
                  ("F", "N"), ("x", "m"), ("v", "m/s"), ("a", "m/s2"))

FAULT_PARAM_NAMES = ("gap_left", "gap_right", "b_extra", "sigma_obs", "x_obs")


@dataclass(frozen=True)
class PlantParams:
    # motor
    R: float = 1.0          # armature resistance [ohm]
    L: float = 0.01         # armature inductance [H]
    kt: float = 0.5         # torque constant [N m/A]
    ke: float = 0.5         # back-EMF constant [V s/rad]
    Jm: float = 0.01        # rotor inertia [kg m^2]
    bm: float = 1e-3        # rotor viscous drag [N m s/rad]
    # speed controller
    Kp: float = 5.0         # proportional gain [V s/rad]
    Ki: float = 20.0        # integral gain [V/rad]
    v_sat: float = 48.0     # supply voltage limit [V]
    # cam / rod kinematics
    c_cam: float = 5e-3     # rod travel per motor angle [m/rad]
    rod_x0: float = 0.995   # rod position at theta = 0 [m]
    # adjuster (dead zone between two bolts)
    gap_left: float = 5e-3   # free play before the left bolt engages [m]
    gap_right: float = 5e-3  # free play before the right bolt engages [m]
    k_contact: float = 1e6   # bolt contact stiffness [N/m]
    d_contact: float = 1e4   # bolt contact damping [N s/m]
    eps_smooth: float = 1e-4  # ramp smoothing length [m]
    # rail chain
    n_seg: int = 20          # lumped segments
    m_seg: float = 10.0      # mass per segment [kg]
    k_seg: float = 1e6       # segment coupling stiffness [N/m]
    d_seg: float = 1e3       # segment coupling damping [N s/m]
    k_anchor: float = 5e3    # anchor spring on the far end [N/m]
    b_bearing: float = 50.0  # bearing drag per segment mass [N s/m]
    x_neutral: float = 1.08  # anchor rest position [m]
    x_min: float = 1.0       # left end stop [m]
    x_max: float = 1.16      # right end stop [m]
    k_stop: float = 1e7      # end stop stiffness [N/m]
    # fault extension (zero = healthy)
    b_extra: float = 0.0     # extra viscous drag at the connection mass [N s/m]
    sigma_obs: float = 0.0   # obstacle severity [N s/m]
    x_obs: float = 1.1       # obstacle center [m]
    w_obs: float = 0.01      # obstacle width, fixed [m]

    def __post_init__(self):
        pos = ("R", "L", "kt", "ke", "Jm", "Kp", "Ki", "v_sat", "c_cam",
               "k_contact", "d_contact", "eps_smooth", "m_seg", "k_seg",
               "k_anchor", "k_stop", "w_obs")
        for name in pos:
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)}")
        nonneg = ("bm", "gap_left", "gap_right", "d_seg", "b_bearing",
                  "b_extra", "sigma_obs")
        for name in nonneg:
            if not getattr(self, name) >= 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not (isinstance(self.n_seg, int) and self.n_seg >= 1):
            raise ParameterError(f"n_seg must be an integer >= 1, got {self.n_seg}")
        if not (self.x_min < self.x_neutral < self.x_max):
            raise ParameterError("need x_min < x_neutral < x_max")

    @property
    def n_states(self) -> int:
        return 4 + 2 * self.n_seg

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dc_fields(self)}
        d["n_seg"] = int(d["n_seg"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlantParams":
        d = dict(d)
        if "n_seg" in d:
            d["n_seg"] = int(d["n_seg"])
        return cls(**d)

    def replace(self, **kw) -> "PlantParams":
        return replace(self, **kw)


@dataclass
class PlantState:
    """Typed view of the state vector."""

    i: float                # armature current [A]
    theta: float            # motor angle [rad]
    omega: float            # motor speed [rad/s]
    e_int: float            # speed-error integral [rad]
    x: np.ndarray           # rail segment positions [m]
    v: np.ndarray           # rail segment velocities [m/s]

    def to_array(self) -> np.ndarray:
        return np.concatenate([[self.i, self.theta, self.omega, self.e_int],
                               np.asarray(self.x, float), np.asarray(self.v, float)])

    @classmethod
    def from_array(cls, z: np.ndarray, n_seg: int) -> "PlantState":
        z = np.asarray(z, float)
        if z.shape != (4 + 2 * n_seg,):
            raise ParameterError(f"state has shape {z.shape}, expected ({4 + 2 * n_seg},)")
        return cls(float(z[0]), float(z[1]), float(z[2]), float(z[3]),
                   z[4:4 + n_seg].copy(), z[4 + n_seg:].copy())


# ---------------------------------------------------------------------------
# smooth primitives


def ramp(s, eps):
    """Smooth positive-part: 0.5*(s + sqrt(s^2 + eps^2))."""
    return 0.5 * (s + np.sqrt(s * s + eps * eps))


def ramp_d(s, eps):
    return 0.5 * (1.0 + s / np.sqrt(s * s + eps * eps))


def ramp_dd(s, eps):
    r = np.sqrt(s * s + eps * eps)
    return 0.5 * eps * eps / (r * r * r)


def ramp_inv(y, eps):
    """Inverse of ramp on y > eps/2... y > 0."""
    return y - eps * eps / (4.0 * y)


def sat_smooth(u, v_sat):
    """C2 saturation: identity inside ±0.8 v_sat, exactly ±v_sat beyond
    ±1.2 v_sat, smoothstep-integral blend between.

    Returns (value, slope, curvature). The slope doubles as the anti-windup
    weight: 1 in the linear band, 0 when fully saturated.
    """
    a = 0.8 * v_sat
    width = 0.4 * v_sat
    au = np.abs(u)
    s = np.clip((au - a) / width, 0.0, 1.0)
    s2 = s * s
    s3 = s2 * s
    mag = a + width * (s - s3 + 0.5 * s2 * s2)
    val = np.sign(u) * np.minimum(au, mag)
    omss = 1.0 - s
    slope = omss * omss * (1.0 + 2.0 * s)
    curv = np.sign(u) * (6.0 * s2 - 6.0 * s) / width
    return val, slope, curv


# ---------------------------------------------------------------------------
# vector field


def _contact_forces(theta, omega, x1, v1, p: PlantParams):
    """Adjuster connection force and its partials.

    Returns (F_rod, dF_dtheta, dF_domega, dF_dx1, dF_dv1, dF_dgl, dF_dgr).
    """
    eps = p.eps_smooth
    x_rod = p.rod_x0 + p.c_cam * theta
    v_rod = p.c_cam * omega
    dL = x_rod - p.gap_left - x1
    dR = x1 - x_rod - p.gap_right
    rdL, rdR = ramp_d(dL, eps), ramp_d(dR, eps)
    F = (p.k_contact * ramp(dL, eps) + p.d_contact * rdL * (v_rod - v1)
         - p.k_contact * ramp(dR, eps) - p.d_contact * rdR * (v1 - v_rod))
    # dF/d(delta) terms: stiffness + damping-slope contributions
    gL = p.k_contact * rdL + p.d_contact * ramp_dd(dL, eps) * (v_rod - v1)
    gR = p.k_contact * rdR + p.d_contact * ramp_dd(dR, eps) * (v1 - v_rod)
    dF_dtheta = p.c_cam * (gL + gR)
    dF_domega = p.c_cam * p.d_contact * (rdL + rdR)
    dF_dx1 = -(gL + gR)
    dF_dv1 = -p.d_contact * (rdL + rdR)
    return F, dF_dtheta, dF_domega, dF_dx1, dF_dv1, -gL, gR


def plant_rhs(z, omega_ref, p: PlantParams):
    """Time derivative of the plant state. z has shape (..., 4+2N);
    omega_ref broadcasts against the batch axes."""
    z = np.asarray(z, float)
    N = p.n_seg
    i, theta, omega, e_int = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
    x = z[..., 4:4 + N]
    v = z[..., 4 + N:]
    x1, v1 = x[..., 0], v[..., 0]

    err = omega_ref - omega
    u = p.Kp * err + p.Ki * e_int
    v_cmd, slope, _ = sat_smooth(u, p.v_sat)

    F_rod = _contact_forces(theta, omega, x1, v1, p)[0]

    dz = np.empty_like(z)
    dz[..., 0] = (v_cmd - p.R * i - p.ke * omega) / p.L
    dz[..., 1] = omega
    dz[..., 2] = (p.kt * i - p.bm * omega - p.c_cam * F_rod) / p.Jm
    dz[..., 3] = err * slope

    # rail chain
    f = np.zeros_like(x)
    if N > 1:
        s = p.k_seg * (x[..., :-1] - x[..., 1:]) + p.d_seg * (v[..., :-1] - v[..., 1:])
        f[..., :-1] -= s
        f[..., 1:] += s
    f[..., -1] += p.k_anchor * (p.x_neutral - x[..., -1])

    gauss = np.exp(-((x1 - p.x_obs) / p.w_obs) ** 2)
    F_fault = (p.b_extra + p.sigma_obs * gauss) * v1
    F_stop = p.k_stop * (ramp(x1 - p.x_max, p.eps_smooth)
                         - ramp(p.x_min - x1, p.eps_smooth))
    f[..., 0] += F_rod - F_fault - F_stop

    dz[..., 4:4 + N] = v
    dz[..., 4 + N:] = (f - p.b_bearing * v) / p.m_seg
    return dz


def plant_jac(z, omega_ref, p: PlantParams):
    """Analytic Jacobian of plant_rhs w.r.t. the state. Shape (..., n, n)."""
    z = np.asarray(z, float)
    N = p.n_seg
    n = 4 + 2 * N
    i, theta, omega, e_int = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
    x = z[..., 4:4 + N]
    v = z[..., 4 + N:]
    x1, v1 = x[..., 0], v[..., 0]

    err = omega_ref - omega
    u = p.Kp * err + p.Ki * e_int
    _, slope, curv = sat_smooth(u, p.v_sat)

    _, dF_dth, dF_dom, dF_dx1, dF_dv1, _, _ = _contact_forces(theta, omega, x1, v1, p)

    J = np.zeros(z.shape[:-1] + (n, n))
    # current
    J[..., 0, 0] = -p.R / p.L
    J[..., 0, 2] = (-p.Kp * slope - p.ke) / p.L
    J[..., 0, 3] = p.Ki * slope / p.L
    # angle
    J[..., 1, 2] = 1.0
    # speed
    J[..., 2, 0] = p.kt / p.Jm
    J[..., 2, 1] = -p.c_cam * dF_dth / p.Jm
    J[..., 2, 2] = (-p.bm - p.c_cam * dF_dom) / p.Jm
    J[..., 2, 4] = -p.c_cam * dF_dx1 / p.Jm
    J[..., 2, 4 + N] = -p.c_cam * dF_dv1 / p.Jm
    # error integral: d/dt e_int = err * slope(u)
    J[..., 3, 2] = -(slope + err * curv * p.Kp)
    J[..., 3, 3] = err * curv * p.Ki

    ix, iv = 4, 4 + N
    rows = np.arange(N)
    J[..., ix + rows, iv + rows] = 1.0

    inv_m = 1.0 / p.m_seg
    gauss = np.exp(-((x1 - p.x_obs) / p.w_obs) ** 2)
    dFf_dx1 = p.sigma_obs * v1 * gauss * (-2.0 * (x1 - p.x_obs) / p.w_obs ** 2)
    dFf_dv1 = p.b_extra + p.sigma_obs * gauss
    dFs_dx1 = p.k_stop * (ramp_d(x1 - p.x_max, p.eps_smooth)
                          + ramp_d(p.x_min - x1, p.eps_smooth))

    # connection mass
    J[..., iv, 1] = dF_dth * inv_m
    J[..., iv, 2] = dF_dom * inv_m
    J[..., iv, ix] = (dF_dx1 - dFf_dx1 - dFs_dx1) * inv_m
    J[..., iv, iv] = (dF_dv1 - dFf_dv1 - p.b_bearing) * inv_m
    if N > 1:
        J[..., iv, ix] += -p.k_seg * inv_m
        J[..., iv, ix + 1] = p.k_seg * inv_m
        J[..., iv, iv] += -p.d_seg * inv_m
        J[..., iv, iv + 1] = p.d_seg * inv_m
        # interior masses
        if N > 2:
            r = np.arange(1, N - 1)
            J[..., iv + r, ix + r - 1] = p.k_seg * inv_m
            J[..., iv + r, ix + r] = -2.0 * p.k_seg * inv_m
            J[..., iv + r, ix + r + 1] = p.k_seg * inv_m
            J[..., iv + r, iv + r - 1] = p.d_seg * inv_m
            J[..., iv + r, iv + r] = (-2.0 * p.d_seg - p.b_bearing) * inv_m
            J[..., iv + r, iv + r + 1] = p.d_seg * inv_m
        # anchored mass
        J[..., iv + N - 1, ix + N - 2] = p.k_seg * inv_m
        J[..., iv + N - 1, ix + N - 1] = (-p.k_seg - p.k_anchor) * inv_m
        J[..., iv + N - 1, iv + N - 2] = p.d_seg * inv_m
        J[..., iv + N - 1, iv + N - 1] = (-p.d_seg - p.b_bearing) * inv_m
    else:
        J[..., iv, ix] += -p.k_anchor * inv_m
    return J


def plant_dtheta_fault(z, omega_ref, p: PlantParams, names=FAULT_PARAM_NAMES):
    """Partials of plant_rhs w.r.t. the fault parameters. Shape (..., n, k)."""
    z = np.asarray(z, float)
    N = p.n_seg
    n = 4 + 2 * N
    theta, omega = z[..., 1], z[..., 2]
    x1, v1 = z[..., 4], z[..., 4 + N]
    _, _, _, _, _, dF_dgl, dF_dgr = _contact_forces(theta, omega, x1, v1, p)
    gauss = np.exp(-((x1 - p.x_obs) / p.w_obs) ** 2)

    out = np.zeros(z.shape[:-1] + (n, len(names)))
    iv = 4 + N
    for k, name in enumerate(names):
        if name == "gap_left":
            out[..., 2, k] = -p.c_cam * dF_dgl / p.Jm
            out[..., iv, k] = dF_dgl / p.m_seg
        elif name == "gap_right":
            out[..., 2, k] = -p.c_cam * dF_dgr / p.Jm
            out[..., iv, k] = dF_dgr / p.m_seg
        elif name == "b_extra":
            out[..., iv, k] = -v1 / p.m_seg
        elif name == "sigma_obs":
            out[..., iv, k] = -v1 * gauss / p.m_seg
        elif name == "x_obs":
            out[..., iv, k] = -p.sigma_obs * v1 * gauss \
                * (2.0 * (x1 - p.x_obs) / p.w_obs ** 2) / p.m_seg
        else:
            raise ParameterError(f"unknown fault parameter {name!r}")
    return out


# ---------------------------------------------------------------------------
# equilibria
#
# The Jacobian of the full RHS is singular at any rest point (the angle and
# error-integral rows are both multiples of the omega unit row), so the
# solver works on a reduced system: unknowns (i, e_int, theta, x_1..x_N)
# with rows (di/dt, domega/dt, dv/dt) plus one constraint that picks which
# member of the rest family we want: rail pinned at lock_x, or rod angle
# pinned at theta_fix.


def _equilibrium(p: PlantParams, lock_x=None, theta_fix=None, tol=1e-10, max_iter=60):
    if (lock_x is None) == (theta_fix is None):
        raise ParameterError("pass exactly one of lock_x, theta_fix")
    N = p.n_seg
    n = p.n_states
    ix, iv = 4, 4 + N

    # warm start
    z = np.zeros(n)
    if lock_x is not None:
        xl = float(lock_x)
        if N > 1:
            r = p.k_anchor / p.k_seg
            xN = (xl + (N - 1) * r * p.x_neutral) / (1.0 + (N - 1) * r)
            delta = p.k_anchor * (p.x_neutral - xN) / p.k_seg
            z[ix:ix + N] = xl + delta * np.arange(N)
        else:
            z[ix] = xl
        F_hold = -p.k_anchor * (p.x_neutral - z[ix + N - 1]) \
            + p.k_stop * (ramp(xl - p.x_max, p.eps_smooth) - ramp(p.x_min - xl, p.eps_smooth))
        # F_rod must equal F_hold; pick the engaged side
        if F_hold < 0:
            dR = ramp_inv(max(-F_hold, 1.0) / p.k_contact, p.eps_smooth) \
                if -F_hold > p.k_contact * p.eps_smooth else 0.0
            x_rod = xl - p.gap_right - dR
        else:
            dL = ramp_inv(max(F_hold, 1.0) / p.k_contact, p.eps_smooth) \
                if F_hold > p.k_contact * p.eps_smooth else 0.0
            x_rod = xl + p.gap_left + dL
        z[1] = (x_rod - p.rod_x0) / p.c_cam
        z[0] = p.c_cam * F_hold / p.kt
        z[3] = p.R * z[0] / p.Ki
    else:
        z[ix:ix + N] = p.x_neutral
        z[1] = float(theta_fix)

    rows = np.concatenate([[0, 2], np.arange(iv, iv + N)])
    cols = np.concatenate([[0, 3, 1], np.arange(ix, ix + N)])

    for _ in range(max_iter):
        rhs = plant_rhs(z, 0.0, p)
        res = rhs[rows]
        con = (z[ix] - lock_x) if lock_x is not None else (z[1] - theta_fix)
        full_res = np.concatenate([res, [con]])
        if np.max(np.abs(full_res)) < tol:
            return z
        J = plant_jac(z, 0.0, p)
        A = np.zeros((N + 3, N + 3))
        A[:N + 2, :] = J[np.ix_(rows, cols)]
        A[N + 2, 3 if lock_x is not None else 2] = 1.0
        try:
            step = np.linalg.solve(A, full_res)
        except np.linalg.LinAlgError as e:
            raise SimulationError(f"equilibrium solve failed: {e}") from e
        z[cols] = z[cols] - step
    raise SimulationError(
        f"equilibrium solve did not converge (residual {np.max(np.abs(full_res)):.3e})")


def locked_equilibrium(p: PlantParams, lock_x: float = 1.0) -> np.ndarray:
    """Rest state with the rail held at lock_x by the rod (the machine's
    locked pose). Includes the smooth stop preload when lock_x sits on a stop."""
    return _equilibrium(p, lock_x=lock_x)


def free_equilibrium(p: PlantParams) -> np.ndarray:
    """Rest state with the rod parked mid-gap and the rail settled at the
    anchor neutral. Used as the start of excitation datasets."""
    x_rod = p.x_neutral + 0.5 * (p.gap_left - p.gap_right)
    return _equilibrium(p, theta_fix=(x_rod - p.rod_x0) / p.c_cam)


# ---------------------------------------------------------------------------
# reference profiles


@dataclass(frozen=True)
class ReferenceProfile:
    """Piecewise-linear speed reference omega_ref(t)."""

    knots_t: np.ndarray
    knots_w: np.ndarray
    horizon: float

    def __post_init__(self):
        kt = np.asarray(self.knots_t, float)
        kw = np.asarray(self.knots_w, float)
        if kt.shape != kw.shape or kt.ndim != 1 or len(kt) < 2:
            raise ParameterError("knots_t/knots_w must be matching 1-D arrays")
        if np.any(np.diff(kt) <= 0):
            raise ParameterError("knot times must increase")
        kt.flags.writeable = False
        kw.flags.writeable = False
        object.__setattr__(self, "knots_t", kt)
        object.__setattr__(self, "knots_w", kw)
        object.__setattr__(self, "horizon", float(self.horizon))

    def omega_ref(self, t):
        return np.interp(t, self.knots_t, self.knots_w)

    def net_angle(self) -> float:
        return float(np.trapezoid(self.knots_w, self.knots_t))


def make_cycle_reference(omega_amp: float = 7.2, horizon: float = 14.0) -> ReferenceProfile:
    """Two-direction switching cycle: push during the first half, return
    during the second, trapezoidal speed with 0.5 s ramps, travel done in
    about 5 s per direction. Antisymmetric, so the net angle is zero."""
    half = horizon / 2.0
    A = float(omega_amp)
    t = np.array([0.0, 0.5, 5.0, 5.5, half, half + 0.5, half + 5.0, half + 5.5, horizon])
    w = np.array([0.0, A, A, 0.0, 0.0, -A, -A, 0.0, 0.0])
    return ReferenceProfile(t, w, horizon)


def _segment_travel_ok(w_prev, w_new, hold, c_cam, m_lo, m_hi):
    """Would a linear speed ramp w_prev -> w_new over `hold` keep the
    predicted rod displacement inside [m_lo, m_hi]? Displacement extremes
    sit at the endpoint or, on a sign reversal, at the speed zero."""
    dx_end = 0.5 * c_cam * hold * (w_prev + w_new)
    if not (m_lo <= dx_end <= m_hi):
        return False
    if w_prev * w_new < 0.0:
        dx_apex = c_cam * w_prev * w_prev * hold / (2.0 * (w_prev - w_new))
        if not (m_lo <= dx_apex <= m_hi):
            return False
    return True


def random_excitation(p: PlantParams, horizon: float, omega_max: float,
                      seed: int) -> ReferenceProfile:
    """Band-limited random piecewise-linear speed reference: hold times
    0.5-2 s, amplitudes uniform in [-omega_max, omega_max]. Segments whose
    predicted rod travel would leave an interior band (30 mm clear of each
    end stop) are redrawn, with a speed reversal as the guaranteed-safe
    fallback, so excitation data never presses the stops. Deterministic
    for a given seed."""
    if horizon <= 0 or omega_max <= 0:
        raise ParameterError("horizon and omega_max must be positive")
    rng = np.random.default_rng(seed)
    lo = p.x_min + 0.03
    hi = p.x_max - 0.03
    x_pred = p.x_neutral + 0.5 * (p.gap_left - p.gap_right)
    t, w_prev = 0.0, 0.0
    kt, kw = [0.0], [0.0]
    while t < horizon - 1e-9:
        hold = min(rng.uniform(0.5, 2.0), horizon - t)
        m_lo, m_hi = lo - x_pred, hi - x_pred
        for _ in range(40):
            w_new = rng.uniform(-omega_max, omega_max)
            if _segment_travel_ok(w_prev, w_new, hold, p.c_cam, m_lo, m_hi):
                break
        else:
            w_new = -w_prev
            hold = min(hold, 1.0)
        t += hold
        x_pred += 0.5 * p.c_cam * hold * (w_prev + w_new)
        kt.append(t)
        kw.append(w_new)
        w_prev = w_new
    kt[-1] = horizon
    return ReferenceProfile(np.array(kt), np.array(kw), float(horizon))


# ---------------------------------------------------------------------------
# simulation front end


def plant_outputs(z, omega_ref, p: PlantParams):
    """Sensor map: returns the 7 output channels for states z (..., n).
    The acceleration channel is the evaluated derivative of v_1, never a
    finite difference."""
    z = np.asarray(z, float)
    N = p.n_seg
    theta, omega = z[..., 1], z[..., 2]
    x1, v1 = z[..., 4], z[..., 4 + N]
    F_rod = _contact_forces(theta, omega, x1, v1, p)[0]
    a1 = plant_rhs(z, omega_ref, p)[..., 4 + N]
    return np.stack([z[..., 0], theta, omega, F_rod, x1, v1, a1], axis=-1)


def default_sim_config() -> IntegratorConfig:
    return IntegratorConfig(method="trapezoidal", dt=1e-3)


def simulate_plant(p: PlantParams, ref: ReferenceProfile, dt_out: float = 0.1,
                   x0: np.ndarray | None = None,
                   cfg: IntegratorConfig | None = None) -> TimeSeries:
    """Integrate the plant over the profile horizon and sample the sensor
    channels every dt_out. x0 defaults to the locked equilibrium at
    x_min for the given parameters; pass an explicit state to start a
    faulty run from the nominal-geometry pose."""
    cfg = cfg or default_sim_config()
    if x0 is None:
        x0 = locked_equilibrium(p, lock_x=p.x_min)
    x0 = np.asarray(x0, float)
    if x0.shape != (p.n_states,):
        raise ParameterError(f"x0 has shape {x0.shape}, expected ({p.n_states},)")

    n_out = int(round(ref.horizon / dt_out))
    if abs(ref.horizon / dt_out - n_out) > 1e-9:
        raise ParameterError(f"horizon {ref.horizon} is not a multiple of dt_out {dt_out}")
    t_grid = dt_out * np.arange(n_out + 1)

    field = lambda t, z: plant_rhs(z, ref.omega_ref(t), p)
    jac = lambda t, z: plant_jac(z, ref.omega_ref(t), p)
    states = integrate(field, x0, t_grid, cfg, jac=jac)
    vals = plant_outputs(states, ref.omega_ref(t_grid), p)
    return TimeSeries(0.0, dt_out, PLANT_CHANNELS, vals)


def simulate_plant_batch(p: PlantParams, refs, dt_out: float = 0.1,
                         x0: np.ndarray | None = None,
                         cfg: IntegratorConfig | None = None) -> list[TimeSeries]:
    """Integrate one plant under several reference profiles at once
    (single Newton/LU pass over the whole batch). All profiles must share
    the horizon."""
    cfg = cfg or default_sim_config()
    horizon = refs[0].horizon
    if any(abs(r.horizon - horizon) > 1e-12 for r in refs):
        raise ParameterError("batch profiles must share one horizon")
    if x0 is None:
        x0 = locked_equilibrium(p, lock_x=p.x_min)
    x0 = np.asarray(x0, float)

    n_out = int(round(horizon / dt_out))
    if abs(horizon / dt_out - n_out) > 1e-9:
        raise ParameterError(f"horizon {horizon} is not a multiple of dt_out {dt_out}")
    t_grid = dt_out * np.arange(n_out + 1)

    B = len(refs)
    x0b = np.broadcast_to(x0, (B, p.n_states)).copy()

    def wref(t):
        return np.array([r.omega_ref(t) for r in refs])

    field = lambda t, z: plant_rhs(z, wref(t), p)
    jac = lambda t, z: plant_jac(z, wref(t), p)
    states = integrate(field, x0b, t_grid, cfg, jac=jac)   # (B, T, n)
    out = []
    for b in range(B):
        vals = plant_outputs(states[b], refs[b].omega_ref(t_grid), p)
        out.append(TimeSeries(0.0, dt_out, PLANT_CHANNELS, vals))
    return out


def _ramp_antideriv(s, eps):
    r = np.sqrt(s * s + eps * eps)
    return 0.25 * s * s + 0.25 * (s * r + eps * eps * np.arcsinh(s / eps))


def rail_energy(z, p: PlantParams):
    """Mechanical energy stored in the rail subsystem (kinetic + segment
    springs + anchor + end-stop potentials) for states z (..., n). Along any
    trajectory its growth is bounded by the work done through the connection
    force, since bearings, segment damping, and fault elements only
    dissipate."""
    z = np.asarray(z, float)
    N = p.n_seg
    x = z[..., 4:4 + N]
    v = z[..., 4 + N:]
    E = 0.5 * p.m_seg * np.sum(v * v, axis=-1)
    if N > 1:
        E = E + 0.5 * p.k_seg * np.sum((x[..., :-1] - x[..., 1:]) ** 2, axis=-1)
    E = E + 0.5 * p.k_anchor * (p.x_neutral - x[..., -1]) ** 2
    E = E + p.k_stop * (_ramp_antideriv(x[..., 0] - p.x_max, p.eps_smooth)
                        + _ramp_antideriv(p.x_min - x[..., 0], p.eps_smooth))
    return E


def model_stats(p: PlantParams) -> dict:
    """Size bookkeeping for the full plant: differential states, scalar
    parameters, and equations (state derivatives plus the 7 algebraic
    sensor-map outputs)."""
    n_params = len(dc_fields(PlantParams))
    return {"states": p.n_states,
            "parameters": n_params,
            "equations": p.n_states + len(PLANT_CHANNELS)}
