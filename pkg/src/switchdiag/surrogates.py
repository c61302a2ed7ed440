"""Reduced-order rail representations.

Three interchangeable stand-ins for the lumped rail chain:

* CausalNet: a one-hidden-layer tanh network mapping (x, v, a) directly to
  the connection force. Fast and accurate, but carries no physical
  structure, so nothing guarantees it cannot generate energy.
* PolyGMSD: a mass-spring-damper with odd-polynomial spring and damper
  laws. Nonnegative coefficients make it provably passive.
* PosMapGMSD: a mass-spring-damper whose spring and damper coefficients
  are squared network outputs, positive by construction. The spring
  coefficient is evaluated at zero port velocity so the element has a
  well-defined potential; the damper keeps its full (x, v) dependence,
  and its dissipated power is nonnegative either way.

DissipativePoly is the sign-directed polynomial force element used by the
dissipativity property suite.

All models are immutable value objects; evaluation is pure numpy with no
nondeterministic reductions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ParameterError, SCHEMA_VERSION, SchemaError, TimeSeries, write_json_atomic
import json


def _as_locked(a, shape, name):
    out = np.asarray(a, dtype=float)
    if out.shape != shape:
        raise ParameterError(f"{name} must have shape {shape}, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ParameterError(f"{name} contains NaN or Inf")
    out = out.copy()
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# CausalNet


@dataclass(frozen=True)
class CausalNet:
    """F = W1 @ tanh(W0 @ [x, v, a] + b0) + b1, hidden width 50 by default."""

    W0: np.ndarray   # (hidden, 3)
    b0: np.ndarray   # (hidden,)
    W1: np.ndarray   # (1, hidden)
    b1: np.ndarray   # (1,)

    def __post_init__(self):
        h = np.asarray(self.W0).shape[0] if np.asarray(self.W0).ndim == 2 else 0
        if h < 1:
            raise ParameterError(f"W0 must be (hidden, 3), got shape {np.asarray(self.W0).shape}")
        object.__setattr__(self, "W0", _as_locked(self.W0, (h, 3), "W0"))
        object.__setattr__(self, "b0", _as_locked(self.b0, (h,), "b0"))
        object.__setattr__(self, "W1", _as_locked(self.W1, (1, h), "W1"))
        object.__setattr__(self, "b1", _as_locked(self.b1, (1,), "b1"))

    @property
    def hidden(self) -> int:
        return self.W0.shape[0]

    @property
    def n_params(self) -> int:
        return 5 * self.hidden + 1

    @classmethod
    def zeros(cls, hidden: int = 50) -> "CausalNet":
        return cls(np.zeros((hidden, 3)), np.zeros(hidden),
                   np.zeros((1, hidden)), np.zeros(1))

    @classmethod
    def random(cls, hidden: int = 50, scale: float = 0.1, seed: int = 0) -> "CausalNet":
        rng = np.random.default_rng(seed)
        return cls(scale * rng.standard_normal((hidden, 3)),
                   scale * rng.standard_normal(hidden),
                   scale * rng.standard_normal((1, hidden)),
                   scale * rng.standard_normal(1))


def causal_params(net: CausalNet) -> np.ndarray:
    """Flat parameter vector [W0 row-major, b0, W1, b1]."""
    return np.concatenate([net.W0.ravel(), net.b0, net.W1.ravel(), net.b1])


def causal_from_params(theta: np.ndarray, hidden: int = 50) -> CausalNet:
    theta = np.asarray(theta, float)
    if theta.shape != (5 * hidden + 1,):
        raise ParameterError(f"expected {5 * hidden + 1} parameters, got {theta.shape}")
    k = 3 * hidden
    return CausalNet(theta[:k].reshape(hidden, 3), theta[k:k + hidden],
                     theta[k + hidden:k + 2 * hidden].reshape(1, hidden),
                     theta[k + 2 * hidden:])


def causal_force(net: CausalNet, x, v, a):
    """Connection force for (x, v, a); broadcasts over leading axes."""
    u = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float),
                                     np.asarray(a, float)), axis=-1)
    t = np.tanh(u @ net.W0.T + net.b0)
    out = t @ net.W1[0] + net.b1[0]
    return out if out.ndim else float(out)


def causal_force_grads(net: CausalNet, x, v, a):
    """Force plus derivatives. Returns (F, dF_du, dF_dtheta) with
    dF_du[..., j] the partial w.r.t. (x, v, a)[j] and dF_dtheta laid out
    like causal_params. Used by the trainer and by the implicit
    acceleration solve of the causal hybrid model."""
    u = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float),
                                     np.asarray(a, float)), axis=-1)
    z = u @ net.W0.T + net.b0              # (..., h)
    t = np.tanh(z)
    F = t @ net.W1[0] + net.b1[0]
    sech2 = 1.0 - t * t
    w1s = net.W1[0] * sech2                # (..., h)
    dF_du = w1s @ net.W0                   # (..., 3)
    # parameter gradients
    dW0 = w1s[..., :, None] * u[..., None, :]          # (..., h, 3)
    shape = u.shape[:-1]
    dtheta = np.concatenate([dW0.reshape(shape + (3 * net.hidden,)),
                             w1s, t, np.ones(shape + (1,))], axis=-1)
    return F, dF_du, dtheta


# ---------------------------------------------------------------------------
# PolyGMSD


@dataclass(frozen=True)
class PolyGMSD:
    """Mass-spring-damper with odd polynomial laws around x_fix:
    F_c = c0 d + c1 d^3 + c2 d^5 (d = x - x_fix), F_d = d0 v + d1 v^3 + d2 v^5.

    Nonnegative c and d make the element passive; that condition is
    verified by check_dissipative rather than enforced here, so that
    unconstrained fits can be represented and then flagged."""

    m: float
    c: np.ndarray    # (3,)
    d: np.ndarray    # (3,)
    x_fix: float

    def __post_init__(self):
        if not (np.isfinite(self.m) and self.m > 0):
            raise ParameterError(f"m must be positive, got {self.m}")
        if not np.isfinite(self.x_fix):
            raise ParameterError("x_fix must be finite")
        object.__setattr__(self, "c", _as_locked(self.c, (3,), "c"))
        object.__setattr__(self, "d", _as_locked(self.d, (3,), "d"))
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "x_fix", float(self.x_fix))


def poly_params(g: PolyGMSD) -> np.ndarray:
    """Flat vector [m, c0, c1, c2, d0, d1, d2, x_fix]."""
    return np.concatenate([[g.m], g.c, g.d, [g.x_fix]])


def poly_from_params(theta) -> PolyGMSD:
    theta = np.asarray(theta, float)
    if theta.shape != (8,):
        raise ParameterError(f"expected 8 parameters, got {theta.shape}")
    return PolyGMSD(theta[0], theta[1:4], theta[4:7], theta[7])


def poly_forces(g: PolyGMSD, x, v, a) -> dict:
    x, v, a = (np.asarray(q, float) for q in (x, v, a))
    dx = x - g.x_fix
    F_c = g.c[0] * dx + g.c[1] * dx ** 3 + g.c[2] * dx ** 5
    F_d = g.d[0] * v + g.d[1] * v ** 3 + g.d[2] * v ** 5
    F_m = g.m * a
    return {"F_m": F_m, "F_c": F_c, "F_d": F_d, "F_total": F_m + F_c + F_d}


def poly_force_grads(g: PolyGMSD, x, v):
    """Spring+damper force F_cd = F_c + F_d with partials.

    Returns (F_cd, dF_dx, dF_dv, dF_dtheta) where dF_dtheta has one column
    per poly_params entry (the m column is zero: mass enters the dynamics,
    not the constitutive force)."""
    x, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float))
    dx = x - g.x_fix
    dx2, v2 = dx * dx, v * v
    F_c = g.c[0] * dx + g.c[1] * dx * dx2 + g.c[2] * dx * dx2 * dx2
    F_d = g.d[0] * v + g.d[1] * v * v2 + g.d[2] * v * v2 * v2
    dF_dx = g.c[0] + 3.0 * g.c[1] * dx2 + 5.0 * g.c[2] * dx2 * dx2
    dF_dv = g.d[0] + 3.0 * g.d[1] * v2 + 5.0 * g.d[2] * v2 * v2
    shape = x.shape
    dtheta = np.zeros(shape + (8,))
    dtheta[..., 1] = dx
    dtheta[..., 2] = dx * dx2
    dtheta[..., 3] = dx * dx2 * dx2
    dtheta[..., 4] = v
    dtheta[..., 5] = v * v2
    dtheta[..., 6] = v * v2 * v2
    dtheta[..., 7] = -dF_dx
    return F_c + F_d, dF_dx, dF_dv, dtheta


def poly_potential(g: PolyGMSD, x):
    dx = np.asarray(x, float) - g.x_fix
    return (g.c[0] / 2.0) * dx ** 2 + (g.c[1] / 4.0) * dx ** 4 + (g.c[2] / 6.0) * dx ** 6


# ---------------------------------------------------------------------------
# DissipativePoly


@dataclass(frozen=True)
class DissipativePoly:
    """Sign-directed polynomial force element of order n:
    F = sign(v) * sum_i (m_i |a|^i + c_i |x|^i + d_i |v|^i), sign(0) = 0.

    With nonnegative coefficients the instantaneous power F*v is
    nonnegative for every (x, v, a), so the element only dissipates.
    Negative coefficients are representable and flagged by
    check_dissipative."""

    m: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, float)
        if m.ndim != 1 or len(m) < 1:
            raise ParameterError("coefficient arrays must be 1-D and nonempty")
        n1 = len(m)
        object.__setattr__(self, "m", _as_locked(self.m, (n1,), "m"))
        object.__setattr__(self, "c", _as_locked(self.c, (n1,), "c"))
        object.__setattr__(self, "d", _as_locked(self.d, (n1,), "d"))

    @property
    def order(self) -> int:
        return len(self.m) - 1


def dissipative_poly_force(g: DissipativePoly, x, v, a):
    x, v, a = np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float),
                                  np.asarray(a, float))
    powers = np.arange(len(g.m), dtype=float)
    mag = (np.abs(a)[..., None] ** powers @ g.m
           + np.abs(x)[..., None] ** powers @ g.c
           + np.abs(v)[..., None] ** powers @ g.d)
    out = np.sign(v) * mag
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# PosMapGMSD


@dataclass(frozen=True)
class PosMapNet:
    """2->hidden->1 tanh network with an output scale:
    y(u) = scale * (W1 @ tanh(W0 @ u + b0) + b1)."""

    W0: np.ndarray   # (hidden, 2)
    b0: np.ndarray
    W1: np.ndarray   # (1, hidden)
    b1: np.ndarray   # (1,)
    scale: float

    def __post_init__(self):
        h = np.asarray(self.W0).shape[0] if np.asarray(self.W0).ndim == 2 else 0
        if h < 1:
            raise ParameterError(f"W0 must be (hidden, 2), got shape {np.asarray(self.W0).shape}")
        object.__setattr__(self, "W0", _as_locked(self.W0, (h, 2), "W0"))
        object.__setattr__(self, "b0", _as_locked(self.b0, (h,), "b0"))
        object.__setattr__(self, "W1", _as_locked(self.W1, (1, h), "W1"))
        object.__setattr__(self, "b1", _as_locked(self.b1, (1,), "b1"))
        if not np.isfinite(self.scale):
            raise ParameterError("scale must be finite")
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def hidden(self) -> int:
        return self.W0.shape[0]

    @property
    def n_params(self) -> int:
        return 4 * self.hidden + 2

    def eval(self, u):
        """u (..., 2) -> scalar coefficient (...,)."""
        t = np.tanh(u @ self.W0.T + self.b0)
        return self.scale * (t @ self.W1[0] + self.b1[0])

    def eval_grads(self, u):
        """Returns (y, dy_du (..., 2), dy_dtheta (..., 4h+2)) with the
        parameter layout [W0, b0, W1, b1, scale]."""
        z = u @ self.W0.T + self.b0
        t = np.tanh(z)
        raw = t @ self.W1[0] + self.b1[0]
        y = self.scale * raw
        sech2 = 1.0 - t * t
        w1s = self.scale * (self.W1[0] * sech2)
        dy_du = w1s @ self.W0
        shape = u.shape[:-1]
        dtheta = np.concatenate([
            (w1s[..., :, None] * u[..., None, :]).reshape(shape + (2 * self.hidden,)),
            w1s,
            self.scale * t,
            np.full(shape + (1,), self.scale),
            raw[..., None]], axis=-1)
        return y, dy_du, dtheta


def _posmap_net_params(net: PosMapNet) -> np.ndarray:
    return np.concatenate([net.W0.ravel(), net.b0, net.W1.ravel(), net.b1,
                           [net.scale]])


def _posmap_net_from_params(theta, hidden) -> PosMapNet:
    k = 2 * hidden
    return PosMapNet(theta[:k].reshape(hidden, 2), theta[k:k + hidden],
                     theta[k + hidden:k + 2 * hidden].reshape(1, hidden),
                     theta[k + 2 * hidden:k + 2 * hidden + 1],
                     float(theta[k + 2 * hidden + 1]))


@dataclass(frozen=True)
class PosMapGMSD:
    """Mass-spring-damper with squared network coefficients:
    F_c = c(x, 0)^2 (x - x_fix), F_d = d(x, v)^2 v.

    Squaring makes both coefficients nonnegative for any weights, so the
    damper never generates energy and the spring force always points back
    toward x_fix. The spring coefficient is evaluated at zero port
    velocity, which gives the element an exact potential
    V(x) = int c(s,0)^2 (s - x_fix) ds and makes the stored energy
    monotone under free decay for arbitrary random weights."""

    m: float
    spring: PosMapNet
    damper: PosMapNet
    x_fix: float

    def __post_init__(self):
        if not (np.isfinite(self.m) and self.m > 0):
            raise ParameterError(f"m must be positive, got {self.m}")
        if not np.isfinite(self.x_fix):
            raise ParameterError("x_fix must be finite")
        if self.spring.hidden != self.damper.hidden:
            raise ParameterError("spring and damper nets must share the hidden width")
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "x_fix", float(self.x_fix))

    @property
    def hidden(self) -> int:
        return self.spring.hidden

    @property
    def n_params(self) -> int:
        return 2 + self.spring.n_params + self.damper.n_params


def posmap_params(g: PosMapGMSD) -> np.ndarray:
    """Flat vector [m, x_fix, spring params, damper params]."""
    return np.concatenate([[g.m, g.x_fix], _posmap_net_params(g.spring),
                           _posmap_net_params(g.damper)])


def posmap_from_params(theta, hidden: int = 15) -> PosMapGMSD:
    theta = np.asarray(theta, float)
    per = 4 * hidden + 2
    if theta.shape != (2 + 2 * per,):
        raise ParameterError(f"expected {2 + 2 * per} parameters, got {theta.shape}")
    return PosMapGMSD(theta[0], _posmap_net_from_params(theta[2:2 + per], hidden),
                      _posmap_net_from_params(theta[2 + per:], hidden), theta[1])


def _spring_input(g: PosMapGMSD, x):
    u = np.zeros(x.shape + (2,))
    u[..., 0] = x
    return u


def posmap_forces(g: PosMapGMSD, x, v, a) -> dict:
    x, v, a = np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float),
                                  np.asarray(a, float))
    c = g.spring.eval(_spring_input(g, x))
    d = g.damper.eval(np.stack([x, v], axis=-1))
    F_c = c * c * (x - g.x_fix)
    F_d = d * d * v
    F_m = g.m * a
    return {"F_m": F_m, "F_c": F_c, "F_d": F_d, "F_total": F_m + F_c + F_d}


def posmap_force_grads(g: PosMapGMSD, x, v):
    """F_cd = F_c + F_d with partials w.r.t. x, v, and the posmap_params
    layout (m column zero)."""
    x, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float))
    dx = x - g.x_fix
    c, dc_du, dc_dp = g.spring.eval_grads(_spring_input(g, x))
    d, dd_du, dd_dp = g.damper.eval_grads(np.stack([x, v], axis=-1))
    F = c * c * dx + d * d * v
    dF_dx = (2.0 * c * dc_du[..., 0]) * dx + c * c + (2.0 * d * dd_du[..., 0]) * v
    dF_dv = (2.0 * d * dd_du[..., 1]) * v + d * d
    shape = x.shape
    per = g.spring.n_params
    dtheta = np.zeros(shape + (2 + 2 * per,))
    dtheta[..., 1] = -c * c                                   # x_fix
    dtheta[..., 2:2 + per] = (2.0 * c * dx)[..., None] * dc_dp
    dtheta[..., 2 + per:] = (2.0 * d * v)[..., None] * dd_dp
    return F, dF_dx, dF_dv, dtheta


_SIMPSON_NODES = 129


def posmap_potential(g: PosMapGMSD, x):
    """V(x) = int_{x_fix}^{x} c(s,0)^2 (s - x_fix) ds by fixed-order
    composite Simpson per sample (deterministic, smooth in x)."""
    x = np.asarray(x, float)
    flat = np.atleast_1d(x).ravel()
    s01 = np.linspace(0.0, 1.0, _SIMPSON_NODES)
    w = np.ones(_SIMPSON_NODES)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    w /= 3.0 * (_SIMPSON_NODES - 1)
    span = flat - g.x_fix
    nodes = g.x_fix + span[:, None] * s01[None, :]
    c = g.spring.eval(_spring_input(g, nodes))
    integrand = c * c * (nodes - g.x_fix)
    V = (integrand @ w) * span
    return V.reshape(x.shape) if x.ndim else float(V[0])


# ---------------------------------------------------------------------------
# shared element operations


def energy_trace(g, trajectory: TimeSeries) -> TimeSeries:
    """Stored energy E = 1/2 m v^2 + V(x) and dissipated power F_d*v along
    a recorded trajectory with x and v channels. Works for PolyGMSD and
    PosMapGMSD (the elements that define a potential)."""
    x = trajectory["x"]
    v = trajectory["v"]
    if isinstance(g, PolyGMSD):
        V = poly_potential(g, x)
        F_d = poly_forces(g, x, v, 0.0)["F_d"]
    elif isinstance(g, PosMapGMSD):
        V = posmap_potential(g, x)
        F_d = posmap_forces(g, x, v, 0.0)["F_d"]
    else:
        raise ParameterError(f"energy_trace needs PolyGMSD or PosMapGMSD, got {type(g).__name__}")
    E = 0.5 * g.m * v * v + V
    vals = np.stack([E, F_d * v], axis=-1)
    return TimeSeries(trajectory.t0, trajectory.dt,
                      (("E", "J"), ("P_diss", "W")), vals)


def check_dissipative(model) -> dict:
    """Dissipativity certificate.

    PolyGMSD / DissipativePoly: coefficient nonnegativity, witnesses name
    offending coefficients. PosMapGMSD: dissipative by construction
    (squared coefficients); additionally samples both nets on an operating
    box around x_fix and reports their bounds. CausalNet: never certified,
    it is an unconstrained input-output map."""
    if isinstance(model, PolyGMSD):
        witnesses = [f"c{k}" for k in range(3) if model.c[k] < 0]
        witnesses += [f"d{k}" for k in range(3) if model.d[k] < 0]
        return {"ok": not witnesses, "witnesses": witnesses, "reason": None}
    if isinstance(model, DissipativePoly):
        witnesses = [f"{nm}{k}" for nm, arr in (("m", model.m), ("c", model.c),
                                                ("d", model.d))
                     for k in range(len(arr)) if arr[k] < 0]
        return {"ok": not witnesses, "witnesses": witnesses, "reason": None}
    if isinstance(model, PosMapGMSD):
        xs = np.linspace(model.x_fix - 0.5, model.x_fix + 0.5, 21)
        vs = np.linspace(-0.5, 0.5, 21)
        X, Vv = np.meshgrid(xs, vs, indexing="ij")
        c = model.spring.eval(_spring_input(model, X))
        d = model.damper.eval(np.stack([X, Vv], axis=-1))
        bounded = bool(np.all(np.isfinite(c)) and np.all(np.isfinite(d)))
        return {"ok": bounded, "witnesses": [],
                "reason": None if bounded else "non-finite coefficient sample",
                "coefficient_bounds": {"c2_max": float(np.max(c * c)),
                                       "d2_max": float(np.max(d * d))}}
    if isinstance(model, CausalNet):
        return {"ok": False, "witnesses": [],
                "reason": "no dissipativity guarantee"}
    raise ParameterError(f"unknown model type {type(model).__name__}")


def surrogate_vector_field(model, state, F_ext):
    """Acausal element dynamics: state (..., 2) holding (x, v), exogenous
    force in, kinematics out: dx/dt = v, dv/dt = (F_ext - F_c - F_d)/m."""
    state = np.asarray(state, float)
    x, v = state[..., 0], state[..., 1]
    if isinstance(model, PolyGMSD):
        f = poly_forces(model, x, v, 0.0)
    elif isinstance(model, PosMapGMSD):
        f = posmap_forces(model, x, v, 0.0)
    else:
        raise ParameterError(
            f"surrogate_vector_field needs PolyGMSD or PosMapGMSD, got {type(model).__name__}")
    dv = (np.asarray(F_ext, float) - f["F_c"] - f["F_d"]) / model.m
    return np.stack([v, np.broadcast_to(dv, v.shape)], axis=-1)


def model_stats(model) -> dict:
    """Size bookkeeping with a fixed counting convention:

    * variables: differential states owned by the element (gMSD forms: 2;
      CausalNet: 0, it is an algebraic map).
    * parameters: raw trainable scalars (CausalNet 5h+1 = 251 at h=50;
      PolyGMSD 8; PosMapGMSD 2 nets of 4h+2 plus m and x_fix = 126 at
      h=15).
    * equations: documented relation count (gMSD: 2 differential +
      F_m/F_c/F_d/F_total and the force balance = 7, plus one coefficient
      evaluation per net for PosMapGMSD = 9; CausalNet: hidden and output
      evaluations = 2).
    """
    if isinstance(model, CausalNet):
        return {"variables": 0, "parameters": model.n_params, "equations": 2}
    if isinstance(model, PolyGMSD):
        return {"variables": 2, "parameters": 8, "equations": 7}
    if isinstance(model, PosMapGMSD):
        return {"variables": 2, "parameters": model.n_params, "equations": 9}
    if isinstance(model, DissipativePoly):
        return {"variables": 0, "parameters": 3 * len(model.m), "equations": 1}
    raise ParameterError(f"unknown model type {type(model).__name__}")


# ---------------------------------------------------------------------------
# serialization


def _tolist(a):
    return np.asarray(a, float).tolist()


def model_to_dict(model) -> dict:
    if isinstance(model, CausalNet):
        return {"schema_version": SCHEMA_VERSION, "type": "causal",
                "dims": [3, model.hidden, 1],
                "W0": _tolist(model.W0), "b0": _tolist(model.b0),
                "W1": _tolist(model.W1), "b1": _tolist(model.b1)}
    if isinstance(model, PolyGMSD):
        return {"schema_version": SCHEMA_VERSION, "type": "poly",
                "m": model.m, "c": _tolist(model.c), "d": _tolist(model.d),
                "x_fix": model.x_fix}
    if isinstance(model, PosMapGMSD):
        def net(n):
            return {"W0": _tolist(n.W0), "b0": _tolist(n.b0),
                    "W1": _tolist(n.W1), "b1": _tolist(n.b1), "scale": n.scale}
        return {"schema_version": SCHEMA_VERSION, "type": "posmap",
                "dims": [2, model.hidden, 1], "m": model.m, "x_fix": model.x_fix,
                "spring": net(model.spring), "damper": net(model.damper)}
    if isinstance(model, DissipativePoly):
        return {"schema_version": SCHEMA_VERSION, "type": "dissipative_poly",
                "order": model.order, "m": _tolist(model.m),
                "c": _tolist(model.c), "d": _tolist(model.d)}
    raise ParameterError(f"unknown model type {type(model).__name__}")


def model_from_dict(d: dict):
    try:
        kind = d["type"]
    except (KeyError, TypeError):
        raise SchemaError("model dict has no 'type' field") from None
    if kind == "causal":
        return CausalNet(np.array(d["W0"], float), np.array(d["b0"], float),
                         np.array(d["W1"], float), np.array(d["b1"], float))
    if kind == "poly":
        return PolyGMSD(d["m"], np.array(d["c"], float), np.array(d["d"], float),
                        d["x_fix"])
    if kind == "posmap":
        def net(nd):
            return PosMapNet(np.array(nd["W0"], float), np.array(nd["b0"], float),
                             np.array(nd["W1"], float), np.array(nd["b1"], float),
                             nd["scale"])
        return PosMapGMSD(d["m"], net(d["spring"]), net(d["damper"]), d["x_fix"])
    if kind == "dissipative_poly":
        return DissipativePoly(np.array(d["m"], float), np.array(d["c"], float),
                               np.array(d["d"], float))
    raise SchemaError(f"unknown model type {kind!r}")


def save_model(model, path: str):
    write_json_atomic(path, model_to_dict(model))


def load_model(path: str):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
