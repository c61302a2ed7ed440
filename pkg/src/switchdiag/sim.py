"""Fixed-step integrators, forward sensitivities, and a gradient checker.

Two methods: classic explicit RK4 for non-stiff systems (surrogates) and
implicit trapezoidal with a Newton solve per step for the stiff plant.
Fields operate on arrays of shape (..., n); any leading axes are treated
as independent batch members and stepped together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ParameterError, SimulationError


@dataclass
class IntegratorConfig:
    method: str = "trapezoidal"   # "trapezoidal" | "rk4"
    dt: float = 1e-3              # internal step [s]
    newton_tol: float = 1e-10     # absolute, on the step residual
    newton_max_iter: int = 20

    def __post_init__(self):
        if self.method not in ("trapezoidal", "rk4"):
            raise ParameterError(f"unknown method {self.method!r}")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if self.newton_tol <= 0 or self.newton_max_iter < 1:
            raise ParameterError("bad Newton settings")


def _substeps_per_node(t_grid: np.ndarray, dt: float) -> int:
    t_grid = np.asarray(t_grid, float)
    if t_grid.ndim != 1 or len(t_grid) < 2:
        raise ParameterError("t_grid needs at least two nodes")
    spacing = np.diff(t_grid)
    if np.max(np.abs(spacing - spacing[0])) > 1e-9 * max(1.0, spacing[0]):
        raise ParameterError("t_grid must be uniform")
    m = int(round(spacing[0] / dt))
    if m < 1 or abs(spacing[0] / dt - m) > 1e-6:
        raise ParameterError(
            f"output spacing {spacing[0]} is not an integer multiple of dt={dt}")
    return m


def _rk4_step(field, t, x, h):
    k1 = field(t, x)
    k2 = field(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = field(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = field(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _fd_jacobian(field, t, x, h=1e-7):
    """Central-difference Jacobian, used when no analytic one is supplied."""
    n = x.shape[-1]
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = h * max(1.0, abs(float(np.max(np.abs(x[..., j])))))
        cols.append((field(t, x + e) - field(t, x - e)) / (2.0 * e[j]))
    return np.stack(cols, axis=-1)


def _trap_step(field, jac, t, x, h, tol, max_iter):
    """One implicit trapezoidal step: solve y - x - h/2 (f(t,x)+f(t+h,y)) = 0.

    The Jacobian is refreshed once at the start of the step (predictor state)
    and once more mid-iteration if convergence is slow.
    """
    fx = field(t, x)
    y = x + h * fx                     # explicit Euler predictor
    half = 0.5 * h
    eye = np.eye(x.shape[-1])

    def newton_matrix(z):
        J = jac(t + h, z) if jac is not None else _fd_jacobian(field, t + h, z)
        return eye - half * J

    A = newton_matrix(y)
    refreshed = False
    for it in range(max_iter):
        G = y - x - half * (fx + field(t + h, y))
        res = float(np.max(np.abs(G)))
        if not np.isfinite(res):
            raise SimulationError(f"non-finite Newton residual at t={t + h:.6g}", time=t + h)
        if res < tol:
            return y
        if it == max_iter // 2 and not refreshed:
            A = newton_matrix(y)
            refreshed = True
        y = y - np.linalg.solve(A, G[..., None])[..., 0]
    raise SimulationError(
        f"Newton did not converge at t={t + h:.6g} (residual {res:.3e})", time=t + h)


def integrate(field, x0, t_grid, cfg: IntegratorConfig, jac=None) -> np.ndarray:
    """Integrate dx/dt = field(t, x) from x0 at t_grid[0], recording the
    state at every node of t_grid. Internal steps of cfg.dt are taken
    between nodes; node spacing must be an integer multiple of cfg.dt.

    x0 may carry leading batch axes; all members are stepped together.
    Returns an array of shape x0.shape[:-1] + (len(t_grid), n).
    """
    x0 = np.asarray(x0, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    m = _substeps_per_node(t_grid, cfg.dt)
    h = (t_grid[1] - t_grid[0]) / m

    out = np.empty(x0.shape[:-1] + (len(t_grid), x0.shape[-1]))
    x = x0.copy()
    out[..., 0, :] = x
    for k in range(len(t_grid) - 1):
        t = t_grid[k]
        for j in range(m):
            if cfg.method == "rk4":
                x = _rk4_step(field, t + j * h, x, h)
            else:
                x = _trap_step(field, jac, t + j * h, x, h,
                               cfg.newton_tol, cfg.newton_max_iter)
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"state diverged by t={t_grid[k + 1]:.6g}",
                                  time=float(t_grid[k + 1]))
        out[..., k + 1, :] = x
    return out


def forward_sensitivities(field, dfield_dx, dfield_dtheta, x0, dx0_dtheta,
                          t_grid, cfg: IntegratorConfig):
    """Integrate the state together with S = dx/dtheta via the variational
    system dS/dt = J_x(t, x) S + J_theta(t, x).

    Returns (states, sens) with shapes (T, n) and (T, n, p). For rk4 the
    result is the exact derivative of the discrete RK4 map; for trapezoidal
    it is the derivative of the converged implicit map.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1:
        raise ParameterError("sensitivities support single trajectories only")
    S0 = np.asarray(dx0_dtheta, dtype=float)
    n, p = S0.shape
    if n != x0.shape[0]:
        raise ParameterError("dx0_dtheta row count must match state dimension")

    t_grid = np.asarray(t_grid, dtype=float)
    m = _substeps_per_node(t_grid, cfg.dt)
    h = (t_grid[1] - t_grid[0]) / m

    states = np.empty((len(t_grid), n))
    sens = np.empty((len(t_grid), n, p))
    x, S = x0.copy(), S0.copy()
    states[0], sens[0] = x, S

    if cfg.method == "rk4":
        def aug_field(t, z):
            xs, Ss = z[:n], z[n:].reshape(n, p)
            dx = field(t, xs)
            dS = dfield_dx(t, xs) @ Ss + dfield_dtheta(t, xs)
            return np.concatenate([dx, dS.ravel()])

        z = np.concatenate([x, S.ravel()])
        for k in range(len(t_grid) - 1):
            for j in range(m):
                z = _rk4_step(aug_field, t_grid[k] + j * h, z, h)
            if not np.all(np.isfinite(z)):
                raise SimulationError(f"state diverged by t={t_grid[k + 1]:.6g}",
                                      time=float(t_grid[k + 1]))
            states[k + 1] = z[:n]
            sens[k + 1] = z[n:].reshape(n, p)
        return states, sens

    # trapezoidal: step the state by Newton, then update S through the
    # linearized implicit map using Jacobians at the converged endpoints
    eye = np.eye(n)
    half = 0.5 * h
    for k in range(len(t_grid) - 1):
        for j in range(m):
            t = t_grid[k] + j * h
            Jn = dfield_dx(t, x)
            Tn = dfield_dtheta(t, x)
            y = _trap_step(field, dfield_dx, t, x, h, cfg.newton_tol, cfg.newton_max_iter)
            Jn1 = dfield_dx(t + h, y)
            Tn1 = dfield_dtheta(t + h, y)
            rhs = (eye + half * Jn) @ S + half * (Tn + Tn1)
            S = np.linalg.solve(eye - half * Jn1, rhs)
            x = y
        states[k + 1], sens[k + 1] = x, S
    return states, sens


def gradient_check(loss_and_grad, theta, h=1e-6) -> dict:
    """Compare an analytic gradient against central finite differences.

    loss_and_grad(theta) must return (value, gradient). The per-coordinate
    error metric is |ga - gf| / (|ga| + |gf| + eps), so a gradient scaled
    by 2 reports an error of 1/3. Returns a dict with 'max_rel_err',
    'rel_err' (per coordinate), and 'fd_grad'.
    """
    theta = np.asarray(theta, dtype=float)
    _, ga = loss_and_grad(theta)
    ga = np.asarray(ga, dtype=float)
    gf = np.empty_like(ga)
    for j in range(len(theta)):
        step = h * max(1.0, abs(theta[j]))
        e = np.zeros_like(theta)
        e[j] = step
        fp, _ = loss_and_grad(theta + e)
        fm, _ = loss_and_grad(theta - e)
        gf[j] = (fp - fm) / (2.0 * step)
    rel = np.abs(ga - gf) / (np.abs(ga) + np.abs(gf) + 1e-300)
    return {"max_rel_err": float(np.max(rel)) if len(rel) else 0.0,
            "rel_err": rel, "fd_grad": gf, "analytic_grad": ga}
