"""Uniform B-spline back-end: fitting, evaluation, cost terms and refinement.

Velocity and acceleration control points follow from finite differences of
the control polygon, ``V_i = (Q_{i+1} - Q_i) / dt`` and
``A_i = (Q_{i+2} - 2 Q_{i+1} + Q_i) / dt**2``, which is what every cost below
is written against.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import minimize

from .bounds import AccelBounds
from .core import Esdf, query_distance_gradient


class UniformBSpline:
    def __init__(self, control_points, dt: float, degree: int = 3):
        Q = np.array(control_points, dtype=float)
        if Q.ndim != 2 or Q.shape[1] != 3:
            raise ValueError("control points must have shape (N+1, 3)")
        if not dt > 0:
            raise ValueError("knot interval must be positive")
        if Q.shape[0] - 1 < degree:
            raise ValueError("need at least degree+1 control points")
        Q.setflags(write=False)
        self.control_points = Q
        self.dt = float(dt)
        self.degree = int(degree)
        self._curves = None

    @property
    def N(self) -> int:
        return self.control_points.shape[0] - 1

    @property
    def duration(self) -> float:
        return (self.N + 1 - self.degree) * self.dt

    @property
    def knots(self) -> np.ndarray:
        return (np.arange(self.N + self.degree + 2) - self.degree) * self.dt

    def velocity_points(self) -> np.ndarray:
        return np.diff(self.control_points, axis=0) / self.dt

    def acceleration_points(self) -> np.ndarray:
        return np.diff(self.control_points, n=2, axis=0) / self.dt ** 2

    def with_points(self, Q) -> "UniformBSpline":
        return UniformBSpline(Q, self.dt, self.degree)

    def _bsplines(self):
        if self._curves is None:
            curve = BSpline(self.knots, self.control_points, self.degree, extrapolate=False)
            self._curves = (curve, curve.derivative(1),
                            curve.derivative(2) if self.degree >= 2 else None)
        return self._curves

    def evaluate(self, t):
        """Position, velocity, acceleration at ``t`` plus an out-of-range flag.

        Times outside ``[0, duration]`` are clamped.
        """
        t_arr = np.asarray(t, dtype=float)
        clamped = (t_arr < 0.0) | (t_arr > self.duration)
        tc = np.clip(t_arr, 0.0, self.duration)
        pos, vel, acc = self._bsplines()
        p = pos(tc)
        v = vel(tc)
        a = acc(tc) if acc is not None else np.zeros_like(p)
        if t_arr.ndim == 0:
            return p, v, a, bool(clamped)
        return p, v, a, clamped

    def sample(self, dt: float):
        ts = np.arange(0.0, self.duration + 1e-9, dt)
        p, v, a, _ = self.evaluate(ts)
        return ts, p, v, a

    def as_dict(self) -> dict:
        return {"degree": self.degree, "dt": self.dt, "control_points": self.control_points.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "UniformBSpline":
        return cls(data["control_points"], data["dt"], data.get("degree", 3))


def _basis_rows(n_ctrl: int, dt: float, degree: int, ts, nu: int) -> np.ndarray:
    knots = (np.arange(n_ctrl + degree + 1) - degree) * dt
    basis = BSpline(knots, np.eye(n_ctrl), degree, extrapolate=False)
    rows = basis.derivative(nu)(ts) if nu else basis(ts)
    return np.nan_to_num(np.atleast_2d(rows))


def fit_from_path(positions, dt: float, degree: int = 3, start_vel=None, start_acc=None,
                  end_vel=None, end_acc=None) -> UniformBSpline:
    """Fit a uniform spline to positions sampled every ``dt``.

    Boundary position, velocity and acceleration are matched exactly (when
    given); interior samples are matched in the least-squares sense.
    """
    P = np.atleast_2d(np.asarray(positions, dtype=float))
    if P.shape[0] < 1:
        raise ValueError("need at least one sample")
    if P.shape[0] == 1 or np.allclose(P, P[0], atol=1e-12) and not _moving(start_vel, end_vel):
        return UniformBSpline(np.repeat(P[:1], degree + 1 + max(0, P.shape[0] - 1), axis=0), dt, degree)
    K = P.shape[0] - 1
    n_ctrl = K + degree
    ts = np.arange(K + 1) * dt
    ts[-1] = min(ts[-1], (n_ctrl - degree) * dt)
    zeros = np.zeros(3)
    cons_rows, cons_rhs = [], []
    pos_rows = _basis_rows(n_ctrl, dt, degree, ts, 0)
    cons_rows += [pos_rows[0], pos_rows[-1]]
    cons_rhs += [P[0], P[-1]]
    ends = (ts[:1], ts[-1:])
    for nu, (s_val, e_val) in ((1, (start_vel, end_vel)), (2, (start_acc, end_acc))):
        if nu > degree - 1:
            continue
        for t_end, val in zip(ends, (s_val, e_val)):
            if val is None:
                continue
            cons_rows.append(_basis_rows(n_ctrl, dt, degree, t_end, nu)[0])
            cons_rhs.append(np.asarray(val, dtype=float) if val is not None else zeros)
    C = np.array(cons_rows)
    d = np.array(cons_rhs)
    # interior least squares plus a tiny smoothness regulariser for uniqueness
    A = pos_rows[1:-1] if K > 1 else np.zeros((0, n_ctrl))
    b = P[1:-1] if K > 1 else np.zeros((0, 3))
    D2 = np.diff(np.eye(n_ctrl), n=2, axis=0)
    H = A.T @ A + 1e-9 * D2.T @ D2
    kkt = np.block([[2 * H, C.T], [C, np.zeros((C.shape[0], C.shape[0]))]])
    rhs = np.vstack([2 * A.T @ b, d])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return UniformBSpline(sol[:n_ctrl], dt, degree)


def _moving(*vels) -> bool:
    return any(v is not None and np.linalg.norm(v) > 1e-12 for v in vels)


def fit_from_nodes(nodes, dt: float, degree: int = 3, start_acc=None) -> UniformBSpline:
    """Front-end/back-end handoff: sample a searched path and fit a spline."""
    from .search import sample_path

    total = sum(n.primitive.duration for n in nodes[1:]) if len(nodes) > 1 else 0.0
    if total <= 0.0:
        return fit_from_path([nodes[0].position], dt, degree)
    if total / dt < degree:
        dt = total / degree
    pos, vel, acc = sample_path(nodes, dt)
    a0 = acc[0] if start_acc is None else start_acc
    return fit_from_path(pos, dt, degree, start_vel=vel[0], start_acc=a0,
                         end_vel=vel[-1], end_acc=np.zeros(3))


def softplus(x, beta: float):
    if not beta > 0:
        raise ValueError("beta must be positive")
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-beta * np.abs(x))) / beta
    return float(out) if out.ndim == 0 else out


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


@dataclass
class OptimizeConfig:
    lambda_s: float = 1.0
    lambda_c: float = 10.0
    lambda_v: float = 1.0
    lambda_a: float = 1.0
    beta: float = 10.0
    v_max: float = 2.0
    d_thr: float = 0.4
    max_iterations: int = 100
    gradient_tolerance: float = 1e-6

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if min(self.lambda_s, self.lambda_c, self.lambda_v, self.lambda_a) < 0:
            raise ValueError("weights must be non-negative")


def smoothness_cost(spline: UniformBSpline):
    Q = spline.control_points
    dd = Q[2:] - 2 * Q[1:-1] + Q[:-2]
    grad = np.zeros_like(Q)
    grad[:-2] += 2 * dd
    grad[1:-1] -= 4 * dd
    grad[2:] += 2 * dd
    return float(np.sum(dd * dd)), grad


def velocity_cost(spline: UniformBSpline, v_max: float):
    Q = spline.control_points
    V = np.diff(Q, axis=0) / spline.dt
    excess = np.maximum(np.abs(V) - v_max, 0.0)
    dV = 2 * excess * np.sign(V)
    grad = np.zeros_like(Q)
    grad[1:] += dV / spline.dt
    grad[:-1] -= dV / spline.dt
    return float(np.sum(excess * excess)), grad


def collision_cost(spline: UniformBSpline, esdf: Esdf, d_thr: float):
    Q = spline.control_points
    d, g, oob = query_distance_gradient(esdf, Q)
    d = np.where(oob, esdf.truncation, d)
    g = np.where(oob[:, None], 0.0, g)
    h = np.maximum(d_thr - d, 0.0)
    grad = -2 * h[:, None] * g
    return float(np.sum(h * h)), grad


def accel_index_range(spline: UniformBSpline) -> range:
    return range(spline.degree - 2, spline.N - spline.degree + 1)


def accel_penalty(spline: UniformBSpline, bounds_air: AccelBounds, bounds_land: AccelBounds,
                  r_thr: float, beta: float):
    """Softplus penalty on acceleration control points outside their bounds.

    Term ``i`` uses the air bounds when control point ``Q_i`` is above
    ``r_thr`` and the land bounds otherwise.
    """
    Q = spline.control_points
    grad = np.zeros_like(Q)
    idx = np.array(list(accel_index_range(spline)), dtype=int)
    if idx.size == 0:
        return 0.0, grad
    dt2 = spline.dt ** 2
    A = (Q[idx + 2] - 2 * Q[idx + 1] + Q[idx]) / dt2
    air = (Q[idx, 2] > r_thr)[:, None]
    lo = np.where(air, bounds_air.lower, bounds_land.lower)
    hi = np.where(air, bounds_air.upper, bounds_land.upper)
    below = softplus(lo - A, beta)
    above = softplus(A - hi, beta)
    f = float(np.sum(below * below + above * above))
    dA = (-2 * below * _sigmoid(beta * (lo - A)) + 2 * above * _sigmoid(beta * (A - hi))) / dt2
    np.add.at(grad, idx, dA)
    np.add.at(grad, idx + 1, -2 * dA)
    np.add.at(grad, idx + 2, dA)
    return f, grad


def cost_terms(spline: UniformBSpline, cfg: OptimizeConfig, esdf: Esdf, bounds_air: AccelBounds,
               bounds_land: AccelBounds, r_thr: float) -> dict:
    return {
        "smoothness": smoothness_cost(spline),
        "collision": collision_cost(spline, esdf, cfg.d_thr),
        "velocity": velocity_cost(spline, cfg.v_max),
        "acceleration": accel_penalty(spline, bounds_air, bounds_land, r_thr, cfg.beta),
    }


def total_cost(spline: UniformBSpline, cfg: OptimizeConfig, esdf: Esdf, bounds_air: AccelBounds,
               bounds_land: AccelBounds, r_thr: float):
    weights = {"smoothness": cfg.lambda_s, "collision": cfg.lambda_c,
               "velocity": cfg.lambda_v, "acceleration": cfg.lambda_a}
    f = 0.0
    grad = np.zeros_like(spline.control_points)
    for name, w in weights.items():
        if w == 0.0:
            continue
        if name == "smoothness":
            fi, gi = smoothness_cost(spline)
        elif name == "collision":
            fi, gi = collision_cost(spline, esdf, cfg.d_thr)
        elif name == "velocity":
            fi, gi = velocity_cost(spline, cfg.v_max)
        else:
            fi, gi = accel_penalty(spline, bounds_air, bounds_land, r_thr, cfg.beta)
        f += w * fi
        grad += w * gi
    return f, grad


@dataclass
class OptimizationResult:
    spline: UniformBSpline
    initial_cost: float
    final_cost: float
    iterations: int
    degraded: bool = False
    history: list = field(default_factory=list)


def optimize_detailed(initial: UniformBSpline, cfg: OptimizeConfig, esdf: Esdf,
                      bounds_air: AccelBounds, bounds_land: AccelBounds,
                      r_thr: float) -> OptimizationResult:
    """Minimise the weighted cost over the interior control points with L-BFGS.

    The first and last ``degree`` control points stay fixed.
    """
    Q0 = np.array(initial.control_points)
    p = initial.degree
    n_free = Q0.shape[0] - 2 * p
    f0, _ = total_cost(initial, cfg, esdf, bounds_air, bounds_land, r_thr)
    if n_free <= 0:
        return OptimizationResult(initial, f0, f0, 0)

    def unpack(x):
        Q = Q0.copy()
        Q[p:p + n_free] = x.reshape(n_free, 3)
        return Q

    best = {"f": f0, "x": Q0[p:p + n_free].ravel().copy()}
    degraded = [False]

    def fun(x):
        spline = initial.with_points(unpack(x))
        f, g = total_cost(spline, cfg, esdf, bounds_air, bounds_land, r_thr)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            degraded[0] = True
            return 1e300, np.zeros_like(x)
        if f < best["f"]:
            best["f"], best["x"] = f, x.copy()
        return f, g[p:p + n_free].ravel()

    history = [f0]
    res = minimize(fun, best["x"].copy(), jac=True, method="L-BFGS-B",
                   callback=lambda intermediate_result: history.append(float(intermediate_result.fun)),
                   options={"maxiter": cfg.max_iterations, "gtol": cfg.gradient_tolerance,
                            "maxcor": 10})
    x = best["x"]
    f_final = best["f"]
    if res.fun <= f_final and np.all(np.isfinite(res.x)):
        x, f_final = res.x, float(res.fun)
    return OptimizationResult(initial.with_points(unpack(x)), f0, f_final, int(res.nit),
                              degraded[0], history)


def optimize(initial: UniformBSpline, cfg: OptimizeConfig, esdf: Esdf, bounds_air: AccelBounds,
             bounds_land: AccelBounds, r_thr: float) -> UniformBSpline:
    return optimize_detailed(initial, cfg, esdf, bounds_air, bounds_land, r_thr).spline
