"""
Zero-noise limit of the lasso diffusion: the differential inclusion

    dx/dt in -(A^T(Ax - y) + mu*sgn(x))          (autonomous problem)
    dx/dt in f(t) - mu*sgn(x)                    (forced system)

integrated with sticky-at-zero dynamics.  A coordinate at zero stays there
while its one-sided drifts point towards zero (``b1 >= 0 >= b2``) and is
released onto the branch pointing away from zero otherwise.
"""
from dataclasses import dataclass
import bisect
import math

import numpy as np

from .exceptions import DomainError, InputError
from .paths import ForcingPath, PiecewisePath, Trajectory
from .problem import Problem

__all__ = [
    "ForcedModel",
    "flow_integrate",
    "forced_flow_integrate",
    "exact_piecewise_flow",
    "occupation_fractions",
    "limit_point",
]

TOL_BAND = 1e-12


@dataclass(frozen=True, eq=False)
class ForcedModel:
    """Drift ``f(t) - mu*sgn(x)`` with piecewise-constant ``f``.

    Exposes the same ``branch_drifts``/``time_breaks`` interface as
    `Problem`, so the rate functional can be evaluated against it.
    """

    forcing: ForcingPath
    mu: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise InputError("mu must be positive")

    @property
    def d(self):
        return self.forcing.d

    def branch_drifts(self, x, t=0.0):
        f, _ = np.broadcast_arrays(self.forcing(t), np.asarray(x, dtype=float))
        return f + self.mu, f - self.mu

    def time_breaks(self):
        return tuple(self.forcing.breakpoints[1:-1])


def _time_grid(horizon, dt):
    if not (dt > 0 and np.isfinite(dt)):
        raise InputError(f"dt must be positive, got {dt}")
    if not (horizon > 0 and np.isfinite(horizon)):
        raise InputError(f"horizon must be positive, got {horizon}")
    n = max(1, int(math.ceil(horizon / dt - 1e-9)))
    times = np.arange(n + 1) * dt
    times[-1] = horizon
    return times


def _sticky_rates(b1, b2, x, tol_band):
    """Per-coordinate velocity and the mask of coordinates stuck at zero."""
    rate = np.where(x < 0, b1, b2)
    zero = x == 0
    if not zero.any():
        return rate, zero
    stick = zero & (b1 >= -tol_band) & (b2 <= tol_band)
    # released from zero: follow the branch that points away from 0
    rate[zero & (b1 < -tol_band)] = b1[zero & (b1 < -tol_band)]
    rate[stick] = 0.0
    return rate, stick


def _sticky_advance(drifts, x, t, h, tol_zero, tol_band, breaks):
    """Advance the sticky Euler scheme over ``[t, t+h]``.

    Zero crossings are located by linear interpolation; the step is split
    there, the crossing coordinate is snapped to exact 0 and the remainder is
    integrated with the re-classified drift.
    """
    t_end = t + h
    if not any(t < tb < t_end for tb in breaks):
        # fast path: zeros that stay stuck, and no other coordinate reaching zero
        b1, b2 = drifts(x, t)
        rate = np.where(x < 0, b1, b2)
        zero = x == 0
        if not zero.any():
            xn = x + h * rate
            if (x * xn).min() > 0 and np.abs(xn).min() > tol_zero:
                return xn
        elif (b1[zero] >= -tol_band).all() and (b2[zero] <= tol_band).all():
            rate[zero] = 0.0
            xn = x + h * rate
            if zero.all() or ((x * xn)[~zero].min() > 0 and np.abs(xn[~zero]).min() > tol_zero):
                return xn
    for _ in range(4 * x.size + 8):
        remaining = t_end - t
        if remaining <= 0:
            return x
        for tb in breaks:
            if t < tb < t_end:
                remaining = min(remaining, tb - t)
        rate, _ = _sticky_rates(*drifts(x, t), x, tol_band)
        toward = x * rate < 0
        if not toward.any():
            x = x + remaining * rate
            t = t + remaining
            continue
        hit = np.full(x.shape, np.inf)
        hit[toward] = -x[toward] / rate[toward]
        tau = hit.min()
        step = min(tau, remaining)
        x = x + step * rate
        snap = toward & ((hit <= step * (1 + 1e-12)) | (np.abs(x) <= tol_zero))
        x[snap] = 0.0
        t = t + step
    # pathological chattering: finish with a plain Euler step
    return x + (t_end - t) * _sticky_rates(*drifts(x, t), x, tol_band)[0]


def _drift_fn(model):
    """Branch drifts ``(b1, b2)`` without per-call validation."""
    if isinstance(model, Problem):
        Q, c, mu = model.A.T @ model.A, model.A.T @ model.y, model.mu

        def drifts(x, t):
            g = Q @ x - c
            return mu - g, -mu - g
        return drifts
    if isinstance(model, ForcedModel):
        bp, vals, mu = model.forcing.breakpoints.tolist(), model.forcing.values, model.mu
        last = vals.shape[0] - 1

        def drifts(x, t):
            f = vals[min(max(bisect.bisect_right(bp, t) - 1, 0), last)]
            return f + mu, f - mu
        return drifts
    return model.branch_drifts


def _integrate(model, x0, times, tol_zero, tol_band, record=True):
    if not tol_zero > 0:
        raise InputError("tol_zero must be positive")
    x = np.array(x0, dtype=float).reshape(-1)
    if x.size != model.d:
        raise InputError(f"x0 has dimension {x.size}, expected {model.d}")
    x[np.abs(x) <= tol_zero] = 0.0
    breaks = tuple(model.time_breaks())
    drifts = _drift_fn(model)
    if record:
        states = np.empty((times.size, x.size))
        frozen = np.zeros((times.size, x.size), dtype=bool)
        states[0] = x
        frozen[0] = _sticky_rates(*drifts(x, times[0]), x, tol_band)[1]
    for k in range(times.size - 1):
        x = _sticky_advance(drifts, x, times[k], times[k + 1] - times[k], tol_zero, tol_band, breaks)
        if record:
            states[k + 1] = x
            if (x == 0).any():
                frozen[k + 1] = _sticky_rates(*drifts(x, times[k + 1]), x, tol_band)[1]
    if record:
        return Trajectory(times, states, frozen=frozen)
    return x


def flow_integrate(P, x0, horizon, dt, tol_zero=1e-12, tol_band=TOL_BAND):
    """Sticky explicit-Euler solution of the lasso inclusion on ``[0, horizon]``.

    Returns a `Trajectory` whose ``frozen`` mask flags coordinates held at 0.
    """
    return _integrate(P, x0, _time_grid(horizon, dt), tol_zero, tol_band)


def forced_flow_integrate(f, mu, x0, dt, tol_zero=1e-12, tol_band=TOL_BAND):
    """Sticky solution of ``dx/dt in f(t) - mu*sgn(x)`` over the horizon of ``f``."""
    model = ForcedModel(f, mu)
    return _integrate(model, x0, _time_grid(f.horizon, dt), tol_zero, tol_band)


def limit_point(P, x0, horizon, dt, tol_zero=1e-12, tol_band=TOL_BAND):
    """Terminal state of `flow_integrate` (a lasso minimiser for long horizons)."""
    return _integrate(P, x0, _time_grid(horizon, dt), tol_zero, tol_band, record=False)


def _coordinate_events(x, a, b, f, mu):
    """Exact scalar solution on ``[a, b]`` for constant forcing ``f``.

    Returns the list of ``(time, value)`` knots after ``a`` and the final value.
    """
    knots = []
    if x == 0:
        if abs(f) <= mu:
            return knots, 0.0
        slope = f - mu if f > mu else f + mu
        return knots, slope * (b - a)
    slope = f - mu if x > 0 else f + mu
    if slope * x >= 0:
        return knots, x + slope * (b - a)
    t_hit = a + (-x / slope)
    if t_hit >= b:
        end = x + slope * (b - a)
        if t_hit == b or end * x <= 0:
            end = 0.0
        return knots, end
    knots.append((t_hit, 0.0))
    if abs(f) <= mu:
        return knots, 0.0
    # |f| > mu and moving towards 0 means the far branch continues the motion
    slope2 = f + mu if x > 0 else f - mu
    return knots, slope2 * (b - t_hit)


def exact_piecewise_flow(f, mu, x0):
    """Exact solution of the forced inclusion for piecewise-constant ``f``.

    Each coordinate moves with slope ``f_i + mu``, ``f_i - mu`` or 0; breakpoints
    are inserted at zero-hitting times and at forcing breakpoints.  The result
    is a `PiecewisePath` in which every coordinate is, on every interval,
    identically zero (flagged) or never zero.
    """
    if not mu > 0:
        raise InputError("mu must be positive")
    x0 = np.array(x0, dtype=float).reshape(-1)
    if x0.size != f.d:
        raise InputError(f"x0 has dimension {x0.size}, expected {f.d}")
    bp = f.breakpoints
    coord_knots = []
    for i in range(f.d):
        ts, vs = [0.0], [x0[i]]
        x = x0[i]
        for k in range(bp.size - 1):
            knots, x = _coordinate_events(x, bp[k], bp[k + 1], f.values[k, i], mu)
            for tk, vk in knots:
                ts.append(tk)
                vs.append(vk)
            ts.append(bp[k + 1])
            vs.append(x)
        coord_knots.append((np.array(ts), np.array(vs)))
    all_t = np.unique(np.concatenate([ts for ts, _ in coord_knots]))
    values = np.empty((all_t.size, f.d))
    for i, (ts, vs) in enumerate(coord_knots):
        # duplicated times (a hit exactly at a breakpoint) carry equal values
        ts_u, idx = np.unique(ts, return_index=True)
        col = np.interp(all_t, ts_u, vs[idx])
        # linear interpolation between a zero knot and a zero knot is zero; keep exact zeros
        zero_t = ts_u[vs[idx] == 0.0]
        col[np.isin(all_t, zero_t)] = 0.0
        values[:, i] = col
    return PiecewisePath(all_t, values)


def occupation_fractions(f_i, mu):
    """Limiting time fractions ``(on x <= 0, on x > 0)`` at a sticking point.

    Balancing ``p1*(f + mu) + p2*(f - mu) = 0`` with ``p1 + p2 = 1``.
    """
    if not mu > 0:
        raise InputError("mu must be positive")
    if abs(f_i) > mu:
        raise DomainError(f"|f| = {abs(f_i)} > mu = {mu}: not a sticking point")
    return (mu - f_i) / (2 * mu), (f_i + mu) / (2 * mu)
