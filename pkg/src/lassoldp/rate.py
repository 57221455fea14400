"""
Local costs, the path rate functional and the projection of sampled paths
onto piecewise-linear paths with per-interval zero flags.

A *model* is anything exposing ``d``, ``mu``, ``branch_drifts(x, t)`` and
``time_breaks()``: a `Problem` (autonomous) or a `ForcedModel`.  The drifts
may depend on ``t`` only through a piecewise-constant factor whose jumps are
listed by ``time_breaks``.

For coordinate ``i`` with branch drifts ``b1 = -g_i + mu`` and
``b2 = -g_i - mu``::

    L1(x, beta) = (beta - b1)^2        used while x_i < 0
    L2(x, beta) = (beta - b2)^2        used while x_i > 0
    L0(x, beta) = inf  p*(beta1 - b1)^2 + (1-p)*(beta2 - b2)^2
                  over 0 < p < 1, beta1 >= 0, beta2 <= 0, p*beta1 + (1-p)*beta2 = beta

and the rate of a path is ``I(phi) = 1/2 * sum_i int L~_i(phi, phi_i') dt``.
"""
from dataclasses import dataclass
import csv
import io
import math

import numpy as np

from .exceptions import ApproximationError, InputError
from .paths import PiecewisePath, Trajectory, fmt

__all__ = [
    "L1",
    "L2",
    "L0_closed",
    "L0_oracle",
    "Ltilde",
    "local_costs",
    "RateBreakdown",
    "rate_functional",
    "discrete_rate",
    "RescaledPath",
    "time_rescale",
    "MollifyInfo",
    "mollify",
    "sup_distance",
]

BRANCHES = ("L0", "L1", "L2")
GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _drifts_at(model, x, i, t):
    if not 0 <= i < model.d:
        raise InputError(f"coordinate index {i} out of range for d={model.d}")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.d:
        raise InputError(f"expected a point of dimension {model.d}, got {x.size}")
    b1, b2 = model.branch_drifts(x, t)
    return float(b1[i]), float(b2[i])


def _l0_nonneg(beta, b1, b2):
    """Constrained infimum for ``beta >= 0`` (arrays broadcast)."""
    two_mu = b1 - b2
    p0 = beta / two_mu
    # unconstrained-in-sign optimum is feasible for p in [p0, 1): mixture mean ranges over [b2 + beta, b1]
    lo = b2 + beta
    a = np.where(beta > b1, (beta - b1) ** 2, np.where(beta < lo, (lo - beta) ** 2, 0.0))
    a = np.where(p0 < 1.0, a, np.inf)
    # p below p0: beta2 = 0 is binding and the cost is beta^2/p - 2 beta b1 + p c + b2^2
    c = b1 * b1 - b2 * b2
    pmax = np.minimum(p0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pstar = np.where(c > 0, beta / np.sqrt(np.where(c > 0, c, 1.0)), np.inf)
        p = np.minimum(pstar, pmax)
        bnd = np.where((beta > 0) & (p > 0), beta * beta / p - 2.0 * beta * b1 + p * c + b2 * b2, np.inf)
    return np.maximum(np.minimum(a, bnd), 0.0)


def l0_value(beta, b1, b2):
    """Vectorised exact value of ``L0`` from the branch drifts.

    When ``b2 <= 0 <= b1`` (a sticking point) this is the squared distance of
    ``beta`` to ``[b2, b1]``.  Otherwise the sign constraints on the two
    branch velocities bind for some ``beta`` and the value is larger.
    """
    beta, b1, b2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (beta, b1, b2)))
    pos = _l0_nonneg(np.abs(beta), b1, b2)
    # x -> -x swaps the branches and flips every velocity
    neg = _l0_nonneg(np.abs(beta), -b2, -b1)
    out = np.where(beta >= 0, pos, neg)
    return out if out.ndim else float(out)


def L1(model, x, beta, i, t=0.0):
    """``(beta - b1_i(x))^2``, the cost of moving at speed ``beta`` while ``x_i < 0``."""
    b1, _ = _drifts_at(model, x, i, t)
    return (float(beta) - b1) ** 2


def L2(model, x, beta, i, t=0.0):
    """``(beta - b2_i(x))^2``, the cost of moving at speed ``beta`` while ``x_i > 0``."""
    _, b2 = _drifts_at(model, x, i, t)
    return (float(beta) - b2) ** 2


def L0_closed(model, x, beta, i, t=0.0):
    """Closed form of the mixture cost ``L0`` at a point with ``x_i = 0``.

    At a sticking point (``b2 <= 0 <= b1``)::

        0                  if b2 < beta < b1
        (beta - b2)^2      if beta <= b2
        (beta - b1)^2      if beta >= b1

    Away from sticking points the sign constraints ``beta1 >= 0 >= beta2``
    can bind; the returned value is then the exact constrained infimum
    (see `l0_value`).  Both agree whenever the three-case formula applies.
    """
    b1, b2 = _drifts_at(model, x, i, t)
    return float(l0_value(float(beta), b1, b2))


def _p_grid(n):
    inner = np.linspace(0.0, 1.0, n + 2)[1:-1]
    # clustered points near both ends, where the infimum is often approached
    edge = np.logspace(-12.0, math.log10(inner[0]), max(n // 8, 2))
    return np.unique(np.concatenate([edge, inner, 1.0 - edge]))


def _sweep(lo, width, span, n):
    # coarse wide sweep plus a fine window; both include the bound 0
    wide = np.linspace(0.0, span, max(n // 2, 2))
    fine = np.linspace(lo, lo + width, max(n // 2, 2))
    return np.union1d(wide, fine)


def L0_oracle(model, x, beta, i, grid_n=2000, t=0.0):
    """Brute-force upper bound on ``L0`` by grid search.

    ``p`` runs over a grid in ``(0, 1)`` refined near both ends.  For
    ``p < 1/2`` the search sweeps ``beta1 >= 0`` and solves the linear
    constraint for ``beta2``; for ``p >= 1/2`` it sweeps ``beta2 <= 0`` and
    solves for ``beta1``.  Sweeping the velocity with the smaller weight keeps
    the grid error bounded as ``p`` approaches 0 or 1.  Each sweep is a wide
    coarse grid plus a fine window of width ``2*mu`` next to ``beta`` (an
    interior optimum has ``beta <= beta1 <= beta + 2*mu``); the two edges
    ``beta1 = 0`` and ``beta2 = 0`` of the feasible set are checked for
    every ``p``.

    Returns ``inf`` when no grid point is feasible.
    """
    if grid_n < 10:
        raise InputError("grid_n must be at least 10")
    b1, b2 = _drifts_at(model, x, i, t)
    beta = float(beta)
    two_mu = b1 - b2
    span = 2.0 * (abs(beta) + abs(b1) + abs(b2)) + 1.0
    n = int(grid_n)
    ps = _p_grid(n)
    qs = 1.0 - ps
    best = np.inf
    # edges of the feasible set
    if beta >= 0:
        best = min(best, float(np.min(ps * (beta / ps - b1) ** 2 + qs * b2 * b2)))
    if beta <= 0:
        best = min(best, float(np.min(ps * b1 * b1 + qs * (beta / qs - b2) ** 2)))
    u1 = _sweep(max(beta, 0.0), two_mu, span, n)
    u2 = -_sweep(max(-beta, 0.0), two_mu, span, n)
    lo_p, hi_p = ps[ps < 0.5], ps[ps >= 0.5]
    for block in np.array_split(lo_p, max(1, lo_p.size // 128)):
        p = block[:, None]
        q = 1.0 - p
        beta2 = (beta - p * u1) / q
        cost = p * (u1 - b1) ** 2 + q * (beta2 - b2) ** 2
        cost[beta2 > 0.0] = np.inf
        best = min(best, float(cost.min()))
    for block in np.array_split(hi_p, max(1, hi_p.size // 128)):
        p = block[:, None]
        q = 1.0 - p
        beta1 = (beta - q * u2) / p
        cost = p * (beta1 - b1) ** 2 + q * (u2 - b2) ** 2
        cost[beta1 < 0.0] = np.inf
        best = min(best, float(cost.min()))
    return best


def local_costs(x, beta, b1, b2):
    """Vectorised ``L~``: dispatch on the exact sign of ``x``."""
    x, beta, b1, b2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, beta, b1, b2)))
    out = np.where(x < 0, (beta - b1) ** 2, (beta - b2) ** 2)
    zero = x == 0
    if zero.any():
        out = np.where(zero, l0_value(beta, b1, b2), out)
    return out


def Ltilde(model, x, beta, i, t=0.0):
    """Local cost of coordinate ``i`` and the branch used: ``L1`` if ``x_i < 0``,
    ``L2`` if ``x_i > 0``, ``L0`` if ``x_i`` is exactly zero."""
    xi = float(np.asarray(x, dtype=float).reshape(-1)[i]) if 0 <= i < model.d else None
    if xi is None:
        raise InputError(f"coordinate index {i} out of range for d={model.d}")
    if xi < 0:
        return L1(model, x, beta, i, t), "L1"
    if xi > 0:
        return L2(model, x, beta, i, t), "L2"
    return L0_closed(model, x, beta, i, t), "L0"


@dataclass(eq=False)
class RateBreakdown:
    """Per-interval, per-coordinate integrals of ``L~`` and their half-sum."""

    total: float
    per_interval: np.ndarray
    branch_used: np.ndarray

    def to_csv(self, header=None):
        fh = io.StringIO()
        if header is not None:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "coord", "branch", "contribution"])
        for k in range(self.per_interval.shape[0]):
            for i in range(self.per_interval.shape[1]):
                w.writerow([k, i + 1, self.branch_used[k, i], fmt(self.per_interval[k, i])])
        w.writerow(["total", "", "", fmt(self.total)])
        return fh.getvalue()


def _kink_refined(model, phi):
    """Refine ``phi`` at the model's time breaks and where a branch drift of a
    flagged coordinate changes sign.

    On every resulting interval the integrand of each coordinate is a
    polynomial of degree at most 2 in ``t``, which the 8-node Gauss-Legendre
    rule integrates exactly.
    """
    breaks = [tb for tb in model.time_breaks() if 0.0 < tb < phi.horizon]
    if breaks:
        phi = phi.refine(breaks)
    if not phi.zero_flags.any():
        return phi
    bp, V, F = phi.breakpoints, phi.values, phi.zero_flags
    a, c = bp[:-1], bp[1:]
    tm = 0.5 * (a + c)
    roots = []
    for fa, fc in zip(model.branch_drifts(V[:-1], tm), model.branch_drifts(V[1:], tm)):
        k, i = np.nonzero(F & (fa * fc < 0))
        roots.append(a[k] + fa[k, i] / (fa[k, i] - fc[k, i]) * (c[k] - a[k]))
    roots = np.concatenate(roots)
    return phi.refine(roots) if roots.size else phi


def rate_functional(model, phi):
    """Rate ``I(phi) = 1/2 * sum`` of the per-interval integrals of ``L~``.

    Parameters
    ----------
    model : Problem or ForcedModel
    phi : PiecewisePath
        Re-validated here; a broken invariant raises `InputError` naming the
        interval and coordinate.

    Returns
    -------
    RateBreakdown
        ``per_interval`` is indexed by the intervals of ``phi`` itself, even
        though the quadrature runs on a refinement.
    """
    if not isinstance(phi, PiecewisePath):
        raise InputError("rate_functional expects a PiecewisePath")
    if phi.d != model.d:
        raise InputError(f"path has dimension {phi.d}, model has {model.d}")
    phi.validate()
    fine = _kink_refined(model, phi)
    bp, V, F = fine.breakpoints, fine.values, fine.zero_flags
    a, c = bp[:-1], bp[1:]
    h = 0.5 * (c - a)
    slope = np.where(F, 0.0, np.diff(V, axis=0) / (c - a)[:, None])
    side = np.where(F, 0, np.sign(V[:-1] + V[1:]))
    tn = h * (GL_NODES[:, None] + 1.0)
    X = V[:-1] + tn[..., None] * slope
    b1, b2 = model.branch_drifts(X, a + h)
    vals = np.where(side < 0, (slope - b1) ** 2, (slope - b2) ** 2)
    if F.any():
        vals = np.where(F, l0_value(0.0, b1, b2), vals)
    contrib = h[:, None] * np.einsum("n,nkd->kd", GL_WEIGHTS, vals)
    per = np.zeros((phi.breakpoints.size - 1, phi.d))
    np.add.at(per, np.searchsorted(phi.breakpoints, a, side="right") - 1, contrib)
    per = np.maximum(per, 0.0)
    flags, lo, hi = phi.zero_flags, phi.values[:-1], phi.values[1:]
    branch = np.where(flags, "L0", np.where(lo + hi < 0, "L1", "L2")).astype(object)
    return RateBreakdown(0.5 * float(per.sum()), per, branch)


def _sampled(psi):
    if isinstance(psi, Trajectory):
        return psi.times, psi.states
    times, values = psi
    tr = Trajectory(times, values)
    return tr.times, tr.states


def discrete_rate(model, psi):
    """Rate of a sampled path: midpoint states and forward-difference slopes.

    ``psi`` is a `Trajectory` or a ``(times, values)`` pair.
    """
    times, X = _sampled(psi)
    dt = np.diff(times)
    mid = 0.5 * (X[:-1] + X[1:])
    slope = np.diff(X, axis=0) / dt[:, None]
    total = 0.0
    for k in range(dt.size):
        b1, b2 = model.branch_drifts(mid[k], 0.5 * (times[k] + times[k + 1]))
        total += dt[k] * float(local_costs(mid[k], slope[k], b1, b2).sum())
    return float(0.5 * total)


@dataclass(eq=False)
class RescaledPath:
    """Output of `time_rescale`.

    ``S1`` is the rescaled horizon before mapping back to ``[0, 1]``;
    ``max_slope`` is the largest measured slope of the output and
    ``slope_bound`` the bound ``S1*(1-lam)*max(c, 1/lam)`` it must obey.
    """

    times: np.ndarray
    values: np.ndarray
    S1: float
    max_slope: float
    slope_bound: float


def time_rescale(times, values, lam, c):
    """Slow a sampled path down where it is steep.

    With ``s_k`` the discrete speed on grid interval ``k``, the clock runs at
    ``s_k/(c*(1-lam))`` where ``s_k >= 1/lam`` and at ``1/(1-lam)`` elsewhere.
    The reparametrised path ``psi(T(s))`` on ``[0, S(1)]`` is resampled on a
    uniform grid with as many points as the input and mapped affinely back to
    ``[0, 1]``.
    """
    if not 0 < lam < 1 or not 0 < c < 1:
        raise InputError("lam and c must lie in (0, 1)")
    times, X = _sampled((times, values))
    dt = np.diff(times)
    speed = np.linalg.norm(np.diff(X, axis=0), axis=1) / dt
    if not np.all(np.isfinite(speed)):
        raise InputError("path has a non-finite discrete derivative")
    steep = speed >= 1.0 / lam
    rate = np.where(steep, speed / (c * (1.0 - lam)), 1.0 / (1.0 - lam))
    S = np.concatenate([[0.0], np.cumsum(rate * dt)])
    S1 = float(S[-1])
    u = np.linspace(0.0, 1.0, times.size)
    # S is strictly increasing, so T = S^{-1} is its piecewise-linear inverse
    T = np.interp(u * S1, S, times)
    out = np.stack([np.interp(T, times, X[:, i]) for i in range(X.shape[1])], axis=-1)
    slopes = np.linalg.norm(np.diff(out, axis=0), axis=1) / np.diff(u)
    bound = S1 * (1.0 - lam) * max(c, 1.0 / lam)
    return RescaledPath(u, out, S1, float(slopes.max()), bound)


def sup_distance(times, values, phi):
    """Sup-norm distance between the linear interpolant of samples and ``phi``."""
    times, X = _sampled((times, values))
    grid = np.union1d(times, phi.breakpoints[phi.breakpoints <= times[-1]])
    psi = np.stack([np.interp(grid, times, X[:, i]) for i in range(X.shape[1])], axis=-1)
    return float(np.abs(psi - phi(grid)).max())


def _zero_points(times, x):
    """Zero set of the linear interpolant of one sampled coordinate.

    Returns the sample times where ``x`` is exactly 0 (ends of zero runs
    only) and interpolated crossing times between samples of opposite sign.
    """
    z = x == 0
    # interior samples of a zero run add nothing beyond the run's ends
    inner = np.zeros_like(z)
    inner[1:-1] = z[1:-1] & z[:-2] & z[2:]
    at0 = times[z & ~inner]
    lo, hi = x[:-1], x[1:]
    k = np.flatnonzero(lo * hi < 0)
    cross = times[k] + lo[k] / (lo[k] - hi[k]) * (times[k + 1] - times[k])
    return at0, cross


def _project(times, X, sigma):
    """Piecewise-linear projection with breakpoints at the zero set and spacing < sigma.

    Consecutive zero points of a coordinate become a flagged interval; between
    zero points the interpolated values keep the sign of the path.
    """
    horizon = times[-1]
    n = int(math.floor(horizon / sigma)) + 1
    bp = [np.linspace(0.0, horizon, n + 1)]
    zero_pts = []
    for i in range(X.shape[1]):
        at0, cross = _zero_points(times, X[:, i])
        zero_pts.append(np.concatenate([at0, cross]))
        bp.append(zero_pts[-1])
    grid = np.unique(np.concatenate(bp))
    vals = np.stack([np.interp(grid, times, X[:, i]) for i in range(X.shape[1])], axis=-1)
    for i, zp in enumerate(zero_pts):
        vals[np.isin(grid, zp), i] = 0.0
    return PiecewisePath.from_nodes(grid, vals)


@dataclass(frozen=True)
class MollifyInfo:
    sigma: float
    sup_distance: float
    rate: float
    discrete_rate: float
    halvings: int


def mollify(psi, delta, model, max_halvings=20, return_info=False):
    """Project a sampled path onto piecewise-linear paths with zero flags.

    For a trial spacing ``sigma`` (starting at ``delta``) the path is
    interpolated on a uniform grid of spacing below ``sigma`` augmented by the
    zero set of every coordinate: sample times where it vanishes and
    interpolated crossing times.  Stretches where a coordinate stays at 0
    become flagged intervals.  ``sigma`` is halved until

        sup |psi - phi| <= delta   and   I(phi) <= I_discrete(psi) + 2*delta.

    Raises
    ------
    ApproximationError
        After ``max_halvings`` halvings without meeting both, carrying the
        candidate with the smallest violation.
    """
    if not delta > 0:
        raise InputError("delta must be positive")
    times, X = _sampled(psi)
    if X.shape[1] != model.d:
        raise InputError(f"path has dimension {X.shape[1]}, model has {model.d}")
    target = discrete_rate(model, (times, X)) + 2.0 * delta
    sigma = float(delta)
    best = None
    for h in range(max_halvings + 1):
        phi = _project(times, X, sigma)
        dist = sup_distance(times, X, phi)
        rate = rate_functional(model, phi).total
        gaps = (dist - delta, rate - target)
        if gaps[0] <= 0 and gaps[1] <= 0:
            info = MollifyInfo(sigma, dist, rate, target - 2.0 * delta, h)
            return (phi, info) if return_info else phi
        if best is None or max(gaps) < max(best[1]):
            best = (phi, gaps)
        sigma *= 0.5
    raise ApproximationError(
        f"mollify: no spacing down to {2 * sigma:.3e} met delta={delta} "
        f"(sup gap {best[1][0]:.3e}, rate gap {best[1][1]:.3e})",
        best=best[0], sup_gap=best[1][0], rate_gap=best[1][1])
