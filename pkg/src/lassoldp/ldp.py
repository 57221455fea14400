"""
Laplace functional of the small-noise lasso diffusion and its variational limit.

For a bounded cost ``h`` on paths,

    H_eps = -eps^2 * log E[exp(-h(x^eps)/eps^2)]   ->   inf_phi { I(phi) + h(phi) }

as ``eps -> 0``.  `laplace_estimate` is the Monte Carlo side, `variational_infimum`
searches piecewise-linear paths with zero flags for the right-hand side, and
`ldp_report` puts both together over a decreasing list of noise levels.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import io
import json
import math

import numpy as np
from scipy.optimize import minimize

from .exceptions import InputError, NumericalError
from .inclusion import ForcedModel, exact_piecewise_flow, flow_integrate
from .paths import PiecewisePath, fmt
from .problem import Problem
from .rate import rate_functional
from .sde import SimulationSpec, ensemble, replica_seed

__all__ = [
    "CostFunctional",
    "FeedbackControl",
    "laplace_estimate",
    "controlled_cost",
    "variational_infimum",
    "LDPReport",
    "ldp_report",
]

COST_KINDS = ("terminal", "running", "constant")


@dataclass(frozen=True, eq=False)
class CostFunctional:
    """Bounded path cost ``h``.

    ``terminal``: ``min(c*||phi(1) - z||^2, M)``.
    ``running``: ``min(c * int ||phi(t) - z||^2 dt, M)``, the integral taken
    along the piecewise-linear interpolant.
    ``constant``: ``value``.
    """

    kind: str
    z: np.ndarray = None
    c: float = 1.0
    M: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise InputError(f"unknown cost kind {self.kind!r}; choose from {COST_KINDS}")
        if self.kind == "constant":
            if not np.isfinite(self.value):
                raise InputError("constant cost must be finite")
            object.__setattr__(self, "value", float(self.value))
            return
        if self.z is None:
            raise InputError(f"{self.kind} cost needs a target z")
        if not (self.c > 0 and self.M > 0 and np.isfinite(self.c) and np.isfinite(self.M)):
            raise InputError("cost weight c and cap M must be positive and finite")
        object.__setattr__(self, "z", np.array(self.z, dtype=float).reshape(-1))
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "M", float(self.M))

    @classmethod
    def terminal(cls, z, c=1.0, M=1.0):
        return cls("terminal", z=z, c=c, M=M)

    @classmethod
    def running(cls, z, c=1.0, M=1.0):
        return cls("running", z=z, c=c, M=M)

    @classmethod
    def constant(cls, value):
        return cls("constant", value=value)

    @property
    def bound(self):
        return self.value if self.kind == "constant" else self.M

    def shifted(self, delta):
        """The same cost plus a constant (constant costs only)."""
        if self.kind != "constant":
            raise InputError("only constant costs can be shifted in place")
        return CostFunctional.constant(self.value + delta)

    def on_samples(self, times, states):
        """Cost of sampled paths; ``states`` has shape ``(..., N+1, d)``."""
        states = np.asarray(states, dtype=float)
        lead = states.shape[:-2]
        if self.kind == "constant":
            return np.full(lead, self.value)
        if states.shape[-1] != self.z.size:
            raise InputError(f"cost target has dimension {self.z.size}, path has {states.shape[-1]}")
        if self.kind == "terminal":
            dev = states[..., -1, :] - self.z
            raw = self.c * np.sum(dev * dev, axis=-1)
        else:
            e = states - self.z
            lo, hi = e[..., :-1, :], e[..., 1:, :]
            seg = np.sum(lo * lo + lo * hi + hi * hi, axis=-1) / 3.0
            raw = self.c * (seg @ np.diff(np.asarray(times, dtype=float)))
        return np.minimum(raw, self.M)

    def __call__(self, phi):
        """Cost of a `PiecewisePath` (exact for all three kinds)."""
        return float(self.on_samples(phi.breakpoints, phi.values))

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        return {"kind": self.kind, "z": self.z.tolist(), "c": self.c, "M": self.M}

    @classmethod
    def from_dict(cls, data):
        try:
            kind = data["kind"]
            if kind == "constant":
                return cls.constant(data["value"])
            return cls(kind, z=data["z"], c=data.get("c", 1.0), M=data.get("M", 1.0))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed cost description: {exc}") from exc


def _simulation_spec(model, x0, cfg, control=None):
    if isinstance(model, ForcedModel):
        if control is not None:
            raise InputError("controlled simulation needs a Problem")
        return SimulationSpec("forced", x0, cfg, forcing=model.forcing, mu=model.mu)
    if control is not None:
        return SimulationSpec("controlled", x0, cfg, problem=model, control=control)
    return SimulationSpec("lasso", x0, cfg, problem=model)


def _log_mean_exp_cost(h, eps):
    """``-eps^2 log mean exp(-h/eps^2)`` with min-shift, and its delta-method error."""
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise NumericalError("non-finite path costs; reduce dt or check the cost functional")
    h_min = float(h.min())
    w = np.exp(-(h - h_min) / eps ** 2)
    mean_w = float(w.mean())
    if not mean_w > 0:
        raise NumericalError("all exponential weights underflow; increase eps or replicas")
    est = h_min - eps ** 2 * float(np.log(mean_w))
    se = eps ** 2 * float(w.std(ddof=1)) / (float(np.sqrt(w.size)) * mean_w)
    return est, se


def laplace_estimate(model, x0, h, cfg, replicas, threads=1):
    """Monte Carlo estimate of ``H_eps`` and its standard error.

    Replica ``r`` uses the noise stream ``replica_seed(cfg.seed, r)``.  The
    log-mean-exp is shifted by the smallest sampled cost, so a constant cost
    is reproduced exactly with zero standard error.

    Parameters
    ----------
    model : Problem or ForcedModel
    x0 : array_like
    h : CostFunctional
    cfg : SdeConfig
        ``cfg.eps`` must be positive.
    replicas : int
        At least 2.

    Returns
    -------
    (estimate, std_error)
    """
    if replicas < 2:
        raise InputError("replicas must be at least 2")
    if not cfg.eps > 0:
        raise InputError("laplace_estimate needs eps > 0")
    spec = _simulation_spec(model, x0, cfg)
    res = ensemble(spec, replicas, cfg.seed,
                   statistic=lambda b: h.on_samples(b.times, b.states)[:, None], threads=threads)
    return _log_mean_exp_cost(res.values[:, 0], cfg.eps)


class FeedbackControl:
    """State feedback that makes the controlled diffusion follow a path.

    On interval ``k`` coordinate ``i`` is driven with velocity ``beta1`` on
    ``x_i <= 0`` and ``beta2`` on ``x_i > 0``: both equal the path slope on
    intervals where the coordinate is nonzero, and ``beta1 = +mu``,
    ``beta2 = -mu`` on flagged intervals, which pulls the coordinate back to
    zero from either side.  The control is ``v = beta - b(x)``.
    """

    def __init__(self, P, phi):
        if not isinstance(P, Problem):
            raise InputError("FeedbackControl needs a Problem")
        if phi.d != P.d:
            raise InputError(f"path has dimension {phi.d}, problem has {P.d}")
        self.P = P
        self.phi = phi
        self._slopes = phi.slopes()

    def __call__(self, t, X):
        k = min(int(np.searchsorted(self.phi.breakpoints, t, side="right")) - 1, self._slopes.shape[0] - 1)
        below = X <= 0
        flags = self.phi.zero_flags[k]
        mu = self.P.mu
        target = np.where(flags, np.where(below, mu, -mu), self._slopes[k])
        b1, b2 = self.P.branch_drifts(X)
        return target - np.where(below, b1, b2)


def controlled_cost(P, x0, h, control, cfg, replicas, threads=1):
    """Mean and standard error of ``1/2 int ||v||^2 dt + h(x^{eps,v})``.

    By the variational representation this bounds ``H_eps`` from above for
    every control.  ``control`` is a `ControlPath` or a feedback
    ``v(t, X)`` such as `FeedbackControl`.
    """
    if replicas < 2:
        raise InputError("replicas must be at least 2")
    spec = _simulation_spec(P, x0, cfg, control=control)

    def stat(batch):
        return (0.5 * batch.energy + h.on_samples(batch.times, batch.states))[:, None]

    res = ensemble(spec, replicas, cfg.seed, statistic=stat, threads=threads)
    return float(res.mean[0]), float(res.stderr[0])


# ---------------------------------------------------------------------------
# variational search


def _flow_nodes(model, x0, times):
    if isinstance(model, ForcedModel):
        phi = exact_piecewise_flow(model.forcing, model.mu, x0)
        vals = phi(times)
        k = np.searchsorted(phi.breakpoints, times, side="right") - 1
        vals[phi.zero_flags[np.clip(k, 0, phi.zero_flags.shape[0] - 1)]] = 0.0
        return vals
    traj = flow_integrate(model, x0, float(times[-1]), 1e-3)
    vals = np.stack([np.interp(times, traj.times, traj.states[:, i]) for i in range(model.d)], axis=-1)
    # nodes inside a frozen stretch are exact zeros
    frozen = traj.zero_mask()
    at = np.searchsorted(traj.times, times).clip(0, traj.times.size - 1)
    vals[frozen[at] & frozen[np.maximum(at - 1, 0)]] = 0.0
    return vals


def _pins_from_nodes(vals):
    return (vals[:-1] == 0) & (vals[1:] == 0)


GOLD = 0.5 * (math.sqrt(5.0) - 1.0)


def _golden_line(g, v0, f0, w, rtol=1e-8, max_expand=50):
    """Golden-section line search of ``g`` around ``v0`` (where ``g(v0) = f0``).

    The step ``w`` is first grown downhill (at most ``max_expand`` times) until
    a bracket is found; a flat function counts as bracketed.  Returns the best
    point seen and its value.
    """
    best = (v0, f0)
    b = v0 + w
    fb = g(b)
    if fb >= f0:
        b = v0 - w
        fb = g(b)
    if fb >= f0:
        lo, hi = v0 - w, v0 + w
    else:
        a = v0
        for _ in range(max_expand):
            c = b + (b - a) / GOLD
            fc = g(c)
            if fc >= fb:
                break
            a, b, fb = b, c, fc
        else:
            return b, fb
        lo, hi = min(a, c), max(a, c)
    if fb < best[1]:
        best = (b, fb)
    x1, x2 = hi - GOLD * (hi - lo), lo + GOLD * (hi - lo)
    f1, f2 = g(x1), g(x2)
    while hi - lo > rtol * max(1.0, abs(lo) + abs(hi)):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLD * (hi - lo)
            f1 = g(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLD * (hi - lo)
            f2 = g(x2)
    for x, fx in ((x1, f1), (x2, f2)):
        if fx < best[1]:
            best = (x, fx)
    return best


class _Search:
    """Objective ``I + h`` over nodal values with a fixed pin pattern."""

    def __init__(self, model, x0, h, times):
        self.model, self.x0, self.h, self.times = model, x0, h, times

    def path(self, vals, pins):
        return PiecewisePath.from_nodes(self.times, vals, pinned=pins)

    def value(self, vals, pins):
        phi = self.path(vals, pins)
        return rate_functional(self.model, phi).total + self.h(phi)

    def free_mask(self, pins):
        free = np.ones((self.times.size, self.model.d), dtype=bool)
        free[0] = False
        free[:-1] &= ~pins
        free[1:] &= ~pins
        return free

    def polish(self, vals, pins, ftol, only=None):
        """Line-search descent over the free nodal values (or the subset ``only``)."""
        free = self.free_mask(pins)
        vals = vals.copy()
        vals[~free] = 0.0
        vals[0] = self.x0
        if only is not None:
            free &= only
        current = self.value(vals, pins)
        if not free.any():
            return vals, current

        def f(u):
            trial = vals.copy()
            trial[free] = u
            return self.value(trial, pins)

        # quasi-Newton on finite-difference gradients does the bulk of the work;
        # plain coordinate line searches converge too slowly along the node chain
        res = minimize(f, vals[free], method="L-BFGS-B", options={"ftol": ftol, "maxiter": 2000})
        if res.fun < current:
            vals[free] = res.x
            current = float(res.fun)
        vals, current = self.golden_sweep(vals, pins, free, current, ftol)
        return vals, current

    def golden_sweep(self, vals, pins, free, current, ftol):
        """One golden-section line search per free nodal value; each kept only if it helps."""
        for j, i in zip(*np.nonzero(free)):
            def g(v):
                trial = vals.copy()
                trial[j, i] = v
                return self.value(trial, pins)
            v0 = vals[j, i]
            x, fx = _golden_line(g, v0, current, 1e-3 * max(1.0, abs(v0)))
            if fx < current - ftol * max(abs(current), 1.0):
                vals[j, i] = x
                current = float(fx)
        return vals, current

    def toggles(self, vals, pins, best, ftol):
        """One greedy pass of single pin flips, keeping each flip that lowers the objective."""
        changed = False
        for k in range(pins.shape[0]):
            for i in range(pins.shape[1]):
                tol = ftol * max(abs(best), 1.0)
                trial = pins.copy()
                trial[k, i] = not pins[k, i]
                if trial[k, i]:
                    if k == 0 and self.x0[i] != 0:
                        continue
                    new_vals, v = vals, self.value(vals, trial)
                else:
                    # only the edge of a pinned run can be released usefully
                    if (k > 0 and pins[k - 1, i]) and (k + 1 < pins.shape[0] and pins[k + 1, i]):
                        continue
                    only = np.zeros(vals.shape, dtype=bool)
                    only[k:k + 2, i] = True
                    new_vals, v = self.golden_sweep(vals.copy(), trial, self.free_mask(trial) & only,
                                                    self.value(vals, trial), ftol)
                if v < best - tol:
                    vals, pins, best, changed = new_vals, trial, v, True
        return vals, pins, best, changed

    def run(self, vals, pins, ftol, max_rounds=50):
        """Alternate continuous polishing with pin flips until no flip helps."""
        vals, best = self.polish(vals, pins, ftol)
        for _ in range(max_rounds):
            vals, pins, best, changed = self.toggles(vals, pins, best, ftol)
            if not changed:
                break
            vals, best = self.polish(vals, pins, ftol)
        return best, vals, pins


def _starts(model, x0, h, times, multistarts, seed):
    m, d = times.size, model.d
    flow = _flow_nodes(model, x0, times)
    z = h.z if h.kind != "constant" else flow[-1]
    line = x0 + np.multiply.outer(times / times[-1], z - x0)
    starts = [(flow, _pins_from_nodes(flow)), (line, np.zeros((m - 1, d), dtype=bool))]
    scale = max(1.0, float(np.abs(np.concatenate([x0, z])).max()))
    for s in range(2, multistarts):
        rng = np.random.default_rng(replica_seed(seed, s))
        base = flow if s % 2 == 0 else line
        vals = base + scale * 0.5 * rng.standard_normal((m, d)) * np.sqrt(times / times[-1])[:, None]
        vals[0] = x0
        pins = rng.random((m - 1, d)) < 0.25
        pins[0] &= x0 == 0
        starts.append((vals, pins))
    return starts[:max(multistarts, 1)]


def variational_infimum(model, x0, h, m=32, multistarts=16, seed=0, threads=1, ftol=1e-8, horizon=1.0):
    """Smallest ``I(phi) + h(phi)`` found over piecewise-linear paths from ``x0``.

    Candidates are given by their values at ``m`` uniform breakpoints on
    ``[0, horizon]`` plus the model's time breaks (the first node is fixed at
    ``x0``) and per-interval
    per-coordinate zero pins; crossings of zero get their own breakpoints.
    Each start is polished by derivative-free line searches over the free
    nodal values, alternating with single pin toggles kept when they lower
    the objective, until the relative improvement drops below ``ftol``.

    The starts are the uncontrolled flow, the straight line to the cost
    target, and ``multistarts - 2`` random perturbations of these two seeded
    from ``(seed, start index)``.  For a forced model the exact flow path is
    scored as well.  The result is an upper bound on the infimum.

    Returns
    -------
    (value, PiecewisePath)
    """
    if m < 2:
        raise InputError("m must be at least 2")
    if multistarts < 1:
        raise InputError("multistarts must be at least 1")
    x0 = np.array(x0, dtype=float).reshape(-1)
    if x0.size != model.d:
        raise InputError(f"x0 has dimension {x0.size}, expected {model.d}")
    breaks = [tb for tb in model.time_breaks() if 0.0 < tb < horizon]
    times = np.union1d(np.linspace(0.0, horizon, m), breaks)
    search = _Search(model, x0, h, times)
    starts = _starts(model, x0, h, times, multistarts, seed)

    def run(start):
        return search.run(start[0], start[1].copy(), ftol)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]
    # ties go to the earliest start, so the answer does not depend on scheduling
    j = min(range(len(results)), key=lambda r: (results[r][0], r))
    best, vals, pins = results[j]
    path = search.path(vals, pins)
    if isinstance(model, ForcedModel) and model.forcing.horizon == horizon:
        # the exact flow has its kinks off the node grid; score it as it is
        flow = exact_piecewise_flow(model.forcing, model.mu, x0)
        v = rate_functional(model, flow).total + h(flow)
        if v < best:
            best, path = v, flow
    return float(best), path


@dataclass(eq=False)
class LDPReport:
    """Monte Carlo estimates of ``H_eps`` against the variational value."""

    eps_values: list
    H_estimates: list
    std_errors: list
    variational_value: float
    optimizer_path: PiecewisePath
    m: int = 32
    multistarts: int = 16
    replicas: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        eps = np.asarray(self.eps_values, dtype=float)
        if eps.size and (np.any(eps <= 0) or np.any(np.diff(eps) >= 0)):
            raise InputError("eps values must be positive and strictly decreasing")
        if any(se < 0 for se in self.std_errors):
            raise InputError("standard errors must be nonnegative")

    @property
    def gaps(self):
        return [H - self.variational_value for H in self.H_estimates]

    @property
    def trend_slope(self):
        """Least-squares slope of gap against eps (nan for fewer than two levels)."""
        if len(self.eps_values) < 2:
            return float("nan")
        return float(np.polyfit(self.eps_values, self.gaps, 1)[0])

    def gaps_non_increasing(self, n_se=2.0):
        """Whether ``|gap|`` does not grow as eps decreases, within ``n_se`` combined errors."""
        g, se = np.abs(self.gaps), np.asarray(self.std_errors)
        return all(g[k + 1] <= g[k] + n_se * np.hypot(se[k], se[k + 1]) for k in range(len(g) - 1))

    def to_dict(self):
        return {
            "eps_values": [float(e) for e in self.eps_values],
            "H_estimates": [float(v) for v in self.H_estimates],
            "std_errors": [float(v) for v in self.std_errors],
            "gaps": [float(v) for v in self.gaps],
            "variational_value": float(self.variational_value),
            "trend_slope": self.trend_slope,
            "optimizer_path": self.optimizer_path.to_dict(),
            "m": int(self.m),
            "multistarts": int(self.multistarts),
            "replicas": int(self.replicas),
            "seed": int(self.seed),
            "meta": self.meta,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["eps_values"], data["H_estimates"], data["std_errors"],
                       data["variational_value"], PiecewisePath.from_dict(data["optimizer_path"]),
                       data.get("m", 32), data.get("multistarts", 16), data.get("replicas", 0),
                       data.get("seed", 0), data.get("meta", {}))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed report: {exc}") from exc

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InputError(f"invalid report JSON: {exc}") from exc

    def to_csv(self, header=None):
        fh = io.StringIO()
        if header is not None:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "H", "stderr", "gap"])
        for e, H, se, g in zip(self.eps_values, self.H_estimates, self.std_errors, self.gaps):
            w.writerow([fmt(e), fmt(H), fmt(se), fmt(g)])
        return fh.getvalue()


def ldp_report(model, x0, h, eps_list, cfg, replicas, m=32, multistarts=16, threads=1):
    """Estimate ``H_eps`` for each eps (decreasing) and compare with the variational value.

    Every eps level reuses the replica seeds derived from ``cfg.seed``.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list) or np.any(np.diff(eps_list) >= 0):
        raise InputError("eps_list must be non-empty, positive and strictly decreasing")
    H, se = [], []
    for eps in eps_list:
        est, err = laplace_estimate(model, x0, h, replace(cfg, eps=eps), replicas, threads=threads)
        H.append(est)
        se.append(err)
    value, path = variational_infimum(model, x0, h, m=m, multistarts=multistarts, seed=cfg.seed,
                                      threads=threads, horizon=cfg.horizon)
    return LDPReport(eps_list, H, se, value, path, m, multistarts, replicas, int(cfg.seed))
