"""
Invariant law of the lasso diffusion and the exponential convergence check.

The diffusion ``dx = -grad U(x) dt + eps dw`` with the lasso potential
``U(x) = 0.5*||Ax - y||^2 + mu*||x||_1`` has the log-concave stationary density

    p_eps(x)  proportional to  exp(-2 U(x) / eps^2).

In one dimension its moments are computed by adaptive Simpson quadrature; in
any dimension they can be estimated from one long Langevin run.  The
Poincare-type bound

    E[(P_t f - E f)^2] <= exp(-t/C) var(f),    C = 4 * total variance of p_eps,

is checked by nested Monte Carlo.
"""
from dataclasses import dataclass, replace
from typing import NamedTuple
import csv
import io
import math

import numpy as np

from .exceptions import DomainError, InputError, NumericalError
from .paths import fmt
from .problem import Problem, lasso_solve
from .sde import SimulationSpec, replica_seed, simulate, simulate_batch

__all__ = [
    "GibbsSpec",
    "log_density_unnorm",
    "adaptive_simpson",
    "quadrature_moments_1d",
    "GibbsMoments",
    "LangevinMoments",
    "langevin_moments",
    "integrated_autocorr_time",
    "poincare_constant",
    "DecayReport",
    "variance_decay_check",
    "TEST_FUNCTIONS",
]

LOG_TAIL = math.log(1e-16)


@dataclass(frozen=True, eq=False)
class GibbsSpec:
    """Problem and noise level defining ``p_eps``."""

    P: Problem
    eps: float

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise InputError(f"eps must be positive, got {self.eps}")

    @property
    def d(self):
        return self.P.d


def potential(P, x):
    """``0.5*||Ax - y||^2 + mu*||x||_1`` for points of shape ``(..., d)``."""
    x = P.check_point(x)
    r = x @ P.A.T - P.y
    return 0.5 * np.sum(r * r, axis=-1) + P.mu * np.sum(np.abs(x), axis=-1)


def log_density_unnorm(spec, x):
    """``-(2/eps^2) * U(x)``; vectorised over leading axes."""
    out = -(2.0 / spec.eps ** 2) * potential(spec.P, x)
    return out if np.ndim(out) else float(out)


def adaptive_simpson(f, a, b, tol, max_depth=60):
    """Adaptive Simpson quadrature of a vector-valued ``f`` over ``[a, b]``.

    ``tol`` is an absolute tolerance per component (broadcast against the
    output of ``f``).  Panels are accepted with Richardson correction and
    summed in a fixed order.
    """
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    tol = np.broadcast_to(np.asarray(tol, dtype=float), np.shape(fa))
    stack = [(a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 0)]
    total = np.zeros(np.shape(fa))
    while stack:
        a, b, fa, fm, fb, whole, tol, depth = stack.pop()
        m = 0.5 * (a + b)
        flm, frm = f(0.5 * (a + m)), f(0.5 * (m + b))
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        err = left + right - whole
        if depth >= max_depth or np.all(np.abs(err) <= 15.0 * tol):
            total = total + left + right + err / 15.0
        else:
            stack.append((m, b, fm, frm, fb, right, 0.5 * tol, depth + 1))
            stack.append((a, m, fa, flm, fm, left, 0.5 * tol, depth + 1))
    return total


class GibbsMoments(NamedTuple):
    Z: float
    mean: float
    variance: float
    mean_abs: float


def _support_1d(spec):
    """Mode, its log-density, and breakpoints covering all but a 1e-16 tail."""
    if spec.d != 1:
        raise DomainError(f"quadrature is implemented for d = 1 only (got d = {spec.d})")
    mode = float(lasso_solve(spec.P, tol=1e-13)[0])
    lmax = log_density_unnorm(spec, [mode])
    R = max(1.0, abs(mode))
    for _ in range(200):
        if (log_density_unnorm(spec, [mode - R]) - lmax < LOG_TAIL - 5.0
                and log_density_unnorm(spec, [mode + R]) - lmax < LOG_TAIL - 5.0):
            break
        R *= 2.0
    cuts = sorted({mode - R, mode + R, mode, *([0.0] if abs(0.0 - mode) < R else [])})
    return mode, lmax, cuts


def _raw_moments(spec, rtol=1e-12):
    """``Z`` and raw moments ``E[1, x, x^2, |x|, x^3, x^4]`` under ``p_eps`` (d = 1)."""
    mode, lmax, cuts = _support_1d(spec)

    def f(x):
        w = math.exp(log_density_unnorm(spec, [x]) - lmax)
        return w * np.array([1.0, x, x * x, abs(x), x ** 3, x ** 4])

    # rough scale of every component sets the absolute tolerance
    coarse = np.zeros(6)
    for a, b in zip(cuts[:-1], cuts[1:]):
        xs = np.linspace(a, b, 257)
        vals = np.array([f(x) for x in xs])
        coarse += np.abs(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(xs)[:, None], axis=0))
    scale = np.maximum(coarse, coarse[0] * 1e-300)
    tol = rtol * scale / (len(cuts) - 1)
    total = np.zeros(6)
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += adaptive_simpson(f, a, b, tol)
    Z = total[0]
    if not Z > 0:
        raise NumericalError("normalising constant vanished")
    return Z * math.exp(lmax), total / Z, (mode, lmax, cuts)


def quadrature_moments_1d(spec):
    """Normalising constant, mean, variance and ``E|x|`` of ``p_eps`` in one dimension.

    The density is integrated by adaptive Simpson over ``[mode - R, mode + R]``
    with the kink at 0 and the mode as breakpoints; ``R`` is doubled until
    the density at both ends is below ``1e-16`` of its maximum.

    Raises
    ------
    DomainError
        If ``d != 1``.
    """
    Z, mom, _ = _raw_moments(spec)
    mean = mom[1]
    var = max(mom[2] - mean * mean, 0.0)
    return GibbsMoments(float(Z), float(mean), float(var), float(mom[3]))


def _sampler_1d(spec, n_grid=4001):
    """Inverse-CDF sampler for ``p_eps`` in one dimension."""
    _, lmax, cuts = _support_1d(spec)
    xs = np.unique(np.concatenate([np.linspace(a, b, n_grid) for a, b in zip(cuts[:-1], cuts[1:])]))
    w = np.exp(log_density_unnorm(spec, xs[:, None]) - lmax)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(xs))])
    cdf /= cdf[-1]

    def draw(u):
        return np.interp(u, cdf, xs)

    return draw


def integrated_autocorr_time(x, c=5.0):
    """Integrated autocorrelation time of a scalar series (FFT, automatic window)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return 1.0
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0.0:
        return 1.0
    nfft = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(fx * np.conj(fx), nfft)[:n] / (n * var)
    taus = 2.0 * np.cumsum(acf) - 1.0
    # smallest window M with M >= c * tau(M)
    ok = np.arange(n) >= c * taus
    M = int(np.argmax(ok)) if ok.any() else n - 1
    return float(max(taus[M], 1.0))


@dataclass(frozen=True)
class LangevinMoments:
    """Time averages of one long run, per coordinate, with standard errors."""

    mean: np.ndarray
    variance: np.ndarray
    mean_abs: np.ndarray
    ess: float
    stderr_mean: np.ndarray
    stderr_variance: np.ndarray
    stderr_mean_abs: np.ndarray


def _avg(series):
    tau = integrated_autocorr_time(series)
    ess = series.size / tau
    return float(series.mean()), float(series.std() / math.sqrt(ess)), ess


def langevin_moments(spec, cfg, burn_in=0.1, x0=None):
    """Ergodic averages from one trajectory of the diffusion at ``eps = spec.eps``.

    ``cfg`` supplies ``dt``, the (long) horizon, the scheme and the seed; its
    ``eps`` is replaced by ``spec.eps``.  The first ``burn_in`` fraction of
    the grid is discarded.  The run starts at ``x0`` (default: the lasso
    solution).  ``ess`` is the smallest effective sample size over the
    averaged statistics.
    """
    if not 0 <= burn_in < 1:
        raise InputError("burn_in must lie in [0, 1)")
    cfg = replace(cfg, eps=spec.eps)
    start = lasso_solve(spec.P) if x0 is None else x0
    traj = simulate(spec.P, start, cfg)
    X = traj.states[int(burn_in * traj.states.shape[0]):]
    if X.shape[0] < 10:
        raise InputError("too few samples after burn-in; lengthen the horizon")
    out = {k: [] for k in ("m", "sm", "v", "sv", "a", "sa")}
    ess = np.inf
    for i in range(X.shape[1]):
        m, sm, e1 = _avg(X[:, i])
        v, sv, e2 = _avg((X[:, i] - m) ** 2)
        a, sa, e3 = _avg(np.abs(X[:, i]))
        for key, val in zip(("m", "sm", "v", "sv", "a", "sa"), (m, sm, v, sv, a, sa)):
            out[key].append(val)
        ess = min(ess, e1, e2, e3)
    arr = {k: np.array(v) for k, v in out.items()}
    return LangevinMoments(arr["m"], arr["v"], arr["a"], float(ess), arr["sm"], arr["sv"], arr["sa"])


def poincare_constant(spec, cfg=None, burn_in=0.1):
    """``C = 4 * total variance`` of ``p_eps``.

    Uses quadrature when ``d = 1``; otherwise a Langevin run configured by
    ``cfg`` (required).
    """
    if spec.d == 1:
        return 4.0 * quadrature_moments_1d(spec).variance
    if cfg is None:
        raise InputError("an SdeConfig is needed to estimate C when d > 1")
    return 4.0 * float(langevin_moments(spec, cfg, burn_in).variance.sum())


TEST_FUNCTIONS = {
    "coordinate": lambda X: X[..., 0],
    "abs": lambda X: np.abs(X[..., 0]),
    "quadratic": lambda X: X[..., 0] ** 2,
}


@dataclass(eq=False)
class DecayReport:
    """Conditional-mean variance of ``f`` against ``exp(-t/C) var(f)``."""

    times: np.ndarray
    cond_var: np.ndarray
    bound: np.ndarray
    stderr: np.ndarray
    C: float
    var_f: float
    mean_f: float
    test_fn: str

    @property
    def holds(self):
        """Per time: bound not exceeded by more than 3 standard errors."""
        return self.cond_var <= self.bound + 3.0 * self.stderr

    @property
    def all_hold(self):
        return bool(np.all(self.holds))

    @property
    def decay_rate(self):
        """Minus the least-squares slope of ``log cond_var`` over times where it is resolved."""
        use = self.cond_var > 2.0 * self.stderr
        if use.sum() < 2:
            return float("nan")
        return float(-np.polyfit(self.times[use], np.log(self.cond_var[use]), 1)[0])

    def to_csv(self, header=None):
        fh = io.StringIO()
        if header is not None:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "cond_var", "bound", "stderr"])
        for row in zip(self.times, self.cond_var, self.bound, self.stderr):
            w.writerow([fmt(v) for v in row])
        return fh.getvalue()


def _f_moments(spec, test_fn, cfg, n_ref, seed):
    """Mean and variance of the test function under ``p_eps``."""
    if spec.d == 1:
        _, mom, _ = _raw_moments(spec)
        if test_fn == "coordinate":
            return mom[1], mom[2] - mom[1] ** 2
        if test_fn == "abs":
            return mom[3], mom[2] - mom[3] ** 2
        return mom[2], mom[4] - mom[2] ** 2
    X = _langevin_draws(spec, cfg, n_ref, seed + 1)
    f = TEST_FUNCTIONS[test_fn](X)
    return float(f.mean()), float(f.var(ddof=1))


def _langevin_draws(spec, cfg, n, seed):
    """Approximate draws from ``p_eps`` by running ``n`` chains for 10 mixing times."""
    C = poincare_constant(spec, replace(cfg, horizon=max(200.0, cfg.horizon)))
    run = replace(cfg, eps=spec.eps, horizon=max(10.0 * C, 1.0))
    sim = SimulationSpec("lasso", lasso_solve(spec.P), run, problem=spec.P)
    seeds = [replica_seed(seed, 1_000_000 + r) for r in range(n)]
    return simulate_batch(sim, seeds).states[:, -1]


def variance_decay_check(spec, cfg, test_fn="coordinate", times=(0.0, 0.25, 0.5, 1.0, 2.0),
                         replicas=200, inner=200, chunk=50):
    """Nested Monte Carlo check of ``E[(P_t f - E f)^2] <= exp(-t/C) var(f)``.

    ``replicas`` initial points are drawn from ``p_eps`` (inverse CDF in
    d = 1, long Langevin runs otherwise).  From each, ``inner`` paths give
    ``P_t f(x0)`` on the time grid; the squared deviation from ``E f`` is
    corrected for the inner-sample variance, so its outer average is an
    unbiased estimate of the conditional-mean variance.

    Parameters
    ----------
    spec : GibbsSpec
    cfg : SdeConfig
        ``dt``, scheme and seed; eps is taken from ``spec``.
    test_fn : {"coordinate", "abs", "quadratic"}
        Applied to the first coordinate.
    times : sequence of float
        Nonnegative; rounded to the nearest multiple of ``cfg.dt``.
    replicas : int
        Number of initial points, at least 100.
    """
    if test_fn not in TEST_FUNCTIONS:
        raise InputError(f"unknown test function {test_fn!r}; choose from {sorted(TEST_FUNCTIONS)}")
    if replicas < 100:
        raise InputError("replicas must be at least 100")
    if inner < 2:
        raise InputError("inner must be at least 2")
    times = np.asarray(sorted(times), dtype=float)
    if times.size == 0 or times[0] < 0:
        raise InputError("times must be nonnegative")
    f = TEST_FUNCTIONS[test_fn]
    seed = int(cfg.seed)
    C = poincare_constant(spec, cfg)
    mean_f, var_f = _f_moments(spec, test_fn, cfg, 20 * replicas, seed)
    if spec.d == 1:
        rng = np.random.Generator(np.random.Philox(key=replica_seed(seed, 2 ** 40)))
        X0 = _sampler_1d(spec)(rng.random(replicas))[:, None]
    else:
        X0 = _langevin_draws(spec, cfg, replicas, seed)
    horizon = max(float(times[-1]), cfg.dt)
    run = replace(cfg, eps=spec.eps, horizon=horizon)
    sim = SimulationSpec("lasso", np.zeros(spec.d), run, problem=spec.P)
    terms = np.empty((replicas, times.size))
    for lo in range(0, replicas, chunk):
        js = range(lo, min(lo + chunk, replicas))
        seeds = [replica_seed(seed, j * inner + k) for j in js for k in range(inner)]
        starts = np.repeat(X0[lo:js.stop], inner, axis=0)
        batch = simulate_batch(sim, seeds, x0=starts)
        idx = np.clip(np.rint(times / cfg.dt).astype(int), 0, batch.times.size - 1)
        vals = f(batch.states[:, idx, :]).reshape(len(js), inner, times.size)
        m = vals.mean(axis=1)
        s2 = vals.var(axis=1, ddof=1)
        terms[lo:js.stop] = (m - mean_f) ** 2 - s2 / inner
    cond = terms.mean(axis=0)
    se = terms.std(axis=0, ddof=1) / math.sqrt(replicas)
    bound = np.exp(-times / C) * var_f
    return DecayReport(times, cond, bound, se, float(C), float(var_f), float(mean_f), test_fn)
