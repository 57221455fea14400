"""
Simulation of the lasso diffusion ``dx = b(x) dt + eps dw`` and its forced and
controlled variants.

Randomness
----------
Every trajectory draws its Gaussian increments from its own counter-based
stream ``Generator(Philox(key=seed))``; increments are consumed step-major,
coordinate-minor.  Ensemble replica ``r`` uses ``replica_seed(base_seed, r)``.
Replicas are stepped in vectorised chunks with elementwise arithmetic only,
so a replica's path does not depend on the chunk it lands in or on the number
of worker threads.

Schemes
-------
``proximal-splitting`` (default)::

    z = x + dt*F(t, x) + eps*sqrt(dt)*xi
    x' = soft_threshold(z, dt*mu)

``explicit-sign``::

    x' = x + dt*(F(t, x) - mu*sign(x)) + eps*sqrt(dt)*xi,   sign(0) = 0

where ``F`` is the smooth part of the drift (``-A^T(Ax - y)``, ``f(t)``, or
``-A^T(Ax - y) + v``).  A proximal step that lands on zero realises the sign
selection ``s = clip(z/(dt*mu), -1, 1)``; it is stored with the trajectory.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import io

import numpy as np

from .exceptions import InputError
from .inclusion import _time_grid
from .paths import ControlPath, ForcingPath, Trajectory, fmt
from .problem import Problem, smooth_gradient_batch

__all__ = [
    "SCHEMES",
    "SdeConfig",
    "SimulationSpec",
    "EnsembleResult",
    "replica_seed",
    "gaussian_stream",
    "simulate",
    "simulate_forced",
    "simulate_controlled",
    "simulate_batch",
    "ensemble",
    "empirical_occupation",
    "terminal_and_occupation",
]

SCHEMES = ("proximal-splitting", "explicit-sign")
MAX_CHUNK_FLOATS = 4_000_000


@dataclass(frozen=True)
class SdeConfig:
    eps: float
    dt: float
    horizon: float = 1.0
    scheme: str = "proximal-splitting"
    seed: int = 0

    def __post_init__(self):
        if not (self.eps >= 0 and np.isfinite(self.eps)):
            raise InputError(f"eps must be >= 0, got {self.eps}")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise InputError(f"dt must be > 0, got {self.dt}")
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise InputError(f"horizon must be > 0, got {self.horizon}")
        if self.scheme not in SCHEMES:
            raise InputError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InputError("seed must be an unsigned 64-bit integer")

    def to_dict(self):
        return {"eps": self.eps, "dt": self.dt, "horizon": self.horizon,
                "scheme": self.scheme, "seed": int(self.seed)}


def replica_seed(base_seed, r):
    """Seed of replica ``r``, a deterministic function of ``(base_seed, r)``."""
    ss = np.random.SeedSequence([int(base_seed), int(r)])
    return int(ss.generate_state(1, np.uint64)[0])


def gaussian_stream(seed):
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _noise(seeds, n_steps, d, eps):
    out = np.zeros((n_steps, len(seeds), d))
    if eps == 0:
        return out
    for j, s in enumerate(seeds):
        out[:, j, :] = gaussian_stream(s).standard_normal((n_steps, d))
    return out


@dataclass(frozen=True, eq=False)
class SimulationSpec:
    """What to simulate: ``kind`` is ``lasso``, ``forced`` or ``controlled``.

    ``control`` for the controlled kind is a `ControlPath` or a callable
    ``v(t, X)`` mapping time and an ``(R, d)`` batch of states to ``(R, d)``
    controls (state feedback).
    """

    kind: str
    x0: np.ndarray
    cfg: SdeConfig
    problem: Problem = None
    forcing: ForcingPath = None
    mu: float = None
    control: object = None

    def __post_init__(self):
        if self.kind not in ("lasso", "forced", "controlled"):
            raise InputError(f"unknown simulation kind {self.kind!r}")
        if self.kind in ("lasso", "controlled") and self.problem is None:
            raise InputError(f"{self.kind} simulation needs a problem")
        if self.kind == "forced" and (self.forcing is None or self.mu is None):
            raise InputError("forced simulation needs a forcing path and mu")
        if self.kind == "controlled" and self.control is None:
            raise InputError("controlled simulation needs a control")
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        if x0.size != self.d:
            raise InputError(f"x0 has dimension {x0.size}, expected {self.d}")
        object.__setattr__(self, "x0", x0)

    @property
    def d(self):
        return self.forcing.d if self.kind == "forced" else self.problem.d

    @property
    def penalty(self):
        return float(self.mu) if self.kind == "forced" else self.problem.mu

    def smooth_force(self, t, X):
        if self.kind == "forced":
            return np.broadcast_to(self.forcing(t), X.shape), None
        F = -smooth_gradient_batch(self.problem.A, self.problem.y, X)
        if self.kind == "lasso":
            return F, None
        if isinstance(self.control, ForcingPath):
            v = np.broadcast_to(self.control(t), X.shape)
        else:
            v = np.asarray(self.control(t, X), dtype=float)
        return F + v, v


@dataclass(eq=False)
class TrajectoryBatch:
    """``R`` trajectories on a shared grid: ``states`` has shape ``(R, N+1, d)``."""

    times: np.ndarray
    states: np.ndarray
    selection: np.ndarray = None
    energy: np.ndarray = None

    def __getitem__(self, r):
        sel = None if self.selection is None else self.selection[r]
        return Trajectory(self.times, self.states[r], selection=sel)


def simulate_batch(spec, seeds, x0=None):
    """Simulate one replica per seed; returns a `TrajectoryBatch`.

    ``x0`` (shape ``(R, d)``) overrides the common initial state of ``spec``.
    """
    cfg = spec.cfg
    times = _time_grid(cfg.horizon, cfg.dt)
    n_steps = times.size - 1
    R, d = len(seeds), spec.d
    mu = spec.penalty
    xi = _noise(seeds, n_steps, d, cfg.eps)
    prox = cfg.scheme == "proximal-splitting"
    states = np.empty((R, n_steps + 1, d))
    selection = np.full((R, n_steps + 1, d), np.nan) if prox else None
    start = spec.x0 if x0 is None else np.asarray(x0, dtype=float)
    try:
        X = np.broadcast_to(start, (R, d)).copy()
    except ValueError as exc:
        raise InputError(f"initial states of shape {start.shape} do not fit ({R}, {d})") from exc
    states[:, 0] = X
    energy = np.zeros(R) if spec.kind == "controlled" else None
    for k in range(n_steps):
        h = times[k + 1] - times[k]
        F, v = spec.smooth_force(times[k], X)
        if energy is not None:
            energy += h * np.sum(v * v, axis=1)
        shock = cfg.eps * np.sqrt(h) * xi[k]
        if prox:
            Z = X + h * F + shock
            X = np.sign(Z) * np.maximum(np.abs(Z) - h * mu, 0.0)
            at0 = X == 0
            if at0.any():
                selection[:, k + 1][at0] = np.clip(Z[at0] / (h * mu), -1.0, 1.0)
        else:
            X = X + h * (F - mu * np.sign(X)) + shock
        states[:, k + 1] = X
    return TrajectoryBatch(times, states, selection, energy)


def _single(spec):
    batch = simulate_batch(spec, [spec.cfg.seed])
    return batch, batch[0]


def simulate(P, x0, cfg):
    """One path of the lasso diffusion."""
    return _single(SimulationSpec("lasso", x0, cfg, problem=P))[1]


def simulate_forced(f, mu, x0, cfg):
    """One path of ``dx = (f(t) - mu*sgn(x)) dt + eps dw``.

    ``f`` is held at its last value beyond its own horizon.
    """
    return _single(SimulationSpec("forced", x0, cfg, forcing=f, mu=mu))[1]


def simulate_controlled(P, v, x0, cfg, return_energy=False):
    """One path of ``dx = (b(x) + v) dt + eps dw``.

    With ``return_energy`` also returns ``int ||v||^2 dt`` accumulated along
    the grid (left-point rule, exact for piecewise-constant ``v`` aligned
    with the grid).
    """
    batch, traj = _single(SimulationSpec("controlled", x0, cfg, problem=P, control=v))
    if return_energy:
        return traj, float(batch.energy[0])
    return traj


def _occupation_weights(states, selection):
    pos = (states > 0).astype(float)
    if selection is not None:
        at0 = (states == 0) & ~np.isnan(selection)
        pos[at0] = 0.5 * (1.0 + selection[at0])
    return pos


def empirical_occupation(traj, i):
    """Time fractions ``(x_i <= 0, x_i > 0)`` along the grid (left-point rule).

    A zero produced by a proximal step counts as ``(1 - s)/2`` below and
    ``(1 + s)/2`` above, ``s`` being the realised selection of ``sgn(0)``;
    other exact zeros count as ``x_i <= 0``.
    """
    if not 0 <= i < traj.d:
        raise InputError(f"coordinate index {i} out of range")
    sel = None if traj.selection is None else traj.selection[:-1, i]
    w = np.diff(traj.times)
    pos = _occupation_weights(traj.states[:-1, i], sel)
    frac_pos = float(np.sum(w * pos) / traj.horizon)
    return 1.0 - frac_pos, frac_pos


def terminal_and_occupation(batch):
    """Default ensemble statistic: terminal state and positive-time fraction per coordinate."""
    w = np.diff(batch.times)
    sel = None if batch.selection is None else batch.selection[:, :-1]
    pos = _occupation_weights(batch.states[:, :-1], sel)
    occ = np.einsum("k,rkd->rd", w, pos) / batch.times[-1]
    return np.concatenate([batch.states[:, -1], occ], axis=1)


@dataclass(eq=False)
class EnsembleResult:
    seeds: list
    values: np.ndarray
    columns: list = field(default_factory=list)

    @property
    def replicas(self):
        return self.values.shape[0]

    @property
    def mean(self):
        return self.values.mean(axis=0)

    @property
    def var(self):
        if self.replicas < 2:
            return np.zeros(self.values.shape[1])
        return self.values.var(axis=0, ddof=1)

    @property
    def stderr(self):
        return np.sqrt(self.var / self.replicas)

    def to_csv(self, header=None):
        fh = io.StringIO()
        if header is not None:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica", "seed"] + self.columns)
        for r, (s, row) in enumerate(zip(self.seeds, self.values)):
            w.writerow([r, s] + [fmt(v) for v in row])
        return fh.getvalue()


def _chunks(n, size):
    return [range(a, min(a + size, n)) for a in range(0, n, size)]


def ensemble(spec, replicas, base_seed, statistic=None, threads=1, chunk_size=None):
    """Run ``replicas`` independent copies of ``spec`` and reduce each with ``statistic``.

    ``statistic`` maps a `TrajectoryBatch` to an ``(R, k)`` array; the default
    is `terminal_and_occupation`.  Results are stored in replica order.
    """
    if replicas < 1:
        raise InputError("replicas must be >= 1")
    stat = terminal_and_occupation if statistic is None else statistic
    seeds = [replica_seed(base_seed, r) for r in range(replicas)]
    if chunk_size is None:
        n_steps = _time_grid(spec.cfg.horizon, spec.cfg.dt).size
        chunk_size = max(1, MAX_CHUNK_FLOATS // (n_steps * spec.d))
    parts = _chunks(replicas, chunk_size)

    def run(part):
        return np.asarray(stat(simulate_batch(spec, [seeds[r] for r in part])), dtype=float).reshape(len(part), -1)

    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run, parts))
    else:
        blocks = [run(p) for p in parts]
    values = np.concatenate(blocks, axis=0)
    columns = []
    if statistic is None:
        columns = [f"terminal_{i + 1}" for i in range(spec.d)] + [f"occupation_pos_{i + 1}" for i in range(spec.d)]
    return EnsembleResult(seeds, values, columns)


def with_seed(cfg, seed):
    return replace(cfg, seed=int(seed))
