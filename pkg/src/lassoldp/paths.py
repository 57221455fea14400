"""
Path containers: sampled trajectories, piecewise-constant forcings and
piecewise-linear paths whose coordinates are, on each interval, either
identically zero or never zero.
"""
from dataclasses import dataclass, field
import csv
import io
import json

import numpy as np

from .exceptions import InputError

__all__ = ["Trajectory", "ForcingPath", "ControlPath", "PiecewisePath", "fmt"]


def fmt(v):
    """Float formatting used in every CSV/JSON output (round-trip safe)."""
    return format(float(v), ".17g")


def _increasing(bp, name):
    bp = np.asarray(bp, dtype=float)
    if bp.ndim != 1 or bp.size < 2:
        raise InputError(f"{name}: need at least two breakpoints")
    if bp[0] != 0.0:
        raise InputError(f"{name}: first breakpoint must be 0, got {bp[0]}")
    if np.any(np.diff(bp) <= 0):
        raise InputError(f"{name}: breakpoints must be strictly increasing")
    if not np.all(np.isfinite(bp)):
        raise InputError(f"{name}: breakpoints must be finite")
    return bp


@dataclass(eq=False)
class Trajectory:
    """A sample path on a time grid.

    ``frozen`` (optional) marks coordinates held at zero by the sticky
    integrator; ``selection`` (optional) stores, for states produced by a
    proximal step that landed on zero, the implied element of ``sgn(0)``.
    """

    times: np.ndarray
    states: np.ndarray
    frozen: np.ndarray = None
    selection: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.times.ndim != 1 or self.times.size < 2:
            raise InputError("trajectory needs at least two time points")
        if self.states.shape[0] != self.times.size:
            raise InputError("times and states lengths differ")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise InputError("times must start at 0 and increase")

    @property
    def d(self):
        return self.states.shape[1]

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def terminal(self):
        return self.states[-1]

    def zero_mask(self):
        if self.frozen is not None:
            return np.asarray(self.frozen, dtype=bool)
        return self.states == 0.0

    def to_csv(self, fh=None, header=None):
        """Write ``t,x_1,...,x_d,frozen_mask``; the mask is a 0/1 string per row."""
        own = fh is None
        if own:
            fh = io.StringIO()
        if header is not None:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(self.d)] + ["frozen_mask"])
        mask = self.zero_mask()
        for k in range(self.times.size):
            w.writerow([fmt(self.times[k])] + [fmt(v) for v in self.states[k]]
                       + ["".join("1" if m else "0" for m in mask[k])])
        if own:
            return fh.getvalue()
        return None

    @classmethod
    def from_csv(cls, fh):
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        if not rows:
            raise InputError("empty trajectory CSV")
        head, body = rows[0], rows[1:]
        if not head or head[0] != "t":
            raise InputError("trajectory CSV must start with a 't' column")
        xcols = [j for j, h in enumerate(head) if h.startswith("x_")]
        try:
            times = [float(r[0]) for r in body]
            states = [[float(r[j]) for j in xcols] for r in body]
        except (ValueError, IndexError) as exc:
            raise InputError(f"malformed trajectory CSV: {exc}") from exc
        frozen = None
        if "frozen_mask" in head:
            j = head.index("frozen_mask")
            frozen = np.array([[c == "1" for c in r[j]] for r in body], dtype=bool)
        return cls(np.array(times), np.array(states), frozen=frozen)


@dataclass(eq=False)
class ForcingPath:
    """Piecewise-constant vector function: ``values[k]`` on ``[breakpoints[k], breakpoints[k+1])``."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.breakpoints = _increasing(self.breakpoints, type(self).__name__)
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.breakpoints.size - 1:
            raise InputError("need exactly one value vector per interval")
        if not np.all(np.isfinite(self.values)):
            raise InputError("forcing values must be finite")

    @classmethod
    def constant(cls, value, horizon=1.0):
        return cls([0.0, float(horizon)], [np.atleast_1d(np.asarray(value, dtype=float))])

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def horizon(self):
        return float(self.breakpoints[-1])

    def interval_index(self, t):
        """Index of the interval containing ``t`` (right-continuous; the last interval is closed)."""
        k = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.clip(k, 0, self.values.shape[0] - 1)

    def __call__(self, t):
        return self.values[self.interval_index(t)]

    def to_dict(self):
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["breakpoints"], data["values"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed forcing description: {exc}") from exc


class ControlPath(ForcingPath):
    """Deterministic piecewise-constant control ``v(t)``."""

    def energy(self):
        """``int ||v(t)||^2 dt`` (exact for piecewise constants)."""
        return float(np.sum(np.diff(self.breakpoints) * np.sum(self.values ** 2, axis=1)))


@dataclass(eq=False)
class PiecewisePath:
    """Continuous piecewise-linear path with per-interval zero flags.

    Invariants (checked on construction):

    * ``zero_flags[k, i]`` implies ``values[k, i] == values[k+1, i] == 0``;
    * otherwise coordinate ``i`` does not vanish inside interval ``k``
      (zeros are allowed at the endpoints only).
    """

    breakpoints: np.ndarray
    values: np.ndarray
    zero_flags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.breakpoints = _increasing(self.breakpoints, "PiecewisePath")
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        r, d = self.values.shape
        if r != self.breakpoints.size:
            raise InputError("one value vector per breakpoint is required")
        if not np.all(np.isfinite(self.values)):
            raise InputError("path values must be finite")
        if self.zero_flags is None:
            self.zero_flags = (self.values[:-1] == 0) & (self.values[1:] == 0)
        self.zero_flags = np.array(self.zero_flags, dtype=bool).reshape(r - 1, d)
        self.validate()

    def validate(self):
        lo, hi = self.values[:-1], self.values[1:]
        for k, i in zip(*np.nonzero(self.zero_flags)):
            if lo[k, i] != 0 or hi[k, i] != 0:
                raise InputError(f"interval {k}, coordinate {i}: zero flag set on nonzero values")
        free = ~self.zero_flags
        crosses = free & (lo * hi < 0)
        both_zero = free & (lo == 0) & (hi == 0)
        for k, i in zip(*np.nonzero(crosses | both_zero)):
            raise InputError(f"interval {k}, coordinate {i}: unflagged coordinate vanishes inside the interval")

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def horizon(self):
        return float(self.breakpoints[-1])

    def slopes(self):
        return np.diff(self.values, axis=0) / np.diff(self.breakpoints)[:, None]

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([np.interp(t, self.breakpoints, self.values[:, i]) for i in range(self.d)], axis=-1)

    def refine(self, extra):
        """Same geometric path with additional breakpoints."""
        extra = np.asarray(extra, dtype=float)
        extra = extra[(extra > 0) & (extra < self.horizon)]
        bp = np.union1d(self.breakpoints, extra)
        vals = self(bp)
        k = np.searchsorted(self.breakpoints, bp[:-1], side="right") - 1
        flags = self.zero_flags[k]
        vals[np.r_[flags, np.zeros((1, self.d), bool)] | np.r_[np.zeros((1, self.d), bool), flags]] = 0.0
        return PiecewisePath(bp, vals, flags)

    @classmethod
    def from_nodes(cls, times, values, pinned=None):
        """Build a valid path from nodal values.

        Zero crossings inside an interval get their own breakpoint, and
        intervals whose two endpoint values are exactly zero are flagged.
        ``pinned`` (shape ``(r-1, d)``) forces intervals to be identically 0.
        """
        times = np.asarray(times, dtype=float)
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if pinned is not None:
            pinned = np.asarray(pinned, dtype=bool)
            values[:-1][pinned] = 0.0
            values[1:][pinned] = 0.0
        lo, hi = values[:-1], values[1:]
        k_idx, i_idx = np.nonzero(lo * hi < 0)
        if k_idx.size == 0:
            return cls(times, values)
        frac = lo[k_idx, i_idx] / (lo[k_idx, i_idx] - hi[k_idx, i_idx])
        t_cross = times[k_idx] + frac * (times[k_idx + 1] - times[k_idx])
        t_cross = t_cross[(t_cross > times[k_idx]) & (t_cross < times[k_idx + 1])]
        bp = np.union1d(times, t_cross)
        vals = np.stack([np.interp(bp, times, values[:, i]) for i in range(values.shape[1])], axis=-1)
        # exact zeros at the inserted crossing points of the coordinates that cross there
        for k, i in zip(k_idx, i_idx):
            a, b = values[k, i], values[k + 1, i]
            tc = times[k] + a / (a - b) * (times[k + 1] - times[k])
            j = int(np.argmin(np.abs(bp - tc)))
            vals[j, i] = 0.0
        return cls(bp, vals)

    def to_dict(self):
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist(),
                "zero_flags": self.zero_flags.tolist()}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["breakpoints"], data["values"], data.get("zero_flags"))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed path description: {exc}") from exc

    def to_json(self):
        return json.dumps(self.to_dict())
