"""
The lasso instance, its discontinuous drift and a reference solver.

The drift of the lasso diffusion is ``b(x) = -(A^T(Ax - y) + mu*sgn(x))`` where
``sgn(0)`` is any element of ``[-1, 1]``.  Away from ``x_i = 0`` coordinate
``i`` follows one of two smooth branches::

    b1_i(x) = -g_i(x) + mu      (side 1, x_i <= 0)
    b2_i(x) = -g_i(x) - mu      (side 2, x_i > 0)

with ``g = A^T(Ax - y)``.  A coordinate sitting at zero stays there while
``b1_i >= 0 >= b2_i``, i.e. ``|g_i| <= mu``.
"""
from dataclasses import dataclass
import json

import numpy as np

from .exceptions import ConvergenceError, InputError

__all__ = [
    "Problem",
    "residual_gradient",
    "drift",
    "branch_drift",
    "sticking_set",
    "soft_threshold",
    "lasso_objective",
    "lasso_solve",
    "kkt_residual",
    "LassoResult",
]


def smooth_gradient_batch(A, y, X):
    """Evaluate ``A^T(A x - y)`` for every row of ``X`` (shape ``(..., d)``).

    The sums run in a fixed order with elementwise numpy operations so that a
    row gives bit-identical output whatever the batch it belongs to.
    """
    n, d = A.shape
    out = np.zeros(X.shape, dtype=float)
    for r in range(n):
        res = -y[r] + A[r, 0] * X[..., 0]
        for j in range(1, d):
            res = res + A[r, j] * X[..., j]
        for j in range(d):
            out[..., j] += A[r, j] * res
    return out


@dataclass(frozen=True, eq=False)
class Problem:
    """Lasso data ``(A, y, mu)``.

    Parameters
    ----------
    A : array_like, shape (n, d)
    y : array_like, shape (n,)
    mu : float
        Penalty weight, strictly positive.
    """

    A: np.ndarray
    y: np.ndarray
    mu: float

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        y = np.array(self.y, dtype=float, ndmin=1)
        if A.ndim != 2 or y.ndim != 1:
            raise InputError("A must be a matrix and y a vector")
        if A.shape[0] < 1 or A.shape[1] < 1:
            raise InputError("A must have at least one row and one column")
        if A.shape[0] != y.shape[0]:
            raise InputError(f"A has {A.shape[0]} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
            raise InputError("A and y must be finite")
        mu = float(self.mu)
        if not (np.isfinite(mu) and mu > 0):
            raise InputError(f"mu must be a positive finite number, got {self.mu!r}")
        A.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "mu", mu)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.A.shape[1]

    def check_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        if x.shape[-1] != self.d:
            raise InputError(f"expected points of dimension {self.d}, got shape {x.shape}")
        return x

    def smooth_gradient(self, x):
        x = self.check_point(x)
        return (x @ self.A.T - self.y) @ self.A

    def branch_drifts(self, x, t=None):
        """Return ``(b1, b2)`` at ``x``; ``t`` is ignored (autonomous drift)."""
        g = self.smooth_gradient(x)
        return -g + self.mu, -g - self.mu

    def time_breaks(self):
        """Times where the drift changes form; none for an autonomous problem."""
        return ()

    def objective(self, x):
        return lasso_objective(self, x)

    def to_dict(self):
        return {"A": self.A.tolist(), "y": self.y.tolist(), "mu": self.mu}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(A=data["A"], y=data["y"], mu=data["mu"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed problem description: {exc}") from exc

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def residual_gradient(P, x):
    """Smooth part ``g = A^T(Ax - y)`` of the subdifferential."""
    return P.smooth_gradient(x)


def _sign_with_zero(x):
    return np.where(x > 0, 1.0, np.where(x < 0, -1.0, 0.0))


def drift(P, x, s):
    """Drift ``-g - mu*s`` for a selection ``s`` of ``sgn(x)``.

    Raises `InputError` when ``s`` is outside ``[-1, 1]`` or disagrees with
    the sign of a nonzero coordinate.
    """
    x = P.check_point(x)
    s = np.asarray(s, dtype=float).reshape(x.shape)
    if np.any(np.abs(s) > 1):
        raise InputError("sign selection must lie in [-1, 1]")
    nz = x != 0
    if np.any(s[nz] != _sign_with_zero(x[nz])):
        raise InputError("sign selection disagrees with sign(x) on a nonzero coordinate")
    return -P.smooth_gradient(x) - P.mu * s


def branch_drift(P, x, i, side):
    """One-sided drift of coordinate ``i``: side 1 is ``x_i <= 0``, side 2 is ``x_i > 0``."""
    if side not in (1, 2):
        raise InputError(f"side must be 1 or 2, got {side!r}")
    if not 0 <= i < P.d:
        raise InputError(f"coordinate index {i} out of range for d={P.d}")
    g = P.smooth_gradient(x)[..., i]
    return -g + P.mu if side == 1 else -g - P.mu


def sticking_set(P, x, tol_zero):
    """Indices that are (numerically) zero and satisfy ``|g_i| <= mu``."""
    if not tol_zero > 0:
        raise InputError("tol_zero must be positive")
    x = P.check_point(x)
    g = P.smooth_gradient(x)
    return {int(i) for i in np.flatnonzero((np.abs(x) <= tol_zero) & (np.abs(g) <= P.mu))}


def soft_threshold(z, thresh):
    """Proximal map of ``thresh*||.||_1``; maps small entries to an exact 0."""
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)


def lasso_objective(P, x):
    x = P.check_point(x)
    r = P.A @ x - P.y
    return 0.5 * float(r @ r) + P.mu * float(np.abs(x).sum())


def kkt_residual(P, x):
    """Violation of the lasso optimality system.

    Zero coordinates are tested for exact equality; the proximal solver
    produces exact zeros, so no tolerance is applied here.
    """
    x = P.check_point(x)
    g = P.smooth_gradient(x)
    at_zero = x == 0
    viol = np.where(at_zero, np.maximum(np.abs(g) - P.mu, 0.0), np.abs(g + P.mu * np.sign(x)))
    return float(viol.max())


def _largest_eigenvalue(M, iters=50):
    # fixed, non-degenerate start vector keeps the result deterministic
    v = np.linspace(1.0, 2.0, M.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = M @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        lam = float(v @ w)
        v = w / nrm
    return max(lam, float(np.linalg.norm(M @ v)))


@dataclass(frozen=True)
class LassoResult:
    x: np.ndarray
    residual: float
    iterations: int


def lasso_solve(P, tol=1e-10, max_iter=100_000, x0=None, return_info=False):
    """Minimise ``0.5*||Ax - y||^2 + mu*||x||_1`` by proximal gradient.

    The step is ``1/L`` with ``L`` the largest eigenvalue of ``A^T A`` from 50
    power iterations.  Iterates until `kkt_residual` drops to ``tol``.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` iterations do not reach ``tol``.
    """
    if not tol > 0:
        raise InputError("tol must be positive")
    if max_iter < 1:
        raise InputError("max_iter must be at least 1")
    L = _largest_eigenvalue(P.A.T @ P.A)
    x = np.zeros(P.d) if x0 is None else P.check_point(x0).astype(float).copy()
    if L == 0.0:
        # A = 0: the objective is mu*||x||_1
        x = np.zeros(P.d)
        res = kkt_residual(P, x)
        return LassoResult(x, res, 0) if return_info else x
    step = 1.0 / L
    res = kkt_residual(P, x)
    it = 0
    while res > tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"lasso_solve: residual {res:.3e} > tol {tol:.3e} after {it} iterations",
                x=x, residual=res, iterations=it)
        x = soft_threshold(x - step * P.smooth_gradient(x), step * P.mu)
        res = kkt_residual(P, x)
        it += 1
    return LassoResult(x, res, it) if return_info else x
