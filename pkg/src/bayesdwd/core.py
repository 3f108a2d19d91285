"""Loss, objective, and mode finding for distance weighted discrimination.

A linear classifier scores sample x as u = beta0 + x'beta.  The DWD loss
charges V(u) = 1 - u for scores at or below the knot u = 1/2 and 1/(4u)
beyond it; V is convex, strictly positive, and continuously differentiable.
This module owns the deterministic core: the loss and its derivative, the
ridge-penalized empirical objective, score evaluation, and a quasi-Newton
solver for the objective's minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

__all__ = [
    "KNOT",
    "Dataset",
    "ModelState",
    "Scores",
    "dwd_loss",
    "dwd_loss_grad",
    "objective",
    "objective_grad",
    "scores",
    "solve_mode",
]

#: Location of the loss's linear-to-reciprocal transition.
KNOT = 0.5


def _loss(u: np.ndarray) -> np.ndarray:
    """V(u) without input validation (hot path)."""
    out = np.asarray(1.0 - u)
    m = u > KNOT
    np.copyto(out, 0.25 / np.where(m, u, 1.0), where=m)
    return out


def _loss_grad(u: np.ndarray) -> np.ndarray:
    """V'(u) without input validation (hot path)."""
    out = np.full_like(u, -1.0)
    m = u > KNOT
    np.copyto(out, -0.25 / np.where(m, u, 1.0) ** 2, where=m)
    return out


def dwd_loss(u):
    """Evaluate the DWD loss V(u) = 1 - u if u <= 1/2, else 1/(4u).

    Parameters
    ----------
    u : float or array_like
        Finite score value(s).

    Returns
    -------
    float or numpy.ndarray
        V(u), elementwise for arrays; always strictly positive.  Ties at
        the knot u = 1/2 take the linear branch.  Both branches agree there
        and both one-sided derivatives equal -1, so V is C^1.
    """
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("dwd_loss requires finite input")
    if arr.ndim == 0:
        return float(_loss(arr.reshape(1))[0])
    return _loss(arr)


def dwd_loss_grad(u):
    """Derivative of the DWD loss: -1 if u <= 1/2, else -1/(4u^2)."""
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("dwd_loss_grad requires finite input")
    if arr.ndim == 0:
        return float(_loss_grad(arr.reshape(1))[0])
    return _loss_grad(arr)


@dataclass(frozen=True, eq=False)
class Dataset:
    """A classification sample with optional unlabeled entries.

    Parameters
    ----------
    X : numpy.ndarray
        Feature matrix of shape (d, n), one sample per column.
    y : numpy.ndarray
        Labels of length n with entries -1.0 or +1.0; NaN marks an
        unlabeled sample.
    P1 : float
        Marginal probability of class +1, strictly inside (0, 1).
    """

    X: np.ndarray
    y: np.ndarray
    P1: float = 0.5

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"X must be a 2-d (d, n) matrix, got ndim={X.ndim}")
        d, n = X.shape
        if d < 1 or n < 1:
            raise ValueError(f"need d >= 1 and n >= 1, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if y.shape != (n,):
            raise ValueError(f"y must have shape ({n},), got {y.shape}")
        labeled = y[~np.isnan(y)]
        if labeled.size and not np.all((labeled == 1.0) | (labeled == -1.0)):
            raise ValueError("labeled entries of y must be -1 or +1")
        P1 = float(self.P1)
        if not (0.0 < P1 < 1.0):
            raise ValueError(f"P1 must lie strictly inside (0, 1), got {self.P1}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "P1", P1)

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def labeled_mask(self) -> np.ndarray:
        return ~np.isnan(self.y)

    @property
    def n_labeled(self) -> int:
        return int(self.labeled_mask.sum())

    @property
    def n_unlabeled(self) -> int:
        return self.n - self.n_labeled

    @property
    def is_fully_labeled(self) -> bool:
        return self.n_labeled == self.n

    def labeled_subset(self) -> "Dataset":
        """The fully labeled restriction of this dataset."""
        m = self.labeled_mask
        if not m.any():
            raise ValueError("dataset has no labeled samples")
        return Dataset(self.X[:, m], self.y[m], self.P1)


@dataclass(frozen=True, eq=False)
class ModelState:
    """Parameter triple: coefficients, intercept, and ridge penalty.

    ``lam`` may be zero for plain objective evaluation but must be positive
    wherever it parameterizes a density.
    """

    beta: np.ndarray
    beta0: float
    lam: float

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a nonempty 1-d vector")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta contains non-finite values")
        beta0 = float(self.beta0)
        lam = float(self.lam)
        if not np.isfinite(beta0):
            raise ValueError("beta0 must be finite")
        if not np.isfinite(lam) or lam < 0.0:
            raise ValueError(f"lam must be finite and >= 0, got {self.lam}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "lam", lam)

    @property
    def d(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True, eq=False)
class Scores:
    """Linear scores u_i = beta0 + x_i'beta and signed scores y_i * u_i.

    ``signed`` is NaN at unlabeled positions (NaN labels propagate).
    """

    u: np.ndarray
    signed: np.ndarray


def _require_fully_labeled(data: Dataset, op: str) -> None:
    if not data.is_fully_labeled:
        raise ValueError(
            f"{op} requires fully labeled data; {data.n_unlabeled} of "
            f"{data.n} samples are unlabeled"
        )


def _require_two_classes(y: np.ndarray, op: str) -> None:
    if not (np.any(y == 1.0) and np.any(y == -1.0)):
        raise ValueError(f"{op} requires at least one sample of each class")


def scores(state: ModelState, data: Dataset) -> Scores:
    """Compute scores u = X'beta + beta0 for every sample.

    The accumulation order is the fixed matrix-vector order of the build's
    BLAS, so repeated calls on the same inputs are bit-identical.
    """
    if state.d != data.d:
        raise ValueError(
            f"state has {state.d} coefficients but data has {data.d} features"
        )
    u = data.X.T @ state.beta + state.beta0
    return Scores(u=u, signed=data.y * u)


def objective(state: ModelState, data: Dataset) -> float:
    """Penalized empirical objective (1/n) sum_i V(y_i u_i) + (lam/2)||beta||^2.

    Requires fully labeled data; ``lam`` is read from ``state``.
    """
    _require_fully_labeled(data, "objective")
    sc = scores(state, data)
    penalty = 0.5 * state.lam * float(state.beta @ state.beta)
    return float(_loss(sc.signed).sum() / data.n + penalty)


def objective_grad(state: ModelState, data: Dataset) -> tuple[np.ndarray, float]:
    """Gradient of `objective` with respect to (beta, beta0).

    Returns
    -------
    grad_beta : numpy.ndarray
        (1/n) sum_i V'(y_i u_i) y_i x_i + lam * beta.
    grad_beta0 : float
        (1/n) sum_i V'(y_i u_i) y_i.
    """
    _require_fully_labeled(data, "objective_grad")
    sc = scores(state, data)
    w = _loss_grad(sc.signed) * data.y / data.n
    return data.X @ w + state.lam * state.beta, float(w.sum())


def _objective_fg(X: np.ndarray, y: np.ndarray, lam: float, fixed_beta0=None):
    """Closure computing (value, gradient) of the objective.

    Over z = [beta, beta0] by default; with ``fixed_beta0`` the intercept
    is held constant and z holds the coefficients only.
    """
    n = X.shape[1]

    if fixed_beta0 is not None:
        b0 = float(fixed_beta0)

        def fg_constrained(z: np.ndarray) -> tuple[float, np.ndarray]:
            signed = y * (X.T @ z + b0)
            f = _loss(signed).sum() / n + 0.5 * lam * float(z @ z)
            w = _loss_grad(signed) * y / n
            return float(f), X @ w + lam * z

        return fg_constrained

    def fg(z: np.ndarray) -> tuple[float, np.ndarray]:
        beta = z[:-1]
        signed = y * (X.T @ beta + z[-1])
        f = _loss(signed).sum() / n + 0.5 * lam * float(beta @ beta)
        w = _loss_grad(signed) * y / n
        g = np.empty_like(z)
        g[:-1] = X @ w + lam * beta
        g[-1] = w.sum()
        return float(f), g

    return fg


def _two_loop_direction(g, s_hist, y_hist, rho_hist):
    """L-BFGS two-loop recursion; returns the search direction."""
    q = g.copy()
    alphas = []
    for s, yv, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * float(s @ q)
        q -= a * yv
        alphas.append(a)
    gamma = float(s_hist[-1] @ y_hist[-1]) / float(y_hist[-1] @ y_hist[-1])
    q *= gamma
    for (s, yv, rho), a in zip(
        zip(s_hist, y_hist, rho_hist), reversed(alphas)
    ):
        b = rho * float(yv @ q)
        q += s * (a - b)
    return -q


def solve_mode(
    data: Dataset,
    lam: float,
    tol: float = 1e-10,
    max_iter: int = 50_000,
    *,
    init: ModelState | None = None,
    fixed_beta0: float | None = None,
) -> ModelState:
    """Minimize the penalized objective over (beta, beta0).

    Uses limited-memory BFGS with Armijo backtracking, which handles the
    loss's C^1-but-not-C^2 knot.  Iteration stops once the objective
    decrease over one step falls below ``tol`` and the gradient norm is at
    most ``10 * tol``.

    Parameters
    ----------
    data : Dataset
        Fully labeled data containing at least one sample of each class.
    lam : float
        Ridge penalty.  Zero is accepted only when d < n and the design has
        full row rank; the minimizer can be unbounded otherwise.
    tol : float
        Objective-decrease tolerance.
    max_iter : int
        Iteration budget; exceeding it raises `ConvergenceError` carrying
        the best iterate found.
    init : ModelState, optional
        Warm start; defaults to the origin.
    fixed_beta0 : float, optional
        Hold the intercept at this value and minimize over beta alone.
        Useful when the intercept is known (e.g. balanced classes about
        the origin); the returned state carries the pinned value.

    Returns
    -------
    ModelState
        The minimizer, with ``lam`` recorded on the state.
    """
    _require_fully_labeled(data, "solve_mode")
    _require_two_classes(data.y, "solve_mode")
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0.0:
        raise ValueError(f"lam must be finite and >= 0, got {lam}")
    if lam == 0.0:
        if data.d >= data.n:
            raise ValueError("lam = 0 requires d < n")
        if np.linalg.matrix_rank(data.X) < data.d:
            raise ValueError("lam = 0 requires a full-rank design")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if fixed_beta0 is not None and not np.isfinite(fixed_beta0):
        raise ValueError("fixed_beta0 must be finite")

    fg = _objective_fg(data.X, data.y, lam, fixed_beta0)
    if fixed_beta0 is None:
        def to_state(zv: np.ndarray) -> ModelState:
            return ModelState(zv[:-1].copy(), float(zv[-1]), lam)
    else:
        def to_state(zv: np.ndarray) -> ModelState:
            return ModelState(zv.copy(), float(fixed_beta0), lam)

    n_free = data.d + (1 if fixed_beta0 is None else 0)
    if init is None:
        z = np.zeros(n_free)
    else:
        if init.d != data.d:
            raise ValueError("init has the wrong number of coefficients")
        if fixed_beta0 is None:
            z = np.concatenate([init.beta, [init.beta0]])
        else:
            z = init.beta.astype(float).copy()
    f, g = fg(z)
    gnorm = float(np.linalg.norm(g))
    best_f, best_z = f, z.copy()
    gtol = 10.0 * tol
    # Objective differences smaller than this are float noise; near the
    # minimizer the line search switches to driving the gradient down.
    f_flat = 4.0 * np.finfo(float).eps
    memory = 10
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []

    for _ in range(max_iter):
        if s_hist:
            direction = _two_loop_direction(g, s_hist, y_hist, rho_hist)
        else:
            direction = -g / max(1.0, gnorm)
        gd = float(g @ direction)
        if not np.isfinite(gd) or gd >= 0.0:
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()
            direction = -g
            gd = -float(g @ g)

        step = 1.0
        accepted = False
        for _ in range(80):
            z_new = z + step * direction
            f_new, g_new = fg(z_new)
            if f_new < f and f_new <= f + 1e-4 * step * gd:
                accepted = True
                break
            # Once the objective is flat at float resolution, a step still
            # counts if it shrinks the gradient instead.
            if (
                f_new <= f + f_flat * max(1.0, abs(f))
                and float(np.linalg.norm(g_new)) <= 0.9 * gnorm
            ):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if s_hist:
                # Stale curvature pairs; retry from steepest descent.
                s_hist.clear()
                y_hist.clear()
                rho_hist.clear()
                continue
            # Even steepest descent cannot improve at float resolution.
            if gnorm <= gtol:
                break
            raise ConvergenceError(
                "line search stalled before reaching the gradient tolerance",
                best=to_state(best_z),
            )

        s = z_new - z
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(yv)):
            s_hist.append(s)
            y_hist.append(yv)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)

        decrease = f - f_new
        z, f, g = z_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        if f < best_f:
            best_f, best_z = f, z.copy()
        if decrease < tol and gnorm <= gtol:
            break
    else:
        raise ConvergenceError(
            f"no convergence within {max_iter} iterations",
            best=to_state(best_z),
        )

    # The loop ends at a point whose objective ties the best seen to float
    # precision but whose gradient is fully polished; return that point.
    return to_state(z)
