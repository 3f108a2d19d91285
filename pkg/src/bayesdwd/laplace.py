"""Asymptotic-normal posterior approximation and bootstrap intervals.

Two non-MCMC interval constructions around the penalized-loss minimizer:
a Gaussian approximation whose covariance inverts the curvature of the
exact log posterior at the mode, and percentile intervals over
nonparametric bootstrap refits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import ndtri

from .core import KNOT, Dataset, ModelState, scores, solve_mode
from .errors import NumericalError, ResourceBudgetError
from .rng import substream

__all__ = [
    "BootstrapResult",
    "IntervalTable",
    "LaplaceApprox",
    "bootstrap_intervals",
    "laplace_curvature",
    "laplace_fit",
    "laplace_intervals",
]


@dataclass(frozen=True, eq=False)
class IntervalTable:
    """Named point estimates with lower/upper interval endpoints.

    Parameter names follow the convention ``beta_1..beta_d``, ``beta0``,
    ``score_1..score_m`` so interval tables from different methods can be
    joined on the name column.
    """

    params: tuple[str, ...]
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    method: str

    def __post_init__(self):
        k = len(self.params)
        for name in ("estimate", "lower", "upper"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (k,):
                raise ValueError(f"{name} must have shape ({k},), got {arr.shape}")
            object.__setattr__(self, name, arr)
        if np.any(self.lower > self.upper):
            raise ValueError("every interval needs lower <= upper")

    def __len__(self) -> int:
        return len(self.params)

    def select(self, prefix: str) -> "IntervalTable":
        """Sub-table of parameters whose name starts with ``prefix``."""
        keep = [i for i, p in enumerate(self.params) if p.startswith(prefix)]
        return IntervalTable(
            params=tuple(self.params[i] for i in keep),
            estimate=self.estimate[keep],
            lower=self.lower[keep],
            upper=self.upper[keep],
            method=self.method,
        )

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def covers(self, truth: np.ndarray) -> np.ndarray:
        """Elementwise indicator that truth lies in the closed interval."""
        truth = np.asarray(truth, dtype=float)
        if truth.shape != (len(self),):
            raise ValueError(f"truth must have shape ({len(self)},)")
        return (self.lower <= truth) & (truth <= self.upper)


@dataclass(frozen=True, eq=False)
class LaplaceApprox:
    """Gaussian posterior approximation centred at the mode.

    ``cov_beta`` is the inverse of the curvature of the negative
    unnormalized log posterior in the coefficients at the mode, holding the
    intercept fixed; ``active_set`` lists the samples whose signed score
    strictly exceeds the loss knot (only they contribute curvature).
    ``var_beta0`` is populated only by the extended fit, which augments the
    curvature with the intercept row and column.
    """

    mode: ModelState
    cov_beta: np.ndarray
    active_set: np.ndarray
    var_beta0: float | None = None

    def __post_init__(self):
        d = self.mode.d
        cov = np.asarray(self.cov_beta, dtype=float)
        if cov.shape != (d, d):
            raise ValueError(f"cov_beta must be {d}x{d}, got {cov.shape}")
        if not np.all(np.isfinite(cov)):
            raise ValueError("cov_beta must be finite")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise ValueError("cov_beta must be symmetric to 1e-12")
        if np.any(np.diag(cov) <= 0.0):
            raise ValueError("cov_beta must have positive diagonal")
        if self.var_beta0 is not None and self.var_beta0 <= 0.0:
            raise ValueError("var_beta0 must be positive")
        object.__setattr__(self, "cov_beta", cov)
        object.__setattr__(
            self, "active_set", np.asarray(self.active_set, dtype=int)
        )


def laplace_curvature(
    data: Dataset, state: ModelState
) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient-block curvature of the negative log posterior at ``state``.

    Returns (H, active) with H = sum over active samples of
    x_i x_i^T / (2 * s_i^3) plus n*lam*I, where s_i is the signed score and
    the active set keeps s_i strictly above the loss knot (the loss has
    zero curvature on its linear branch, so the others drop out).
    """
    if not data.is_fully_labeled:
        raise ValueError("curvature requires fully labeled data")
    if state.lam <= 0.0:
        raise ValueError("curvature requires lam > 0")
    signed = scores(state, data).signed
    active = np.flatnonzero(signed > KNOT)
    H = data.n * state.lam * np.eye(data.d)
    if active.size:
        Xa = data.X[:, active]
        w = 1.0 / (2.0 * signed[active] ** 3)
        H += (Xa * w) @ Xa.T
    return H, active


def _inverse_spd(H: np.ndarray) -> np.ndarray:
    """Invert a symmetric positive-definite matrix via Cholesky."""
    try:
        factor = cho_factor(H, lower=True)
    except LinAlgError as exc:
        raise NumericalError(f"curvature factorization failed: {exc}") from exc
    cov = cho_solve(factor, np.eye(H.shape[0]))
    return (cov + cov.T) / 2.0


def laplace_fit(
    data: Dataset,
    lam: float,
    *,
    extended: bool = False,
    fixed_beta0: float | None = None,
) -> LaplaceApprox:
    """Gaussian approximation of the posterior at fixed penalty.

    Fits the mode with `solve_mode`, then inverts the analytic curvature
    (via Cholesky, never explicit cofactor inversion).  With
    ``extended=True`` the curvature matrix additionally gets an intercept
    row and column, filled by central finite differences of the analytic
    gradient, and the intercept variance is read off the joint inverse;
    the coefficient covariance itself is unchanged, keeping interval
    semantics identical in both modes.  ``fixed_beta0`` pins the intercept
    during the mode fit (incompatible with ``extended``, which exists to
    quantify intercept uncertainty).
    """
    if extended and fixed_beta0 is not None:
        raise ValueError("extended mode quantifies intercept uncertainty; "
                         "it cannot be combined with a fixed intercept")
    mode = solve_mode(data, lam, fixed_beta0=fixed_beta0)
    H, active = laplace_curvature(data, mode)
    cov_beta = _inverse_spd(H)

    var_beta0 = None
    if extended:
        from .core import objective_grad

        h = 1e-6 * max(1.0, abs(mode.beta0))
        gp = objective_grad(ModelState(mode.beta, mode.beta0 + h, lam), data)
        gm = objective_grad(ModelState(mode.beta, mode.beta0 - h, lam), data)
        cross = data.n * (gp[0] - gm[0]) / (2.0 * h)
        corner = data.n * (gp[1] - gm[1]) / (2.0 * h)
        joint = np.empty((data.d + 1, data.d + 1))
        joint[: data.d, : data.d] = H
        joint[: data.d, -1] = cross
        joint[-1, : data.d] = cross
        joint[-1, -1] = corner
        var_beta0 = float(_inverse_spd((joint + joint.T) / 2.0)[-1, -1])

    return LaplaceApprox(
        mode=mode, cov_beta=cov_beta, active_set=active, var_beta0=var_beta0
    )


def laplace_intervals(
    approx: LaplaceApprox,
    level: float = 0.95,
    newX: np.ndarray | None = None,
) -> IntervalTable:
    """Normal-quantile intervals from a Gaussian posterior approximation.

    Coefficient j gets mode_j +- z*sqrt(cov[j, j]) with z the standard
    normal quantile at (1+level)/2.  When ``newX`` (d x m, samples in
    columns) is given, each column's score gets x^T mode.beta + mode.beta0
    +- z*sqrt(x^T cov x): the intercept is held fixed at its modal value,
    so score uncertainty reflects the coefficients only.  An intercept row
    appears only when the approximation carries ``var_beta0``.
    """
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must lie strictly inside (0, 1), got {level}")
    z = float(ndtri((1.0 + level) / 2.0))
    d = approx.mode.d

    params = [f"beta_{j + 1}" for j in range(d)]
    est = list(approx.mode.beta)
    sd = list(np.sqrt(np.diag(approx.cov_beta)))
    if approx.var_beta0 is not None:
        params.append("beta0")
        est.append(approx.mode.beta0)
        sd.append(float(np.sqrt(approx.var_beta0)))
    if newX is not None:
        newX = np.asarray(newX, dtype=float)
        if newX.ndim != 2 or newX.shape[0] != d:
            raise ValueError(f"newX must have shape ({d}, m), got {newX.shape}")
        u = newX.T @ approx.mode.beta + approx.mode.beta0
        var_u = np.einsum("ij,jk,ik->i", newX.T, approx.cov_beta, newX.T)
        params += [f"score_{i + 1}" for i in range(newX.shape[1])]
        est += list(u)
        sd += list(np.sqrt(np.maximum(var_u, 0.0)))

    est = np.array(est)
    sd = np.array(sd)
    return IntervalTable(
        params=tuple(params),
        estimate=est,
        lower=est - z * sd,
        upper=est + z * sd,
        method="clt",
    )


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Percentile intervals plus the raw refit replicates.

    ``replicates`` has one row per resample, columns beta_1..beta_d, beta0.
    ``n_redraws`` counts resamples rejected for containing a single class.
    """

    intervals: IntervalTable
    replicates: np.ndarray
    n_redraws: int


def bootstrap_intervals(
    data: Dataset,
    lam: float,
    B: int = 200,
    level: float = 0.95,
    seed: int = 0,
    *,
    fixed_beta0: float | None = None,
) -> BootstrapResult:
    """Percentile intervals over nonparametric bootstrap refits.

    Draws ``B`` resamples of size n with replacement, refits the mode on
    each (warm-started at the full-data mode), and reports the empirical
    (1 -+ level)/2 quantiles for every coefficient, the intercept, and the
    in-sample scores at the original X.  Single-class resamples are redrawn
    and counted; exceeding 100*B total redraws raises an error.  Resample
    b uses its own RNG substream, so results do not depend on evaluation
    order.  ``fixed_beta0`` pins the intercept in every refit, so its row
    in the table degenerates to a point.
    """
    if B < 2:
        raise ValueError(f"need B >= 2 resamples, got {B}")
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must lie strictly inside (0, 1), got {level}")
    if not data.is_fully_labeled:
        raise ValueError("bootstrap requires fully labeled data")

    full_mode = solve_mode(data, lam, fixed_beta0=fixed_beta0)
    n, d = data.n, data.d
    replicates = np.empty((B, d + 1))
    n_redraws = 0
    for b in range(B):
        rng = substream(seed, "boot", b)
        while True:
            idx = rng.integers(0, n, size=n)
            yb = data.y[idx]
            if np.any(yb > 0) and np.any(yb < 0):
                break
            n_redraws += 1
            if n_redraws > 100 * B:
                raise ResourceBudgetError(
                    f"exceeded {100 * B} single-class redraws; "
                    f"labels too unbalanced for bootstrap"
                )
        boot_data = Dataset(data.X[:, idx], yb, P1=data.P1)
        fit = solve_mode(
            boot_data,
            lam,
            init=ModelState(full_mode.beta, full_mode.beta0, lam),
            fixed_beta0=fixed_beta0,
        )
        replicates[b, :d] = fit.beta
        replicates[b, d] = fit.beta0

    q = [(1.0 - level) / 2.0, (1.0 + level) / 2.0]
    U = replicates[:, :d] @ data.X + replicates[:, d:]  # (B, n) scores
    samples = np.hstack([replicates, U])
    lo, hi = np.quantile(samples, q, axis=0)
    params = (
        [f"beta_{j + 1}" for j in range(d)]
        + ["beta0"]
        + [f"score_{i + 1}" for i in range(n)]
    )
    full_u = scores(full_mode, data).u
    est = np.concatenate([full_mode.beta, [full_mode.beta0], full_u])
    intervals = IntervalTable(
        params=tuple(params),
        estimate=est,
        lower=lo,
        upper=hi,
        method="boot",
    )
    return BootstrapResult(
        intervals=intervals, replicates=replicates, n_redraws=n_redraws
    )
