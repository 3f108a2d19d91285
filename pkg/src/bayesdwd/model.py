"""Probability model built on the DWD loss.

The unnormalized posterior is exp(-n * objective) on fully labeled data;
unlabeled samples contribute a two-class mixture term instead of a loss
term.  The same mixture terms, taken over every sample, form the
data-dependent coefficient prior, whose normalizing integral over beta is
the function phi estimated here by Monte Carlo on a log-spaced penalty grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit, logsumexp

from .core import Dataset, ModelState, _loss, objective, scores
from .errors import ResourceBudgetError
from .rng import substream

__all__ = [
    "LambdaPrior",
    "PhiTable",
    "class_probability",
    "estimate_phi_table",
    "log_lambda_conditional",
    "log_phi_interp",
    "log_posterior",
    "log_prior_beta",
    "prior_score_term",
]


def class_probability(u, P1):
    """Class-+1 probability of a score under the exp(-loss) link.

    Evaluates P1 e^{-V(u)} / (P1 e^{-V(u)} + (1-P1) e^{-V(-u)}) in the
    overflow-safe form expit(logit(P1) + V(-u) - V(u)).  Strictly
    increasing in u with range inside (0, 1).

    Parameters
    ----------
    u : float or array_like
        Finite score value(s).
    P1 : float
        Marginal probability of class +1, strictly inside (0, 1).

    Returns
    -------
    float or numpy.ndarray
    """
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("class_probability requires finite scores")
    if not (0.0 < P1 < 1.0):
        raise ValueError(f"P1 must lie strictly inside (0, 1), got {P1}")
    out = expit(logit(P1) + _loss(-arr) - _loss(arr))
    return float(out) if arr.ndim == 0 else out


def prior_score_term(u):
    """Per-sample prior factor f(u) = e^{-V(u)} + e^{-V(-u)}.

    Symmetric in u and minimized at u = 0, where it equals 2/e: the prior
    rewards coefficient directions that spread the scores away from zero.
    """
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("prior_score_term requires finite input")
    out = np.exp(-_loss(arr)) + np.exp(-_loss(-arr))
    return float(out) if arr.ndim == 0 else out


def _mixture_logterms(u: np.ndarray, P1: float) -> np.ndarray:
    """log(P1 e^{-V(u)} + (1-P1) e^{-V(-u)}) elementwise (hot path)."""
    return np.logaddexp(math.log(P1) - _loss(u), math.log1p(-P1) - _loss(-u))


def log_posterior(state: ModelState, data: Dataset) -> float:
    """Log of the unnormalized posterior density of (beta, beta0).

    Labeled samples contribute -V(y_i u_i); unlabeled samples contribute
    the log mixture log(P1 e^{-V(u_i)} + (1-P1) e^{-V(-u_i)}); the ridge
    term is -(lam n / 2)||beta||^2 with n counting all samples.  On fully
    labeled data this is computed as -n * objective(state, data), making
    the identity with the objective exact rather than merely close.
    """
    if data.n_labeled == 0:
        raise ValueError(
            "log_posterior requires at least one labeled sample; "
            "use log_prior_beta for fully unlabeled data"
        )
    if data.is_fully_labeled:
        return -data.n * objective(state, data)
    u = scores(state, data).u
    m = data.labeled_mask
    ll = -_loss(data.y[m] * u[m]).sum()
    ll += _mixture_logterms(u[~m], data.P1).sum()
    penalty = 0.5 * state.lam * data.n * float(state.beta @ state.beta)
    return float(ll - penalty)


def log_prior_beta(state: ModelState, data: Dataset) -> float:
    """Log of the unnormalized coefficient prior given beta0 and lam.

    Sum over every sample (labels are irrelevant to the prior) of the log
    mixture term, minus (lam n / 2)||beta||^2.  Equals what `log_posterior`
    would return with all labels removed.
    """
    if state.lam <= 0.0:
        raise ValueError("log_prior_beta requires lam > 0")
    u = scores(state, data).u
    penalty = 0.5 * state.lam * data.n * float(state.beta @ state.beta)
    return float(_mixture_logterms(u, data.P1).sum() - penalty)


@dataclass(frozen=True)
class LambdaPrior:
    """Uniform prior on the ridge penalty with support [lower, upper]."""

    lower: float = 1.0 / 128.0
    upper: float = 128.0

    def __post_init__(self):
        if not (0.0 < self.lower < self.upper) or not np.isfinite(self.upper):
            raise ValueError(
                f"need 0 < lower < upper < inf, got ({self.lower}, {self.upper})"
            )

    def contains(self, lam: float) -> bool:
        return self.lower <= lam <= self.upper

    def log_density(self, lam: float) -> float:
        if not self.contains(lam):
            return -math.inf
        return -math.log(self.upper - self.lower)

    def grid(self, size: int) -> np.ndarray:
        """Log-equispaced grid spanning the support."""
        if size < 2:
            raise ValueError("grid needs at least 2 points")
        return np.geomspace(self.lower, self.upper, size)


_PHI_TABLE_VERSION = 1


@dataclass(frozen=True, eq=False)
class PhiTable:
    """Tabulated log normalizer of the coefficient prior on a penalty grid.

    Attributes
    ----------
    lambda_grid : numpy.ndarray
        Strictly increasing, log-equispaced penalty values.
    log_phi : numpy.ndarray
        Estimated log phi at each grid value.
    mc_samples : int
        Monte Carlo draws used per grid point.
    beta0_ref : float
        Intercept the table was built at; phi varies slowly in the
        intercept, so the table is built once and held fixed.
    seed : int
        Base seed of the per-grid-point substreams.
    """

    lambda_grid: np.ndarray
    log_phi: np.ndarray
    mc_samples: int
    beta0_ref: float
    seed: int = 0

    def __post_init__(self):
        grid = np.asarray(self.lambda_grid, dtype=float)
        log_phi = np.asarray(self.log_phi, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("lambda_grid needs at least 2 points")
        if np.any(grid <= 0.0) or np.any(np.diff(grid) <= 0.0):
            raise ValueError("lambda_grid must be positive and strictly increasing")
        steps = np.diff(np.log(grid))
        if not np.allclose(steps, steps[0], rtol=1e-8, atol=1e-12):
            raise ValueError("lambda_grid must be equally spaced on the log scale")
        if log_phi.shape != grid.shape or not np.all(np.isfinite(log_phi)):
            raise ValueError("log_phi must be finite and match lambda_grid")
        if int(self.mc_samples) < 1:
            raise ValueError("mc_samples must be >= 1")
        object.__setattr__(self, "lambda_grid", grid)
        object.__setattr__(self, "log_phi", log_phi)
        object.__setattr__(self, "mc_samples", int(self.mc_samples))
        object.__setattr__(self, "beta0_ref", float(self.beta0_ref))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def lambda_min(self) -> float:
        return float(self.lambda_grid[0])

    @property
    def lambda_max(self) -> float:
        return float(self.lambda_grid[-1])

    def covers(self, lam: float) -> bool:
        return self.lambda_min <= lam <= self.lambda_max

    def to_json(self) -> str:
        doc = {
            "version": _PHI_TABLE_VERSION,
            "lambda_grid": self.lambda_grid.tolist(),
            "log_phi": self.log_phi.tolist(),
            "mc_samples": self.mc_samples,
            "beta0_ref": self.beta0_ref,
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "PhiTable":
        doc = json.loads(text)
        version = doc.get("version")
        if version != _PHI_TABLE_VERSION:
            raise ValueError(f"unsupported PhiTable version: {version!r}")
        return PhiTable(
            lambda_grid=np.asarray(doc["lambda_grid"], dtype=float),
            log_phi=np.asarray(doc["log_phi"], dtype=float),
            mc_samples=doc["mc_samples"],
            beta0_ref=doc["beta0_ref"],
            seed=doc["seed"],
        )


def estimate_phi_table(
    data: Dataset,
    prior: LambdaPrior,
    beta0: float,
    J: int = 25,
    T: int = 500,
    seed: int = 0,
    *,
    work_budget: int = 2_000_000,
) -> PhiTable:
    """Monte Carlo estimate of log phi on a log-spaced penalty grid.

    phi(lam) integrates the product of per-sample mixture terms against a
    spherical Gaussian with per-coordinate variance 1/(n lam).  Each grid
    point draws T coefficient vectors from that Gaussian and averages the
    product, accumulated entirely in log space:

        log phi_j = (d/2) log(2 pi / (n lam_j))
                    + logsumexp_t( sum_i log mixture(u_it) ) - log T.

    Grid points use independent, deterministic substreams of ``seed``, so
    the table is reproducible and independent of evaluation order.

    Parameters
    ----------
    data : Dataset
        Features and class-+1 marginal; labels are ignored.
    prior : LambdaPrior
        Support to span with the grid.
    beta0 : float
        Intercept at which scores are evaluated (recorded on the table).
    J : int
        Number of grid points (>= 2).
    T : int
        Monte Carlo draws per grid point (>= 1).
    seed : int
        Base seed for the per-point substreams.
    work_budget : int
        Upper bound on J * T; exceeding it raises `ResourceBudgetError`.
    """
    if J < 2:
        raise ValueError("J must be >= 2")
    if T < 1:
        raise ValueError("T must be >= 1")
    if J * T > work_budget:
        raise ResourceBudgetError(
            f"J * T = {J * T} exceeds the work budget of {work_budget}"
        )
    beta0 = float(beta0)
    if not np.isfinite(beta0):
        raise ValueError("beta0 must be finite")
    grid = prior.grid(J)
    log_phi = np.empty(J)
    n, d = data.n, data.d
    for j, lam in enumerate(grid):
        rng = substream(seed, "phi", j)
        draws = rng.standard_normal((T, d)) / math.sqrt(n * lam)
        u = beta0 + draws @ data.X  # (T, n) scores
        terms = _mixture_logterms(u, data.P1).sum(axis=1)
        prefactor = 0.5 * d * math.log(2.0 * math.pi / (n * lam))
        log_phi[j] = prefactor + logsumexp(terms) - math.log(T)
    return PhiTable(grid, log_phi, T, beta0, seed)


def log_phi_interp(table: PhiTable, lam: float) -> float:
    """Piecewise-linear interpolation of log phi in log lambda.

    Exact at grid nodes.  Queries outside the grid range raise; the table
    is never extrapolated.
    """
    lam = float(lam)
    if not table.covers(lam):
        raise ValueError(
            f"lam = {lam} outside the table range "
            f"[{table.lambda_min}, {table.lambda_max}]"
        )
    return float(
        np.interp(math.log(lam), np.log(table.lambda_grid), table.log_phi)
    )


def log_lambda_conditional(
    state: ModelState,
    data: Dataset,
    prior: LambdaPrior,
    table: PhiTable,
) -> float:
    """Log conditional density of the penalty given (beta, beta0), up to a constant.

    log p(lam) + sum_i log mixture(u_i) - log phi(lam) - (lam n / 2)||beta||^2,
    with lam read from ``state``.  Outside the prior support or the table
    range the density is zero: returns -inf rather than raising, so a
    sampler can treat out-of-range proposals as ordinary rejections.  The
    log-scale proposal Jacobian belongs to the sampler, not to this density.
    """
    lam = state.lam
    if not (prior.contains(lam) and table.covers(lam)):
        return -math.inf
    return (
        prior.log_density(lam)
        + log_prior_beta(state, data)
        - log_phi_interp(table, lam)
    )
