"""Adaptive Metropolis-in-Gibbs sampling of the classifier posterior.

Each cycle sweeps the coefficients in fixed order with coordinate-wise
random-walk Metropolis steps, then updates the intercept, then (optionally)
the penalty via a log-scale random walk against its tabulated conditional,
and finally adapts the coordinate proposal scale to half the sample
variance of the current coefficient vector.  Scores are maintained
incrementally — an accepted coordinate move adjusts the cached score vector
by delta * x_row — with periodic full recomputation to bound float drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .core import Dataset, ModelState, _loss, solve_mode
from .errors import NumericalError
from .model import (
    LambdaPrior,
    PhiTable,
    class_probability,
    log_phi_interp,
    log_posterior,
    log_prior_beta,
)
from .rng import substream

__all__ = [
    "ChainSummary",
    "PosteriorDraws",
    "SamplerConfig",
    "potential_scale_reduction",
    "predict_label",
    "predict_proba",
    "run_chain",
    "sample_prior_beta",
    "summarize",
]

#: Cycles between full recomputations of the cached score vector.
_REFRESH_EVERY = 1_000
#: Cycles between cached-vs-full consistency checks in debug mode.
_DEBUG_EVERY = 100
#: Floor for the adapted proposal variance.
_MIN_PROPOSAL_VAR = 1e-8


@dataclass(frozen=True)
class SamplerConfig:
    """Chain length, proposal scales, and update switches.

    ``n_iter`` defaults to 1000 cycles with a fixed penalty and 10000 when
    the penalty is inferred; ``burn_in`` defaults to 10% of ``n_iter``.
    ``initial_proposal_sd`` defaults to 1/sqrt(lam0 * n), the prior scale
    of a single coefficient; with d = 1 the proposal scale keeps this value
    for the whole run, since a one-coordinate sample variance carries no
    information for adaptation.  ``fixed_beta0`` pins the intercept: the
    chain starts from the intercept-constrained mode and skips the
    intercept update entirely (``accept_beta0`` is then None).
    """

    n_iter: int | None = None
    burn_in: int | None = None
    thin: int = 1
    infer_lambda: bool = False
    fixed_lambda: float = 1.0
    seed: int = 0
    initial_proposal_sd: float | None = None
    beta0_proposal_sd: float = 0.5
    fixed_beta0: float | None = None
    lambda_step_sd: float = 0.25
    infer_p1: bool = False
    p1_step_sd: float = 0.5
    debug: bool = False

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        for name in ("beta0_proposal_sd", "lambda_step_sd", "p1_step_sd"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.initial_proposal_sd is not None and self.initial_proposal_sd <= 0.0:
            raise ValueError("initial_proposal_sd must be positive")
        if self.fixed_beta0 is not None and not math.isfinite(self.fixed_beta0):
            raise ValueError("fixed_beta0 must be finite")

    def resolved_iterations(self, infer_lambda: bool | None = None) -> tuple[int, int]:
        """Concrete (n_iter, burn_in) after applying defaults."""
        infer = self.infer_lambda if infer_lambda is None else infer_lambda
        n_iter = self.n_iter if self.n_iter is not None else (10_000 if infer else 1_000)
        burn_in = self.burn_in if self.burn_in is not None else n_iter // 10
        if burn_in < 0 or n_iter <= burn_in:
            raise ValueError(
                f"need n_iter > burn_in >= 0, got ({n_iter}, {burn_in})"
            )
        return n_iter, burn_in


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Retained MCMC states with acceptance diagnostics.

    ``states`` holds the post-burn-in, thinned chain;
    ``log_post`` the matching log target values; ``proposal_sd_trace`` the
    coordinate proposal scale in effect at each cycle (all cycles, not just
    retained ones).  ``mode_state`` is the chain's initial state.
    """

    states: tuple[ModelState, ...]
    log_post: np.ndarray
    accept_beta: np.ndarray
    accept_beta0: float | None
    accept_lambda: float | None
    proposal_sd_trace: np.ndarray
    mode_state: ModelState
    lambda_inferred: bool
    config: SamplerConfig
    lambda_out_of_range: int = 0
    p1: np.ndarray | None = None
    accept_p1: float | None = None

    def __post_init__(self):
        if len(self.states) == 0:
            raise ValueError("no retained draws")
        rates = [*self.accept_beta]
        for r in (self.accept_beta0, self.accept_lambda, self.accept_p1):
            if r is not None:
                rates.append(r)
        if any(not (0.0 <= r <= 1.0) for r in rates):
            raise ValueError("acceptance rates must lie in [0, 1]")

    @property
    def n_draws(self) -> int:
        return len(self.states)

    @property
    def d(self) -> int:
        return self.states[0].d

    @property
    def beta_matrix(self) -> np.ndarray:
        """Retained coefficient draws stacked into an (n_draws, d) matrix."""
        return np.stack([s.beta for s in self.states])

    @property
    def beta0_vector(self) -> np.ndarray:
        return np.array([s.beta0 for s in self.states])

    @property
    def lambda_vector(self) -> np.ndarray:
        return np.array([s.lam for s in self.states])


def _gibbs_loop(
    data: Dataset,
    *,
    beta: np.ndarray,
    beta0: float,
    lam: float,
    sigma: float,
    n_iter: int,
    burn_in: int,
    thin: int,
    rng: np.random.Generator,
    update_beta0: bool,
    beta0_sd: float,
    infer_lambda: bool = False,
    prior: LambdaPrior | None = None,
    table: PhiTable | None = None,
    lambda_sd: float = 0.25,
    infer_p1: bool = False,
    p1_sd: float = 0.5,
    ignore_labels: bool = False,
    debug: bool = False,
) -> dict:
    """Shared Metropolis-in-Gibbs engine for posterior and prior targets.

    With ``ignore_labels`` every sample contributes its mixture term (the
    coefficient-prior target); otherwise labeled samples contribute loss
    terms and unlabeled ones mixture terms (the posterior target).
    """
    X = data.X
    d, n = data.d, data.n
    P1 = data.P1

    if ignore_labels:
        lab_idx = np.empty(0, dtype=int)
    else:
        lab_idx = np.flatnonzero(data.labeled_mask)
    unl_idx = np.setdiff1d(np.arange(n), lab_idx)
    all_labeled = lab_idx.size == n
    ylab = data.y[lab_idx]
    y_full = data.y if all_labeled else None

    lp1 = math.log(P1)
    lq1 = math.log1p(-P1)

    def parts(u: np.ndarray, lp: float, lq: float) -> tuple[float, float]:
        if all_labeled:
            return float(-_loss(y_full * u).sum()), 0.0
        L_lab = 0.0
        if lab_idx.size:
            L_lab = float(-_loss(ylab * u[lab_idx]).sum())
        uu = u if ignore_labels else u[unl_idx]
        L_unl = float(np.logaddexp(lp - _loss(uu), lq - _loss(-uu)).sum())
        return L_lab, L_unl

    u = X.T @ beta + beta0
    L_lab, L_unl = parts(u, lp1, lq1)
    bsq = float(beta @ beta)

    acc_beta = np.zeros(d, dtype=int)
    acc_beta0 = 0
    acc_lambda = 0
    acc_p1 = 0
    out_of_range = 0
    sd_trace = np.empty(n_iter)
    states: list[ModelState] = []
    log_posts: list[float] = []
    p1_draws: list[float] = []

    for t in range(1, n_iter + 1):
        z_beta = rng.standard_normal(d)
        log_u_beta = np.log(rng.random(d))
        if update_beta0:
            z_b0 = rng.standard_normal()
            log_u_b0 = math.log(rng.random())
        if infer_lambda:
            z_lam = rng.standard_normal()
            log_u_lam = math.log(rng.random())
        if infer_p1:
            z_p1 = rng.standard_normal()
            log_u_p1 = math.log(rng.random())

        sd_trace[t - 1] = sigma
        half_n_lam = 0.5 * lam * n
        for i in range(d):
            b_old = beta[i]
            b_new = b_old + sigma * z_beta[i]
            u_prop = u + (b_new - b_old) * X[i]
            Ll, Lu = parts(u_prop, lp1, lq1)
            delta = (Ll + Lu) - (L_lab + L_unl)
            delta -= half_n_lam * (b_new * b_new - b_old * b_old)
            if log_u_beta[i] <= delta:
                beta[i] = b_new
                u = u_prop
                L_lab, L_unl = Ll, Lu
                bsq += b_new * b_new - b_old * b_old
                acc_beta[i] += 1

        if update_beta0:
            b0_new = beta0 + beta0_sd * z_b0
            u_prop = u + (b0_new - beta0)
            Ll, Lu = parts(u_prop, lp1, lq1)
            if log_u_b0 <= (Ll + Lu) - (L_lab + L_unl):
                beta0 = b0_new
                u = u_prop
                L_lab, L_unl = Ll, Lu
                acc_beta0 += 1

        if infer_lambda:
            lam_new = math.exp(math.log(lam) + lambda_sd * z_lam)
            if not (prior.contains(lam_new) and table.covers(lam_new)):
                out_of_range += 1
            else:
                delta = (
                    prior.log_density(lam_new)
                    - log_phi_interp(table, lam_new)
                    - 0.5 * lam_new * n * bsq
                ) - (
                    prior.log_density(lam)
                    - log_phi_interp(table, lam)
                    - 0.5 * lam * n * bsq
                )
                # Jacobian of the log-scale random walk.
                delta += math.log(lam_new) - math.log(lam)
                if log_u_lam <= delta:
                    lam = lam_new
                    acc_lambda += 1

        if infer_p1:
            t_new = (lp1 - lq1) + p1_sd * z_p1  # logit walk
            p_new = float(expit(t_new))
            if 0.0 < p_new < 1.0:
                lp_new = math.log(p_new)
                lq_new = math.log1p(-p_new)
                Ll, Lu = parts(u, lp_new, lq_new)
                delta = Lu - L_unl
                delta += (lp_new + lq_new) - (lp1 + lq1)  # logit Jacobian
                if log_u_p1 <= delta:
                    P1, lp1, lq1 = p_new, lp_new, lq_new
                    L_unl = Lu
                    acc_p1 += 1

        if d >= 2:
            var_half = float(np.var(beta, ddof=1)) / 2.0
            sigma = math.sqrt(max(var_half, _MIN_PROPOSAL_VAR))

        log_post = L_lab + L_unl - 0.5 * lam * n * bsq
        if not np.isfinite(log_post):
            raise NumericalError(f"non-finite log density at cycle {t}")

        if debug and t % _DEBUG_EVERY == 0:
            state = ModelState(beta.copy(), beta0, lam)
            full = (
                log_prior_beta(state, data)
                if ignore_labels
                else log_posterior(state, data)
            )
            if abs(log_post - full) > 1e-10:
                raise NumericalError(
                    f"incremental log density drifted from full recomputation "
                    f"at cycle {t}: |{log_post} - {full}| > 1e-10"
                )

        if t % _REFRESH_EVERY == 0:
            u = X.T @ beta + beta0
            L_lab, L_unl = parts(u, lp1, lq1)
            bsq = float(beta @ beta)

        if t > burn_in and (t - burn_in) % thin == 0:
            states.append(ModelState(beta.copy(), beta0, lam))
            log_posts.append(L_lab + L_unl - 0.5 * lam * n * bsq)
            if infer_p1:
                p1_draws.append(P1)

    return {
        "states": tuple(states),
        "log_post": np.array(log_posts),
        "accept_beta": acc_beta / n_iter,
        "accept_beta0": acc_beta0 / n_iter if update_beta0 else None,
        "accept_lambda": acc_lambda / n_iter if infer_lambda else None,
        "proposal_sd_trace": sd_trace,
        "lambda_out_of_range": out_of_range,
        "p1": np.array(p1_draws) if infer_p1 else None,
        "accept_p1": acc_p1 / n_iter if infer_p1 else None,
    }


def run_chain(
    data: Dataset,
    config: SamplerConfig,
    prior: LambdaPrior | None = None,
    table: PhiTable | None = None,
    chain_id: int = 0,
    init: ModelState | None = None,
) -> PosteriorDraws:
    """Sample the posterior of (beta, beta0[, lam][, P1]) by Metropolis-in-Gibbs.

    The chain starts at the posterior mode: the penalized-objective
    minimizer on the labeled samples at the initial penalty (the fixed
    value, or 1 when the penalty is inferred), constrained to
    ``config.fixed_beta0`` when that is set.  Per cycle it performs one
    random-walk Metropolis step per coefficient, one intercept step (absent
    under a fixed intercept), an
    optional penalty step against the tabulated conditional (proposals
    landing outside the table range are rejected and counted), an optional
    class-marginal step on the logit scale touching only the unlabeled
    mixture terms, and then adapts the coordinate proposal variance to half
    the sample variance of the current coefficient vector.

    Identical (data, config, prior, table) yield bit-identical draws.

    Parameters
    ----------
    data : Dataset
        Must contain at least one labeled sample of each class.
    config : SamplerConfig
        Chain settings; see its docstring for defaults.
    prior, table : LambdaPrior and PhiTable, optional
        Required when ``config.infer_lambda``; the table must span the
        prior support.
    init : ModelState, optional
        Start the chain here instead of at the labeled-data mode.  Useful
        when a better approximation of the target's mode is available —
        e.g. for semi-supervised targets, whose mode generally differs
        from the labeled-only one.  Must match the data dimension and,
        under ``config.fixed_beta0``, carry that intercept.

    Returns
    -------
    PosteriorDraws
    """
    if config.infer_lambda:
        if prior is None or table is None:
            raise ValueError("infer_lambda requires both a LambdaPrior and a PhiTable")
        if (
            table.lambda_min > prior.lower * (1.0 + 1e-12)
            or table.lambda_max < prior.upper * (1.0 - 1e-12)
        ):
            raise ValueError("the PhiTable must span the prior support")
        lam0 = 1.0 if prior.contains(1.0) else math.sqrt(prior.lower * prior.upper)
    else:
        lam0 = float(config.fixed_lambda)
        if not np.isfinite(lam0) or lam0 <= 0.0:
            raise ValueError(f"fixed_lambda must be positive, got {config.fixed_lambda}")
    if config.infer_p1 and data.n_unlabeled == 0:
        raise ValueError("infer_p1 has no effect without unlabeled samples")

    n_iter, burn_in = config.resolved_iterations()
    if init is not None:
        if init.d != data.d:
            raise ValueError("init has the wrong number of coefficients")
        if config.fixed_beta0 is not None and init.beta0 != config.fixed_beta0:
            raise ValueError("init.beta0 must equal the fixed intercept")
        mode = init
    else:
        fit_data = data if data.is_fully_labeled else data.labeled_subset()
        mode = solve_mode(fit_data, lam0, fixed_beta0=config.fixed_beta0)
    mode_state = ModelState(mode.beta, mode.beta0, lam0)

    sigma = (
        config.initial_proposal_sd
        if config.initial_proposal_sd is not None
        else 1.0 / math.sqrt(lam0 * data.n)
    )
    result = _gibbs_loop(
        data,
        beta=mode.beta.copy(),
        beta0=mode.beta0,
        lam=lam0,
        sigma=sigma,
        n_iter=n_iter,
        burn_in=burn_in,
        thin=config.thin,
        rng=substream(config.seed, "chain", int(chain_id)),
        update_beta0=config.fixed_beta0 is None,
        beta0_sd=config.beta0_proposal_sd,
        infer_lambda=config.infer_lambda,
        prior=prior,
        table=table,
        lambda_sd=config.lambda_step_sd,
        infer_p1=config.infer_p1,
        p1_sd=config.p1_step_sd,
        debug=config.debug,
    )
    return PosteriorDraws(
        mode_state=mode_state,
        lambda_inferred=config.infer_lambda,
        config=replace(config, n_iter=n_iter, burn_in=burn_in),
        **result,
    )


def sample_prior_beta(
    data: Dataset,
    lam: float,
    beta0: float,
    config: SamplerConfig,
) -> PosteriorDraws:
    """Sample the coefficient prior given (beta0, lam) with the same engine.

    The target is `log_prior_beta`: every sample contributes its mixture
    term regardless of labels, and neither the intercept nor the penalty is
    updated (``infer_lambda``/``infer_p1`` in ``config`` are ignored).  The
    chain starts at beta = 0.
    """
    lam = float(lam)
    if not np.isfinite(lam) or lam <= 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    beta0 = float(beta0)
    if not np.isfinite(beta0):
        raise ValueError("beta0 must be finite")
    n_iter, burn_in = config.resolved_iterations(infer_lambda=False)
    sigma = (
        config.initial_proposal_sd
        if config.initial_proposal_sd is not None
        else 1.0 / math.sqrt(lam * data.n)
    )
    init = ModelState(np.zeros(data.d), beta0, lam)
    result = _gibbs_loop(
        data,
        beta=init.beta.copy(),
        beta0=beta0,
        lam=lam,
        sigma=sigma,
        n_iter=n_iter,
        burn_in=burn_in,
        thin=config.thin,
        rng=substream(config.seed, "prior-chain"),
        update_beta0=False,
        beta0_sd=config.beta0_proposal_sd,
        ignore_labels=True,
        debug=config.debug,
    )
    return PosteriorDraws(
        mode_state=init,
        lambda_inferred=False,
        config=replace(
            config, n_iter=n_iter, burn_in=burn_in,
            infer_lambda=False, infer_p1=False, fixed_lambda=lam,
        ),
        **result,
    )


@dataclass(frozen=True, eq=False)
class ChainSummary:
    """Posterior means, medians, and equal-tailed credible intervals.

    Intervals are empirical quantiles at (1 -+ level)/2 computed with
    inclusive linear-interpolation quantiles (the numpy default).  Score
    summaries are present when a dataset was supplied.
    """

    level: float
    beta_mean: np.ndarray
    beta_median: np.ndarray
    beta_lower: np.ndarray
    beta_upper: np.ndarray
    beta0_mean: float
    beta0_median: float
    beta0_lower: float
    beta0_upper: float
    lambda_mean: float | None = None
    lambda_lower: float | None = None
    lambda_upper: float | None = None
    u_mean: np.ndarray | None = None
    u_median: np.ndarray | None = None
    u_lower: np.ndarray | None = None
    u_upper: np.ndarray | None = None


def summarize(
    draws: PosteriorDraws,
    level: float = 0.95,
    data: Dataset | None = None,
) -> ChainSummary:
    """Summarize retained draws; include score summaries when data is given."""
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must lie strictly inside (0, 1), got {level}")
    if draws.n_draws == 0:
        raise ValueError("cannot summarize empty draws")
    q = [(1.0 - level) / 2.0, (1.0 + level) / 2.0]

    B = draws.beta_matrix
    b0 = draws.beta0_vector
    b_lo, b_hi = np.quantile(B, q, axis=0)
    b0_lo, b0_hi = np.quantile(b0, q)

    lam_mean = lam_lo = lam_hi = None
    if draws.lambda_inferred:
        lams = draws.lambda_vector
        lam_mean = float(lams.mean())
        lam_lo, lam_hi = (float(v) for v in np.quantile(lams, q))

    u_mean = u_med = u_lo = u_hi = None
    if data is not None:
        if data.d != draws.d:
            raise ValueError("data dimension does not match the draws")
        U = B @ data.X + b0[:, None]
        u_mean = U.mean(axis=0)
        u_med = np.median(U, axis=0)
        u_lo, u_hi = np.quantile(U, q, axis=0)

    return ChainSummary(
        level=level,
        beta_mean=B.mean(axis=0),
        beta_median=np.median(B, axis=0),
        beta_lower=b_lo,
        beta_upper=b_hi,
        beta0_mean=float(b0.mean()),
        beta0_median=float(np.median(b0)),
        beta0_lower=float(b0_lo),
        beta0_upper=float(b0_hi),
        lambda_mean=lam_mean,
        lambda_lower=lam_lo,
        lambda_upper=lam_hi,
        u_mean=u_mean,
        u_median=u_med,
        u_lower=u_lo,
        u_upper=u_hi,
    )


def predict_proba(
    draws: PosteriorDraws,
    newX: np.ndarray,
    P1: float,
    estimator: str = "mean",
) -> np.ndarray:
    """Class-+1 probabilities for new samples (columns of ``newX``).

    ``estimator="mean"`` averages the link probability over retained draws;
    ``"mode"`` evaluates the link at the chain's initial mode state.
    """
    newX = np.asarray(newX, dtype=float)
    if newX.ndim != 2 or newX.shape[0] != draws.d:
        raise ValueError(
            f"newX must have shape ({draws.d}, m), got {newX.shape}"
        )
    if estimator == "mean":
        U = draws.beta_matrix @ newX + draws.beta0_vector[:, None]
        return class_probability(U, P1).mean(axis=0)
    if estimator == "mode":
        mode = draws.mode_state
        u = newX.T @ mode.beta + mode.beta0
        return class_probability(u, P1)
    raise ValueError(f"estimator must be 'mean' or 'mode', got {estimator!r}")


def predict_label(p: np.ndarray) -> np.ndarray:
    """Hard labels from probabilities: +1 where p >= 0.5 (ties go to +1)."""
    p = np.asarray(p, dtype=float)
    return np.where(p >= 0.5, 1.0, -1.0)


def potential_scale_reduction(chains: list[PosteriorDraws]) -> np.ndarray:
    """Per-coefficient R-hat across independently seeded chains.

    Classic between/within variance ratio on the retained draws; values
    near 1 indicate the chains agree.  Purely diagnostic — not used by any
    fitting path.
    """
    if len(chains) < 2:
        raise ValueError("need at least two chains")
    mats = [c.beta_matrix for c in chains]
    m = min(mat.shape[0] for mat in mats)
    if m < 2:
        raise ValueError("need at least two retained draws per chain")
    stacked = np.stack([mat[:m] for mat in mats])  # (chains, m, d)
    within = stacked.var(axis=1, ddof=1).mean(axis=0)
    between = m * stacked.mean(axis=1).var(axis=0, ddof=1)
    var_hat = (m - 1) / m * within + between / m
    return np.sqrt(var_hat / within)
