"""Independent reference implementations used by the test suite.

Everything here is written straight-line against the model definitions,
with none of the caching, vectorization tricks, or incremental updates
that the package itself uses.  Slow and dumb on purpose: when a test
compares ``bayesdwd`` output against these, agreement means two separate
derivations landed on the same number.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# Loss and objective, straight off the definitions
# ---------------------------------------------------------------------------

def loss_ref(u):
    """Piecewise loss: 1 - u below the knot at 1/2, 1/(4u) above it."""
    if u <= 0.5:
        return 1.0 - u
    return 1.0 / (4.0 * u)


def loss_grad_ref(u):
    if u <= 0.5:
        return -1.0
    return -1.0 / (4.0 * u * u)


def objective_ref(beta, beta0, lam, X, y):
    """Mean labeled loss plus ridge penalty, accumulated in longdouble."""
    beta = np.asarray(beta, dtype=float)
    d, n = X.shape
    total = np.longdouble(0.0)
    for i in range(n):
        u = np.longdouble(0.0)
        for j in range(d):
            u += np.longdouble(X[j, i]) * np.longdouble(beta[j])
        u += np.longdouble(beta0)
        total += np.longdouble(loss_ref(float(y[i] * u)))
    pen = np.longdouble(0.0)
    for j in range(d):
        pen += np.longdouble(beta[j]) ** 2
    return float(total / n + np.longdouble(lam) / 2.0 * pen)


def log_posterior_ref(beta, beta0, lam, X, y, P1=0.5):
    """Unnormalized log posterior with NaN labels marginalized over classes."""
    beta = np.asarray(beta, dtype=float)
    d, n = X.shape
    total = 0.0
    for i in range(n):
        u = float(X[:, i] @ beta) + beta0
        if np.isnan(y[i]):
            lp = math.log(P1) - loss_ref(u)
            lq = math.log1p(-P1) - loss_ref(-u)
            total += max(lp, lq) + math.log1p(math.exp(-abs(lp - lq)))
        else:
            total -= loss_ref(float(y[i]) * u)
    return total - 0.5 * lam * n * float(beta @ beta)


def log_prior_beta_ref(beta, beta0, lam, X, P1=0.5):
    """Label-free mixture term over every column plus the Gaussian penalty."""
    y_all_missing = np.full(X.shape[1], np.nan)
    return log_posterior_ref(beta, beta0, lam, X, y_all_missing, P1)


# ---------------------------------------------------------------------------
# Brute-force minimizer (grid with refinement)
# ---------------------------------------------------------------------------

def grid_minimize_objective(
    X,
    y,
    lam,
    beta_half_width=5.0,
    beta0_half_width=6.0,
    n_pts=41,
    levels=6,
    expand_limit=3,
):
    """Minimize the penalized objective by exhaustive grid refinement.

    Evaluates the objective on a full (d+1)-dimensional lattice, recenters on
    the argmin, shrinks the box, and repeats.  If the argmin of the first
    level sits on the box boundary the box is doubled (a few times at most)
    before refinement starts, so the result does not silently clip.

    Only practical for d = 2; the lattice has ``n_pts**3`` nodes.

    Returns
    -------
    best_val : float
    best_point : ndarray of shape (d + 1,), layout (beta..., beta0)
    """
    d, n = X.shape
    if d != 2:
        raise ValueError("grid oracle implemented for d=2 only")
    yv = np.asarray(y, dtype=float)

    def batch_objective(b1, b2, b0):
        # b1/b2/b0 are flat arrays of lattice coordinates
        u = (
            X[0][:, None] * b1[None, :]
            + X[1][:, None] * b2[None, :]
            + b0[None, :]
        )
        s = yv[:, None] * u
        v = np.where(s <= 0.5, 1.0 - s, 1.0 / (4.0 * np.maximum(s, 0.25)))
        return v.mean(axis=0) + 0.5 * lam * (b1**2 + b2**2)

    center = np.zeros(3)
    half = np.array([beta_half_width, beta_half_width, beta0_half_width])

    for _ in range(expand_limit + 1):
        axes = [np.linspace(center[k] - half[k], center[k] + half[k], n_pts) for k in range(3)]
        g1, g2, g0 = np.meshgrid(*axes, indexing="ij")
        vals = batch_objective(g1.ravel(), g2.ravel(), g0.ravel())
        flat = int(np.argmin(vals))
        idx = np.unravel_index(flat, (n_pts, n_pts, n_pts))
        on_edge = any(k in (0, n_pts - 1) for k in idx)
        center = np.array([axes[k][idx[k]] for k in range(3)])
        if not on_edge:
            break
        half = half * 2.0
    best_val = float(vals[flat])

    spacing = 2.0 * half / (n_pts - 1)
    for _ in range(levels):
        half = 2.0 * spacing
        axes = [np.linspace(center[k] - half[k], center[k] + half[k], n_pts) for k in range(3)]
        g1, g2, g0 = np.meshgrid(*axes, indexing="ij")
        vals = batch_objective(g1.ravel(), g2.ravel(), g0.ravel())
        flat = int(np.argmin(vals))
        idx = np.unravel_index(flat, (n_pts, n_pts, n_pts))
        center = np.array([axes[k][idx[k]] for k in range(3)])
        best_val = min(best_val, float(vals[flat]))
        spacing = 2.0 * half / (n_pts - 1)
    return best_val, np.array([center[0], center[1], center[2]])


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def fd_gradient(f, z, h=1e-6):
    """Central-difference gradient of a scalar function of a flat vector."""
    z = np.asarray(z, dtype=float)
    g = np.zeros_like(z)
    for k in range(z.size):
        zp = z.copy()
        zm = z.copy()
        zp[k] += h
        zm[k] -= h
        g[k] = (f(zp) - f(zm)) / (2.0 * h)
    return g


def fd_hessian_from_gradient(grad, z, h=1e-6):
    """Central differences of an analytic gradient; symmetrized."""
    z = np.asarray(z, dtype=float)
    m = z.size
    H = np.zeros((m, m))
    for k in range(m):
        zp = z.copy()
        zm = z.copy()
        zp[k] += h
        zm[k] -= h
        H[:, k] = (np.asarray(grad(zp)) - np.asarray(grad(zm))) / (2.0 * h)
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# Quadrature references
# ---------------------------------------------------------------------------

def box_integral_2d(logf, x_lo, x_hi, y_lo, y_hi, n=801):
    """Trapezoid integral of exp(logf) over a rectangle.

    ``logf`` must accept two meshgrid arrays.  Evaluation is shifted by the
    max of ``logf`` before exponentiating, so badly scaled integrands stay
    finite; the shift is added back on the log scale and the return value is
    the plain (not log) integral.
    """
    xs = np.linspace(x_lo, x_hi, n)
    ys = np.linspace(y_lo, y_hi, n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    lv = logf(gx, gy)
    shift = float(np.max(lv))
    inner = np.trapezoid(np.exp(lv - shift), ys, axis=1)
    val = np.trapezoid(inner, xs)
    return float(val) * math.exp(shift)


def box_integral_1d(logf, lo, hi, n=4001):
    xs = np.linspace(lo, hi, n)
    lv = logf(xs)
    shift = float(np.max(lv))
    return float(np.trapezoid(np.exp(lv - shift), xs)) * math.exp(shift)


def d1_posterior_log_grid(X, y, lam, P1, beta_grid, beta0_grid):
    """Log posterior of a d=1 model tabulated on a (beta, beta0) lattice."""
    x = X[0]
    u = x[None, None, :] * beta_grid[:, None, None] + beta0_grid[None, :, None]
    labeled = ~np.isnan(y)
    s = np.where(labeled[None, None, :], y[None, None, :], 1.0) * u

    def v(t):
        return np.where(t <= 0.5, 1.0 - t, 1.0 / (4.0 * np.maximum(t, 0.25)))

    out = np.zeros(u.shape[:2])
    if labeled.any():
        out -= v(s[:, :, labeled]).sum(axis=2)
    if (~labeled).any():
        uu = u[:, :, ~labeled]
        a = np.log(P1) - v(uu)
        b = np.log1p(-P1) - v(-uu)
        hi = np.maximum(a, b)
        out += (hi + np.log1p(np.exp(-np.abs(a - b)))).sum(axis=2)
    n = X.shape[1]
    out -= 0.5 * lam * n * beta_grid[:, None] ** 2
    return out


def d1_posterior_marginal_cdf(X, y, lam, P1=0.5, half_width=None, n_grid=1201):
    """Quadrature CDF of the beta marginal for a d=1 model.

    The lattice half-width defaults to ten prior standard deviations, which
    comfortably covers the posterior for any labeled fraction.

    Returns
    -------
    beta_grid : ndarray
    cdf : ndarray, normalized to cdf[-1] == 1
    """
    n = X.shape[1]
    if half_width is None:
        half_width = 10.0 / math.sqrt(lam * n)
    beta_grid = np.linspace(-half_width, half_width, n_grid)
    beta0_grid = np.linspace(-8.0, 8.0, n_grid)
    lp = d1_posterior_log_grid(X, y, lam, P1, beta_grid, beta0_grid)
    shift = float(lp.max())
    marg = np.trapezoid(np.exp(lp - shift), beta0_grid, axis=1)
    mass = np.trapezoid(marg, beta_grid)
    pdf = marg / mass
    cdf = np.concatenate(
        [[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(beta_grid))]
    )
    return beta_grid, cdf / cdf[-1]


def ks_distance(samples, grid, cdf):
    """Kolmogorov–Smirnov distance between a sample and a tabulated CDF."""
    s = np.sort(np.asarray(samples, dtype=float))
    F = np.interp(s, grid, cdf)
    m = s.size
    ecdf_hi = np.arange(1, m + 1) / m
    ecdf_lo = np.arange(0, m) / m
    return float(max(np.max(np.abs(ecdf_hi - F)), np.max(np.abs(F - ecdf_lo))))
