"""GEV distribution with a linear trend in location.

Parameterisation: ``mu_t = mu0 + mu1 * (t - ref_year)``, constant ``sigma``
and shape ``xi`` (``xi > 0`` is the heavy, unbounded upper tail).  For
``|xi| < EPS_XI`` every function switches to the Gumbel limit.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateDataError, DomainError, InsufficientDataError

EPS_XI = 1e-8
EULER_GAMMA = 0.5772156649015329
COEFFICIENTS = ("mu0", "mu1", "sigma", "xi")


@dataclass(frozen=True)
class GevCoefficients:
    mu0: float
    mu1: float
    sigma: float
    xi: float
    ref_year: float = 0.0

    def location(self, t):
        return self.mu0 + self.mu1 * (np.asarray(t, dtype=float) - self.ref_year)

    def at_reference(self, ref_year):
        """Same distribution, with ``mu0`` re-expressed at another reference year."""
        return replace(self, mu0=self.mu0 + self.mu1 * (ref_year - self.ref_year), ref_year=ref_year)

    def as_array(self):
        return np.array([self.mu0, self.mu1, self.sigma, self.xi])


@dataclass(frozen=True)
class FitResult:
    coefficients: GevCoefficients
    loglik: float
    converged: bool
    iterations: int
    nfev: int = 0


def _check_sigma(sigma):
    if np.any(np.asarray(sigma) <= 0):
        raise DomainError("sigma must be positive")


def gev_cdf(y, mu, sigma, xi):
    """P(Y <= y); 0 below a finite lower bound, 1 above a finite upper bound."""
    _check_sigma(sigma)
    y, mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (y, mu, sigma, xi)))
    z = (y - mu) / sigma
    gumbel = np.abs(xi) < EPS_XI
    xs = np.where(gumbel, 1.0, xi)
    a = 1.0 + xs * z
    inside = a > 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        tail = np.exp(-np.log1p(np.where(inside, xs * z, 0.0)) / xs)
        out = np.where(inside, np.exp(-tail), np.where(xs > 0, 0.0, 1.0))
        out = np.where(gumbel, np.exp(-np.exp(-z)), out)
    return out[()] if out.ndim == 0 else out


def gev_ppf(p, mu, sigma, xi):
    """Quantile function (inverse of :func:`gev_cdf`)."""
    _check_sigma(sigma)
    p, mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (p, mu, sigma, xi)))
    yp = -np.log(p)
    gumbel = np.abs(xi) < EPS_XI
    xs = np.where(gumbel, 1.0, xi)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = mu + sigma * np.expm1(-xs * np.log(yp)) / xs
        q = np.where(gumbel, mu - sigma * np.log(yp), q)
    return q[()] if q.ndim == 0 else q


def _clean(y, t):
    y = np.asarray(y, dtype=float)
    t = np.zeros_like(y) if t is None else np.broadcast_to(np.asarray(t, dtype=float), y.shape)
    ok = ~np.isnan(y)
    return y[ok], t[ok]


def gev_loglik(y, coeffs, t=None):
    """Log-likelihood of maxima ``y`` observed at times ``t`` (NaN entries skipped).

    Returns ``-inf`` when any observation falls outside the support.
    """
    _check_sigma(coeffs.sigma)
    y, t = _clean(y, t)
    if y.size == 0:
        raise InsufficientDataError("no nonmissing maxima")
    sigma, xi = coeffs.sigma, coeffs.xi
    w = (y - coeffs.location(t)) / sigma
    n = y.size
    if abs(xi) < EPS_XI:
        return float(-n * math.log(sigma) - np.sum(w) - np.sum(np.exp(-w)))
    a = 1.0 + xi * w
    if np.any(a <= 0):
        return -math.inf
    la = np.log1p(xi * w)
    return float(-n * math.log(sigma) - (1.0 + 1.0 / xi) * np.sum(la) - np.sum(np.exp(-la / xi)))


def gev_loglik_grad(y, coeffs, t=None):
    """Analytic gradient of :func:`gev_loglik` w.r.t. ``(mu0, mu1, sigma, xi)``."""
    y, t = _clean(y, t)
    sigma, xi = coeffs.sigma, coeffs.xi
    dt_ = t - coeffs.ref_year
    w = (y - coeffs.location(t)) / sigma
    if abs(xi) < EPS_XI:
        e = np.exp(-w)
        dmu = (1.0 - e) / sigma
        dsig = (w - 1.0 - w * e) / sigma
        dxi = 0.5 * w * w * (1.0 - e) - w
    else:
        a = 1.0 + xi * w
        if np.any(a <= 0):
            return np.full(4, np.nan)
        la = np.log1p(xi * w)
        p = np.exp(-la / xi)  # a^(-1/xi)
        dmu = ((1.0 + xi) / a - p / a) / sigma
        dsig = (-1.0 + (1.0 + xi) * w / a - w * p / a) / sigma
        dxi = (la / xi**2 - (1.0 + 1.0 / xi) * w / a
               - p * (la / xi**2 - w / (xi * a)))
    return np.array([dmu.sum(), (dmu * dt_).sum(), dsig.sum(), dxi.sum()])


def return_value(coeffs, r, t):
    """Level exceeded with probability ``1/r`` in year ``t``.

    ``coeffs`` may hold arrays (e.g. one entry per grid cell).
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 1):
        raise DomainError("return period must exceed 1")
    _check_sigma(coeffs.sigma)
    yp = -np.log1p(-1.0 / r)
    mu = coeffs.location(t)
    xi = np.asarray(coeffs.xi, dtype=float)
    sigma = np.asarray(coeffs.sigma, dtype=float)
    gumbel = np.abs(xi) < EPS_XI
    xs = np.where(gumbel, 1.0, xi)
    out = np.where(gumbel, mu - sigma * np.log(yp), mu + sigma * np.expm1(-xs * np.log(yp)) / xs)
    return out[()] if np.ndim(out) == 0 else out


def return_period(coeffs, x, t):
    """Inverse exceedance probability of level ``x`` in year ``t``.

    Below a finite lower bound the answer is 1; above a finite upper bound
    it is ``inf``.
    """
    _check_sigma(coeffs.sigma)
    x = np.asarray(x, dtype=float)
    mu = coeffs.location(t)
    sigma = np.asarray(coeffs.sigma, dtype=float)
    xi = np.asarray(coeffs.xi, dtype=float)
    z = (x - mu) / sigma
    gumbel = np.abs(xi) < EPS_XI
    xs = np.where(gumbel, 1.0, xi)
    a = 1.0 + xs * z
    inside = a > 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        u = np.where(gumbel, np.exp(-z), np.exp(-np.log1p(np.where(inside, xs * z, 0.0)) / xs))
        rho = -1.0 / np.expm1(-u)
        rho = np.where(gumbel | inside, rho, np.where(xs > 0, 1.0, np.inf))
    return rho[()] if np.ndim(rho) == 0 else rho


# --- fitting -----------------------------------------------------------------

_PENALTY = 1e4


class _Objective:
    """Negative log-likelihood in standardised coordinates.

    ``z = (y - m) / s``; parameters ``(a0, a1, log sigma', xi)`` with
    ``mu_t = m + s * (a0 + a1 * tc)`` and ``sigma = s * sigma'``.  The
    problem is therefore invariant to affine rescaling of the data.
    """

    def __init__(self, z, tc, xi_bounds):
        self.z = z
        self.tc = tc
        self.n = z.size
        self.lo, self.hi = xi_bounds

    def __call__(self, p):
        a0, a1, ls, xi = p
        w = (self.z - a0 - a1 * self.tc) * math.exp(-ls)
        penalty = 0.0
        if xi < self.lo:
            penalty = _PENALTY * (self.lo - xi) ** 2
        elif xi > self.hi:
            penalty = _PENALTY * (xi - self.hi) ** 2
        if abs(xi) < EPS_XI:
            return self.n * ls + np.sum(w) + np.sum(np.exp(-w)) + penalty
        a = 1.0 + xi * w
        if np.any(a <= 0):
            return math.inf
        la = np.log1p(xi * w)
        return self.n * ls + (1.0 + 1.0 / xi) * np.sum(la) + np.sum(np.exp(-la / xi)) + penalty


_NM_OPTIONS = {"xatol": 1e-9, "fatol": 1e-11, "maxiter": 5000, "maxfev": 10000}
_SIMPLEX_STEP = np.array([0.2, 0.002, 0.2, 0.1])


def _nelder_mead(obj, x0):
    simplex = np.vstack([x0, x0 + np.diag(_SIMPLEX_STEP)])
    return minimize(obj, x0, method="Nelder-Mead", options={**_NM_OPTIONS, "initial_simplex": simplex})


def fit_gev(y, years=None, *, ref_year=None, xi_bounds=(-1.0, 1.0), n_restarts=4, seed=0,
            init=None, min_obs=30, grad_tol=1e-3):
    """Maximum-likelihood GEV fit with a linear location trend.

    Parameters
    ----------
    y : array_like
        Seasonal maxima; NaN marks a missing season-year.
    years : array_like, optional
        Time covariate paired with ``y`` (defaults to ``0..n-1``).
    ref_year : float, optional
        Year at which the returned ``mu0`` is expressed (default: midpoint
        of ``years``).
    n_restarts : int
        Jittered restarts in addition to the main start; the best
        log-likelihood wins, earliest on ties.
    init : GevCoefficients, optional
        Main starting point (otherwise Gumbel moment estimates).

    Raises
    ------
    InsufficientDataError
        Fewer than ``min_obs`` nonmissing maxima.
    DegenerateDataError
        Zero sample variance.
    """
    y = np.asarray(y, dtype=float)
    years = np.arange(y.size, dtype=float) if years is None else np.asarray(years, dtype=float)
    ok = ~np.isnan(y)
    if ok.sum() < max(min_obs, 3):
        raise InsufficientDataError(f"{int(ok.sum())} nonmissing maxima, need {min_obs}")
    mid = 0.5 * (years.min() + years.max())
    if ref_year is None:
        ref_year = mid
    yv, tc = y[ok], years[ok] - mid
    m, s = yv.mean(), yv.std(ddof=1)
    if not s > 0 or np.ptp(yv) == 0:
        raise DegenerateDataError("constant series: zero sample variance")
    z = (yv - m) / s
    obj = _Objective(z, tc, xi_bounds)

    if init is not None:
        c = init.at_reference(mid)
        x0 = np.array([(c.mu0 - m) / s, c.mu1 / s, math.log(c.sigma / s), c.xi])
    else:
        sig0 = math.sqrt(6.0) * z.std(ddof=1) / math.pi
        x0 = np.array([z.mean() - EULER_GAMMA * sig0, 0.0, math.log(sig0), 0.1])
    starts = [x0]
    rng = np.random.default_rng(seed)
    span = max(np.ptp(tc), 1.0)
    for _ in range(n_restarts):
        jitter = rng.normal(size=4) * np.array([0.25, 0.25 / span, 0.2, 0.1])
        starts.append(x0 + jitter)

    best = None
    nit = nfev = 0
    for x in starts:
        if not np.isfinite(obj(x)):
            x = x.copy()
            x[3] = 0.0
        res = _nelder_mead(obj, x)
        nit += res.nit
        nfev += res.nfev
        if best is None or res.fun < best.fun:
            best = res
    # one restart from the optimum guards against simplex collapse
    polish = _nelder_mead(obj, best.x)
    nit += polish.nit
    nfev += polish.nfev
    if polish.fun <= best.fun:
        best = polish

    a0, a1, ls, xi = (float(v) for v in best.x)
    sigma = float(s * math.exp(ls))
    mu1 = float(s * a1)
    mu_mid = float(m + s * a0)
    coeffs = GevCoefficients(mu_mid + mu1 * (ref_year - mid), mu1, sigma, xi, float(ref_year))
    loglik = gev_loglik(yv, coeffs, years[ok])
    converged = bool(best.success) and np.isfinite(loglik)
    if converged:
        g = gev_loglik_grad(yv, coeffs, years[ok])
        # gradient in the standardised coordinates; scale-free tolerance
        gs = np.array([g[0] * s, g[1] * s, g[2] * sigma, g[3]])
        if xi_bounds[0] + 1e-6 < xi < xi_bounds[1] - 1e-6:
            converged = bool(np.all(np.abs(gs) <= grad_tol * max(1.0, math.sqrt(yv.size))))
        else:
            converged = bool(np.all(np.abs(gs[:3]) <= grad_tol * max(1.0, math.sqrt(yv.size))))
    return FitResult(coeffs, loglik, converged, int(nit), int(nfev))
