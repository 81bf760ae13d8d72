"""Marginal spatial model, kriging predictor, Gaussian CRPS and cross-validated selection."""

import logging
import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from ._linalg import chol_solve, robust_cholesky
from .errors import DomainError, ModelError, ProbgridError
from .spatial import _lonlat, covariate, fit_field, ns_cov_from_params

log = logging.getLogger(__name__)

INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@dataclass(frozen=True)
class MarginalModel:
    """``theta_hat ~ N(mean, cov + diag(nugget))`` at the station locations."""

    lonlat: np.ndarray
    elevation: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    nugget: np.ndarray
    field_model: object = None  # SmoothedFieldModel, needed to predict off-station
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def assemble(cls, field_model, lonlat, elevation):
        lonlat = _lonlat(lonlat)
        elevation = np.asarray(elevation, dtype=float)
        p = field_model.local(lonlat)
        mean = p.beta0 + p.beta1 * covariate(elevation, field_model.covariate_kind)
        cov = ns_cov_from_params(lonlat, p.sigma2, p.kernel, lonlat, p.sigma2, p.kernel, field_model.kappa)
        cov = 0.5 * (cov + cov.T)
        return cls(lonlat, elevation, mean, cov, p.tau2, field_model)

    def with_nugget(self, nugget):
        return replace(self, nugget=np.broadcast_to(np.asarray(nugget, float), self.mean.shape).copy(),
                       _cache={})

    def factor(self):
        if "chol" not in self._cache:
            L, jitter = robust_cholesky(self.cov + np.diag(self.nugget))
            self._cache["chol"] = L
            self._cache["jitter"] = jitter
        return self._cache["chol"]

    def loglik(self, theta_hat):
        """Marginal Gaussian log-likelihood of the station estimates."""
        L = self.factor()
        r = np.asarray(theta_hat, float) - self.mean
        alpha = chol_solve(L, r)
        n = r.size
        return -0.5 * (n * math.log(2 * math.pi) + 2 * np.sum(np.log(np.diag(L))) + float(r @ alpha))


@dataclass(frozen=True)
class KrigedField:
    lonlat: np.ndarray
    estimate: np.ndarray
    mean_part: np.ndarray
    residual_part: np.ndarray
    variance: np.ndarray  # latent-process predictive variance
    nugget: np.ndarray  # local error variance at the targets

    @property
    def noisy_variance(self):
        """Predictive variance for a new noisy estimate at each target."""
        return self.variance + self.nugget


def krige(model, theta_hat, targets=None, target_elevation=None, chunk=2048):
    """Kriging predictor of the latent field.

    ``targets=None`` predicts at the model's own stations, using the
    assembled covariance directly.  Off-station targets need
    ``model.field``; they are processed in chunks against a single
    factorisation, so results do not depend on ``chunk``.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    L = model.factor()
    resid = theta_hat - model.mean
    alpha = chol_solve(L, resid)
    if targets is None:
        c = model.cov
        var = np.diag(model.cov) - np.sum(c * chol_solve(L, c), axis=0)
        res = c.T @ alpha
        return KrigedField(model.lonlat, model.mean + res, model.mean.copy(), res,
                           np.maximum(var, 0.0), model.nugget.copy())
    if model.field_model is None:
        raise ModelError("off-station kriging needs the smoothed field model")
    targets = _lonlat(targets)
    target_elevation = np.asarray(target_elevation, dtype=float)
    fm = model.field_model
    ps = fm.local(model.lonlat)
    parts = []
    for i in range(0, len(targets), chunk):
        t = targets[i:i + chunk]
        pt = fm.local(t)
        c = ns_cov_from_params(model.lonlat, ps.sigma2, ps.kernel, t, pt.sigma2, pt.kernel, fm.kappa)
        mean_t = pt.beta0 + pt.beta1 * covariate(target_elevation[i:i + chunk], fm.covariate_kind)
        # row-wise accumulation keeps every target's sum order independent of the chunking
        res = np.sum(c * alpha[:, None], axis=0)
        var = pt.sigma2 - np.sum(c * chol_solve(L, c), axis=0)
        parts.append((mean_t, res, np.maximum(var, 0.0), pt.tau2))
    mean_t, res, var, tau2 = (np.concatenate(x) for x in zip(*parts))
    return KrigedField(targets, mean_t + res, mean_t, res, var, tau2)


def crps_gaussian(y, mean, variance):
    """Closed-form CRPS of ``N(mean, variance)`` at observation ``y``."""
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise DomainError("variance must be nonnegative")
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(variance)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = (y - mean) / sd
        out = sd * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - INV_SQRT_PI)
    out = np.where(sd == 0, np.abs(y - mean), out)
    return out[()] if out.ndim == 0 else out


# --- cross-validation --------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    radius: float | None  # None = globally stationary
    kappa: float = 0.5
    covariate_kind: str = "elevation"
    label: str = ""

    @property
    def name(self):
        return self.label or ("r0" if self.radius is None else f"r={self.radius:g}")


def candidate_grid(radii=(9.0, 7.5, 6.0, 4.5), kappas=(0.5, 2.5),
                   covariates=("elevation", "log_elevation")):
    """Stationary ``r0`` plus every radius, in listed order, for each (kappa, covariate)."""
    out = []
    for cov in covariates:
        for kappa in kappas:
            out.append(Candidate(None, kappa, cov, "r0"))
            for i, r in enumerate(radii, start=1):
                out.append(Candidate(float(r), kappa, cov, f"r{i}"))
    return out


def assign_folds(station_ids, folds=5, seed=0):
    """Fold index per station: a seeded shuffle of the sorted ids dealt round-robin."""
    ids = [str(s) for s in station_ids]
    if len(ids) < folds:
        raise ProbgridError(f"{len(ids)} stations cannot be split into {folds} folds")
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    ss = np.random.SeedSequence([seed, zlib.crc32("\n".join(sorted(ids)).encode())])
    perm = np.random.Generator(np.random.Philox(ss)).permutation(len(ids))
    out = np.empty(len(ids), dtype=int)
    for rank, j in enumerate(perm):
        out[order[j]] = rank % folds
    return out


@dataclass
class CVResult:
    rows: list  # dicts: candidate, radius, covariate, kappa, fold, crps
    scores: dict  # candidate name -> mean CRPS (inf when any fold failed)
    failed: dict
    winner: Candidate
    candidates: list


def _fit_predict(theta_hat, lonlat, elevation, train, test, cand, centers, bandwidth,
                 isotropic, min_stations, metric, mapper):
    model = fit_field(theta_hat[train], lonlat[train], elevation[train],
                      centers=centers, radius=cand.radius, kappa=cand.kappa,
                      isotropic=isotropic, covariate_kind=cand.covariate_kind,
                      bandwidth=bandwidth, min_stations=min_stations, metric=metric, mapper=mapper)
    mm = MarginalModel.assemble(model, lonlat[train], elevation[train])
    kf = krige(mm, theta_hat[train], lonlat[test], elevation[test])
    return crps_gaussian(theta_hat[test], kf.estimate, kf.noisy_variance)


def cross_validate(theta_hat, lonlat, elevation, station_ids, candidates, centers, *,
                   folds=5, seed=0, bandwidth=3.0, isotropic=False, min_stations=10,
                   metric="euclidean", mapper=map):
    """K-fold out-of-sample CRPS for each candidate spatial model.

    Held-out estimates are scored against the kriging predictive
    distribution including the local nugget.  A candidate failing on any
    fold scores ``inf``.  Ties go to the earliest listed candidate.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    lonlat = _lonlat(lonlat)
    elevation = np.asarray(elevation, dtype=float)
    ok = ~np.isnan(theta_hat)
    idx = np.flatnonzero(ok)
    fold_of = assign_folds([station_ids[i] for i in idx], folds, seed)
    rows, scores, failed = [], {}, {}
    for cand in candidates:
        pooled = []
        bad = None
        for f in range(folds):
            train, test = idx[fold_of != f], idx[fold_of == f]
            try:
                crps = _fit_predict(theta_hat, lonlat, elevation, train, test, cand, centers,
                                    bandwidth, isotropic, min_stations, metric, mapper)
                val = float(np.mean(crps))
                pooled.append(crps)
            except ProbgridError as exc:
                log.warning("candidate %s failed on fold %d: %s", cand.name, f, exc)
                bad = str(exc)
                val = math.inf
            rows.append(dict(candidate=cand.name, radius=cand.radius, covariate=cand.covariate_kind,
                             kappa=cand.kappa, fold=f, crps=val))
        if bad is not None:
            scores[cand.name + _suffix(cand)] = math.inf
            failed[cand.name + _suffix(cand)] = bad
        else:
            scores[cand.name + _suffix(cand)] = float(np.mean(np.concatenate(pooled)))
    winner, best = None, math.inf
    for cand in candidates:
        s = scores[cand.name + _suffix(cand)]
        if winner is None or s < best:
            winner, best = cand, s
    return CVResult(rows, scores, failed, winner, list(candidates))


def _suffix(cand):
    return f"|{cand.covariate_kind}|{cand.kappa:g}"
