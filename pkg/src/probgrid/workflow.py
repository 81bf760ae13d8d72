"""In-memory workflow: station GEV fits, spatial smoothing, kriging and bootstrap replicates.

The file-based stages in :mod:`probgrid.pipeline` are thin wrappers
around these functions.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import bootstrap_se, resample
from .errors import DataError, NumericalError, ProbgridError
from .gev import GevCoefficients, fit_gev, return_value
from .inference import Candidate, MarginalModel, cross_validate, krige
from .spatial import FIELD_COEFFICIENTS, ISOTROPIC_COEFFICIENTS, fit_field

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelSettings:
    ref_year: float = 1950.0
    xi_bounds: tuple = (-1.0, 1.0)
    gev_restarts: int = 4
    bootstrap_restarts: int = 0
    min_obs: int = 30
    centers: np.ndarray = None  # mixture-component centres, (K, 2)
    bandwidth: float = 3.0
    min_stations: int = 10
    metric: str = "euclidean"
    isotropic: tuple = ISOTROPIC_COEFFICIENTS
    selection: dict = field(default_factory=dict)  # coefficient -> Candidate

    def candidate(self, name):
        return self.selection.get(name, Candidate(None))

    def is_isotropic(self, name):
        return name in self.isotropic


# --- station fits ------------------------------------------------------------

@dataclass
class StationFits:
    station_ids: list
    coefs: np.ndarray  # (n, 4): mu0, mu1, sigma, xi at ``ref_year``; NaN when failed
    loglik: np.ndarray
    converged: np.ndarray
    n_obs: np.ndarray
    ref_year: float

    def theta(self, name):
        """Field coefficient used for smoothing; NaN where the fit failed."""
        c = np.where(self.converged[:, None], self.coefs, np.nan)
        if name == "log_sigma":
            return np.log(c[:, 2])
        return c[:, ("mu0", "mu1", "sigma", "xi").index(name)]

    def thetas(self):
        return np.column_stack([self.theta(n) for n in FIELD_COEFFICIENTS])

    def coefficients(self):
        c = self.coefs
        return GevCoefficients(c[:, 0], c[:, 1], c[:, 2], c[:, 3], self.ref_year)

    def init(self, i):
        if not self.converged[i]:
            return None
        c = self.coefs[i]
        return GevCoefficients(*(float(v) for v in c), self.ref_year)


def _fit_station_task(args):
    values, years, ref_year, xi_bounds, n_restarts, min_obs, init = args
    n = int(np.sum(~np.isnan(values)))
    try:
        res = fit_gev(values, years, ref_year=ref_year, xi_bounds=xi_bounds,
                      n_restarts=n_restarts, init=init, min_obs=min_obs)
    except DataError as exc:
        log.info("station fit skipped: %s", exc)
        return np.full(4, np.nan), math.nan, False, n
    return res.coefficients.as_array(), res.loglik, res.converged, n


def fit_stations(maxima_list, settings, *, init=None, n_restarts=None, mapper=map):
    """GEV fit at every station; failures become NaN rows with ``converged=False``."""
    n_restarts = settings.gev_restarts if n_restarts is None else n_restarts
    tasks = [(m.values, m.years, settings.ref_year, settings.xi_bounds, n_restarts,
              settings.min_obs, None if init is None else init.init(i))
             for i, m in enumerate(maxima_list)]
    out = list(mapper(_fit_station_task, tasks))
    return StationFits(
        [m.station_id for m in maxima_list],
        np.array([o[0] for o in out]).reshape(-1, 4),
        np.array([o[1] for o in out], dtype=float),
        np.array([o[2] for o in out], dtype=bool),
        np.array([o[3] for o in out], dtype=int),
        float(settings.ref_year),
    )


# --- spatial -----------------------------------------------------------------

def smooth_coefficient(name, theta, lonlat, elevation, settings, *, season="", init=None, mapper=map):
    cand = settings.candidate(name)
    return fit_field(theta, lonlat, elevation, centers=settings.centers, radius=cand.radius,
                     kappa=cand.kappa, isotropic=settings.is_isotropic(name),
                     covariate_kind=cand.covariate_kind, bandwidth=settings.bandwidth,
                     min_stations=settings.min_stations, metric=settings.metric,
                     season=season, coefficient=name, init=init, mapper=mapper)


def krige_coefficient(model, theta, lonlat, elevation, targets=None, target_elevation=None):
    """Kriged latent field of one coefficient, using only stations with a valid estimate."""
    ok = ~np.isnan(theta)
    mm = MarginalModel.assemble(model, lonlat[ok], elevation[ok])
    return krige(mm, theta[ok], targets, target_elevation)


@dataclass
class SpatialResult:
    models: dict  # name -> SmoothedFieldModel (or None if it failed)
    estimate: np.ndarray  # (m, 4) kriged field coefficients at the targets
    variance: np.ndarray  # (m, 4) latent predictive variance
    failed: dict


def smooth_and_krige(fits, lonlat, elevation, settings, targets, target_elevation, *,
                     season="", init_models=None, mapper=map):
    """Smooth every field coefficient and krige it to ``targets``.

    A coefficient whose spatial fit fails yields a NaN column and an entry
    in ``failed``.
    """
    m = len(targets)
    est = np.full((m, 4), np.nan)
    var = np.full((m, 4), np.nan)
    models, failed = {}, {}
    for k, name in enumerate(FIELD_COEFFICIENTS):
        theta = fits.theta(name)
        init = None if init_models is None else init_models.get(name)
        try:
            model = smooth_coefficient(name, theta, lonlat, elevation, settings,
                                       season=season, init=init, mapper=mapper)
            kf = krige_coefficient(model, theta, lonlat, elevation, targets, target_elevation)
        except (NumericalError, DataError) as exc:
            log.warning("%s %s: spatial fit failed: %s", season, name, exc)
            models[name] = None
            failed[name] = str(exc)
            continue
        models[name] = model
        est[:, k] = kf.estimate
        var[:, k] = kf.variance
    return SpatialResult(models, est, var, failed)


def field_to_gev(theta, ref_year):
    """(m, 4) field coefficients -> :class:`GevCoefficients` of arrays."""
    theta = np.asarray(theta, dtype=float)
    return GevCoefficients(theta[:, 0], theta[:, 1], np.exp(theta[:, 2]), theta[:, 3], ref_year)


def return_values(theta, ref_year, periods, years):
    """Return-value table ``(len(periods), len(years), m)`` from field coefficients.

    Cells with any NaN coefficient give NaN.
    """
    theta = np.asarray(theta, dtype=float)
    bad = np.isnan(theta).any(axis=1)
    safe = np.where(bad[:, None], [0.0, 0.0, 0.0, 0.0], theta)
    c = field_to_gev(safe, ref_year)
    out = np.empty((len(periods), len(years), theta.shape[0]))
    for i, r in enumerate(periods):
        for j, t in enumerate(years):
            out[i, j] = np.where(bad, np.nan, return_value(c, r, t))
    return out


# --- model selection ---------------------------------------------------------

def select_models(fits, lonlat, elevation, candidates, settings, *, folds=5, seed=0, mapper=map):
    """Cross-validated candidate choice per field coefficient.

    Returns ``(selection, cv_results)`` keyed by coefficient name.
    """
    selection, results = {}, {}
    for name in FIELD_COEFFICIENTS:
        res = cross_validate(fits.theta(name), lonlat, elevation, fits.station_ids, candidates,
                             settings.centers, folds=folds, seed=seed, bandwidth=settings.bandwidth,
                             isotropic=settings.is_isotropic(name), min_stations=settings.min_stations,
                             metric=settings.metric, mapper=mapper)
        selection[name] = res.winner
        results[name] = res
    return selection, results


# --- bootstrap replicates ----------------------------------------------------

@dataclass
class Replicate:
    b: int
    station_theta: np.ndarray  # (n, 4)
    grid_theta: np.ndarray  # (m, 4)
    failed: dict


def run_replicate(b, plan, maxima_list, lonlat, elevation, settings, targets, target_elevation,
                  full_fits=None, full_models=None, season="", mapper=map):
    """One end-to-end bootstrap replicate.

    Maxima are resampled with the shared plan, station fits are warm-started
    from the full-data fits and local spatial fits from the full-data
    mixture components; model choices stay fixed.
    """
    reps = [resample(m, plan, b) for m in maxima_list]
    fits = fit_stations(reps, settings, init=full_fits, n_restarts=settings.bootstrap_restarts,
                        mapper=mapper)
    try:
        sp = smooth_and_krige(fits, lonlat, elevation, settings, targets, target_elevation,
                              season=season, init_models=full_models, mapper=mapper)
        grid, failed = sp.estimate, sp.failed
    except ProbgridError as exc:
        grid = np.full((len(targets), 4), np.nan)
        failed = {"all": str(exc)}
    return Replicate(b, fits.thetas(), grid, failed)


def fit_series_bootstrap(values, years, plan, settings, periods, rv_years):
    """GEV fit plus block bootstrap of one series without spatial smoothing.

    Returns ``(status, best, se, n_eff)`` where ``status`` is ``"ok"``,
    ``"empty"`` (no valid maxima) or ``"failed"``, and the arrays have shape
    ``(len(periods), len(rv_years))``.
    """
    values = np.asarray(values, dtype=float)
    if np.all(np.isnan(values)):
        return "empty", None, None, None
    try:
        full = fit_gev(values, years, ref_year=settings.ref_year, xi_bounds=settings.xi_bounds,
                       n_restarts=settings.gev_restarts, min_obs=settings.min_obs)
    except DataError:
        return "failed", None, None, None
    c = full.coefficients
    best = return_values([[c.mu0, c.mu1, math.log(c.sigma), c.xi]], settings.ref_year,
                         periods, rv_years)[:, :, 0]
    reps = np.full((plan.B,) + best.shape, np.nan)
    pos = {int(y): i for i, y in enumerate(years)}
    for b in range(plan.B):
        take = np.array([pos.get(int(y), -1) for y in plan.replicate_years(b)])
        rv = np.where(take >= 0, values[np.maximum(take, 0)], np.nan)
        try:
            f = fit_gev(rv, plan.years, ref_year=settings.ref_year, xi_bounds=settings.xi_bounds,
                        n_restarts=settings.bootstrap_restarts, init=c, min_obs=settings.min_obs)
        except DataError:
            continue
        fc = f.coefficients
        reps[b] = return_values([[fc.mu0, fc.mu1, math.log(fc.sigma), fc.xi]], settings.ref_year,
                                periods, rv_years)[:, :, 0]
    se, n_eff = bootstrap_se(reps, axis=0)
    return "ok", best, se, n_eff


def ensemble_se(replicate_values):
    """Bootstrap SE over the leading (replicate) axis, with the effective count."""
    return bootstrap_se(np.asarray(replicate_values, dtype=float), axis=0)


def raw_station_return_values(thetas, ref_year, r, year):
    return return_values(thetas, ref_year, [r], [year])[0, 0]
