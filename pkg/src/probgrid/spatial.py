"""Nonstationary Gaussian-process fields built from locally fitted stationary models.

Local anisotropic Matérn models are fitted at a coarse set of mixture
components; their parameters are blended with normalised Gaussian kernel
weights and plugged into the kernel-convolution nonstationary covariance

    C(s, s') = sigma(s) sigma(s') |S(s)|^1/4 |S(s')|^1/4 |(S(s)+S(s'))/2|^-1/2 M(sqrt(Q))

with ``Q = (s-s')' [(S(s)+S(s'))/2]^-1 (s-s')``.  Coordinates are
(lon, lat) in degrees and kernel matrices ``S`` are in degrees squared.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.optimize import minimize
from scipy.sparse.csgraph import connected_components

from ._linalg import logdet_from_chol, robust_cholesky, tri_solve
from .errors import ConditioningError, ConfigError, ModelError

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
KAPPAS = (0.5, 2.5)
COVARIATES = ("elevation", "log_elevation")
FIELD_COEFFICIENTS = ("mu0", "mu1", "log_sigma", "xi")
ISOTROPIC_COEFFICIENTS = ("mu1", "xi")
SQRT5 = math.sqrt(5.0)


# --- elementary pieces -------------------------------------------------------

def matern(d, kappa):
    """Matérn correlation at scaled distance ``d`` (``sqrt(2 kappa) d`` convention)."""
    d = np.asarray(d, dtype=float)
    if kappa == 0.5:
        return np.exp(-d)
    if kappa == 2.5:
        x = SQRT5 * d
        return (1.0 + x + x * x / 3.0) * np.exp(-x)
    raise ConfigError(f"unsupported Matérn smoothness {kappa!r}; choose one of {KAPPAS}")


def covariate(elevation_m, kind="elevation"):
    """Mean-function covariate: elevation in km, or ``log(1 + km)``."""
    km = np.asarray(elevation_m, dtype=float) / 1000.0
    if kind == "elevation":
        return km
    if kind == "log_elevation":
        return np.log1p(np.maximum(km, 0.0))
    raise ConfigError(f"unknown covariate {kind!r}")


def kernel_matrix(log_lam1, log_lam2=None, angle=0.0):
    """2x2 SPD matrix with eigenvalues ``exp(log_lam*)`` rotated by ``angle`` (radians)."""
    l1 = math.exp(log_lam1)
    l2 = l1 if log_lam2 is None else math.exp(log_lam2)
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c * c * l1 + s * s * l2, c * s * (l1 - l2)],
                     [c * s * (l1 - l2), s * s * l1 + c * c * l2]])


def kernel_ellipse(kernel):
    """(semi-major, semi-minor, angle in degrees from east) of a kernel matrix."""
    vals, vecs = np.linalg.eigh(kernel)
    major = vecs[:, 1]
    if abs(vals[1] - vals[0]) <= 1e-12 * abs(vals[1]):
        angle = 0.0
    else:
        angle = math.degrees(math.atan2(major[1], major[0])) % 180.0
    return math.sqrt(vals[1]), math.sqrt(vals[0]), angle


def _lonlat(s):
    s = np.asarray(s, dtype=float)
    return s.reshape(1, 2) if s.ndim == 1 else s


def pairwise_distance(a, b, metric="euclidean"):
    """Distances in degrees: planar lon/lat, or great-circle arc."""
    a, b = _lonlat(a), _lonlat(b)
    if metric == "euclidean":
        d = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.sum(d * d, axis=-1))
    if metric == "great_circle":
        lon1, lat1 = np.radians(a[:, 0])[:, None], np.radians(a[:, 1])[:, None]
        lon2, lat2 = np.radians(b[:, 0])[None, :], np.radians(b[:, 1])[None, :]
        h = (np.sin((lat2 - lat1) / 2) ** 2
             + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
        return np.degrees(2 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0))))
    raise ConfigError(f"unknown distance metric {metric!r}")


def kernel_weights(s, centers, h, metric="euclidean"):
    """Normalised weights ``w_k(s) ∝ exp(-||s - b_k||^2 / (2h))``, shape ``(m, K)``."""
    if h <= 0:
        raise ConfigError("bandwidth must be positive")
    d = pairwise_distance(s, centers, metric)
    logw = -(d * d) / (2.0 * h)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


def _quadform(dx, dy, k):
    """``(dx, dy) k^-1 (dx, dy)'`` for broadcastable 2x2 matrices ``k`` (..., 2, 2)."""
    a, b, c = k[..., 0, 0], k[..., 0, 1], k[..., 1, 1]
    det = a * c - b * b
    return (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det, det


def stationary_cov(s1, s2, sigma2, kernel, kappa):
    """Stationary anisotropic Matérn covariance ``sigma2 * M(sqrt(h' K^-1 h))``."""
    s1, s2 = _lonlat(s1), _lonlat(s2)
    dx = s1[:, None, 0] - s2[None, :, 0]
    dy = s1[:, None, 1] - s2[None, :, 1]
    q, _ = _quadform(dx, dy, np.asarray(kernel))
    return sigma2 * matern(np.sqrt(np.maximum(q, 0.0)), kappa)


def ns_cov_from_params(s1, sigma2_1, kern1, s2, sigma2_2, kern2, kappa):
    """Nonstationary covariance from local parameters evaluated at both point sets."""
    s1, s2 = _lonlat(s1), _lonlat(s2)
    k1 = np.asarray(kern1).reshape(-1, 2, 2)
    k2 = np.asarray(kern2).reshape(-1, 2, 2)
    det1 = k1[:, 0, 0] * k1[:, 1, 1] - k1[:, 0, 1] ** 2
    det2 = k2[:, 0, 0] * k2[:, 1, 1] - k2[:, 0, 1] ** 2
    avg = 0.5 * (k1[:, None, :, :] + k2[None, :, :, :])
    dx = s1[:, None, 0] - s2[None, :, 0]
    dy = s1[:, None, 1] - s2[None, :, 1]
    q, det_avg = _quadform(dx, dy, avg)
    if np.any(det_avg <= 0):
        raise ConditioningError("averaged kernel matrix is not positive definite")
    pref = (det1[:, None] * det2[None, :]) ** 0.25 / np.sqrt(det_avg)
    sig = np.sqrt(np.asarray(sigma2_1, dtype=float))[:, None] * np.sqrt(np.asarray(sigma2_2, dtype=float))[None, :]
    return sig * pref * matern(np.sqrt(np.maximum(q, 0.0)), kappa)


# --- local fits --------------------------------------------------------------

@dataclass
class MixtureComponentFit:
    center: tuple  # (lon, lat)
    beta0: float = math.nan
    beta1: float = math.nan
    log_sigma2: float = math.nan
    log_lam1: float = math.nan
    log_lam2: float = math.nan
    angle: float = 0.0
    log_tau2: float = math.nan
    converged: bool = False
    n_stations: int = 0
    loglik: float = math.nan

    @property
    def kernel(self):
        return kernel_matrix(self.log_lam1, self.log_lam2, self.angle)

    @property
    def sigma2(self):
        return math.exp(self.log_sigma2)

    @property
    def tau2(self):
        return math.exp(self.log_tau2)


class _LocalProblem:
    def __init__(self, y, xy, x, kappa, isotropic):
        self.y = y
        self.n = y.size
        self.X = np.column_stack([np.ones_like(x), x])
        self.dx = xy[:, None, 0] - xy[None, :, 0]
        self.dy = xy[:, None, 1] - xy[None, :, 1]
        self.kappa = kappa
        self.isotropic = isotropic
        self.eye = np.eye(self.n)

    def kernel(self, p):
        if self.isotropic:
            return kernel_matrix(p[0])
        return kernel_matrix(p[0], p[1], p[2])

    def correlation(self, p):
        q, _ = _quadform(self.dx, self.dy, self.kernel(p))
        return matern(np.sqrt(np.maximum(q, 0.0)), self.kappa)

    def profile(self, p):
        """Returns ``(nll, beta, sigma2)`` with beta and sigma2 profiled out."""
        g = math.exp(p[-1])
        v = self.correlation(p) + g * self.eye
        try:
            L, _ = robust_cholesky(v)
        except ConditioningError:
            return math.inf, None, None
        w = tri_solve(L, np.column_stack([self.y, self.X]))
        yw, Xw = w[:, 0], w[:, 1:]
        beta = np.linalg.lstsq(Xw, yw, rcond=None)[0]
        r = yw - Xw @ beta
        sigma2 = float(r @ r) / self.n
        if not sigma2 > 0:
            return math.inf, None, None
        nll = 0.5 * self.n * (math.log(2 * math.pi * sigma2) + 1.0) + 0.5 * logdet_from_chol(L)
        return nll, beta, sigma2

    def __call__(self, p):
        return self.profile(p)[0]


def _nn_spacing(xy):
    d = pairwise_distance(xy, xy)
    d[d <= 1e-6] = np.inf
    nn = d.min(axis=1)
    nn = nn[np.isfinite(nn)]
    return float(np.median(nn)) if nn.size else 1.0


def _merge_coincident(y, xy, x, tol=1e-6):
    """Average stations closer than ``tol`` degrees; they would make the covariance singular."""
    close = sparse.csr_matrix(pairwise_distance(xy, xy) <= tol)
    k, label = connected_components(close, directed=False)
    if k == len(y):
        return y, xy, x
    counts = np.bincount(label)

    def avg(v):
        return np.bincount(label, weights=v, minlength=k) / counts

    return avg(y), np.column_stack([avg(xy[:, 0]), avg(xy[:, 1])]), avg(x)


def local_loglik(fit, values, lonlat, elevation, kappa, covariate_kind="elevation"):
    """Full Gaussian log-likelihood of a fitted component on the given stations."""
    x = covariate(elevation, covariate_kind)
    mean = fit.beta0 + fit.beta1 * x
    cov = stationary_cov(lonlat, lonlat, fit.sigma2, fit.kernel, kappa) + fit.tau2 * np.eye(len(values))
    L, _ = robust_cholesky(cov)
    r = tri_solve(L, np.asarray(values, dtype=float) - mean)
    n = len(values)
    return -0.5 * (n * math.log(2 * math.pi) + logdet_from_chol(L) + float(r @ r))


def in_radius(lonlat, center, radius, metric="euclidean"):
    if radius is None or not np.isfinite(radius):
        return np.ones(len(lonlat), dtype=bool)
    return pairwise_distance(lonlat, np.asarray(center)[None, :], metric)[:, 0] <= radius


# shortest allowed range, in nearest-neighbour spacings; shorter ranges mimic the nugget
_MIN_RANGE_NN = 0.5
_NM_LOCAL = {"xatol": 1e-5, "fatol": 1e-7, "maxiter": 3000, "maxfev": 6000}


def fit_local(values, lonlat, elevation, center, radius, kappa, isotropic=False,
              covariate_kind="elevation", min_stations=10, metric="euclidean", init=None):
    """Fit a stationary anisotropic Matérn GP with elevation-linear mean near ``center``.

    The mean ``beta0 + beta1 * x`` and process variance are profiled out;
    Nelder-Mead runs over the kernel eigenvalues, rotation and the
    nugget-to-variance ratio.  Too few stations yield an unconverged fit.
    """
    values = np.asarray(values, dtype=float)
    lonlat = _lonlat(lonlat)
    elevation = np.asarray(elevation, dtype=float)
    center = tuple(float(c) for c in center)
    ok = in_radius(lonlat, np.asarray(center), radius, metric) & ~np.isnan(values)
    n = int(ok.sum())
    if n < min_stations:
        log.info("component at %s: %d stations within radius (< %d); excluded", center, n, min_stations)
        return MixtureComponentFit(center, n_stations=n)
    y, xy, x = _merge_coincident(values[ok], lonlat[ok], covariate(elevation[ok], covariate_kind))
    if np.ptp(y) == 0:
        log.info("component at %s: constant data; excluded", center)
        return MixtureComponentFit(center, n_stations=n)
    prob = _LocalProblem(y, xy, x, kappa, isotropic)

    extent = max(float(np.max(pairwise_distance(xy, xy))), 1e-3)
    lmin = max(_MIN_RANGE_NN * _nn_spacing(xy), 1e-3)
    lmax = 10.0 * extent
    lam_b = (2 * math.log(lmin), 2 * math.log(lmax))
    g_b = (math.log(1e-6), math.log(1e4))
    if isotropic:
        bounds = [lam_b, g_b]
    else:
        bounds = [lam_b, lam_b, (-math.inf, math.inf), g_b]

    def clip(p):
        return np.array([min(max(v, lo), hi) for v, (lo, hi) in zip(p, bounds)])

    if init is not None and init.converged:
        p0 = [init.log_lam1] if isotropic else [init.log_lam1, init.log_lam2, init.angle]
        x0 = clip(np.array(p0 + [init.log_tau2 - init.log_sigma2]))
    else:
        best = None
        for ell in (extent / 10, extent / 4, extent / 2):
            for g in (0.05, 0.5, 5.0):
                ll = 2 * math.log(min(max(ell, lmin), lmax))
                p = [ll] if isotropic else [ll, ll, 0.0]
                p = np.array(p + [math.log(g)])
                f = prob(p)
                if best is None or f < best[0]:
                    best = (f, p)
        x0 = best[1]

    step = np.array([1.0, 1.0] if isotropic else [1.0, 1.0, 0.4, 1.0])
    total_nit = 0
    res = None
    for _ in range(2):
        simplex = np.vstack([x0, x0 + np.diag(step)])
        simplex = np.array([clip(v) for v in simplex])
        for i in range(1, simplex.shape[0]):
            if np.allclose(simplex[i], simplex[0]):
                simplex[i] = clip(x0 - np.diag(step)[i - 1])
        cur = minimize(prob, x0, method="Nelder-Mead", bounds=bounds,
                       options={**_NM_LOCAL, "initial_simplex": simplex})
        total_nit += cur.nit
        if res is None or cur.fun <= res.fun:
            res = cur
        x0 = res.x
    nll, beta, sigma2 = prob.profile(res.x)
    if not np.isfinite(nll):
        return MixtureComponentFit(center, n_stations=n)
    p = res.x
    if isotropic:
        l1 = l2 = float(p[0])
        angle = 0.0
    else:
        l1, l2, angle = float(p[0]), float(p[1]), float(p[2])
        if l2 > l1:
            l1, l2, angle = l2, l1, angle + math.pi / 2
        angle = angle % math.pi
    return MixtureComponentFit(
        center=center, beta0=float(beta[0]), beta1=float(beta[1]),
        log_sigma2=math.log(sigma2), log_lam1=l1, log_lam2=l2, angle=angle,
        log_tau2=math.log(sigma2) + float(p[-1]), converged=bool(res.success),
        n_stations=n, loglik=-nll,
    )


# --- smoothed model ----------------------------------------------------------

@dataclass(frozen=True)
class LocalParameters:
    beta0: np.ndarray
    beta1: np.ndarray
    sigma2: np.ndarray
    tau2: np.ndarray
    kernel: np.ndarray  # (m, 2, 2)


@dataclass(frozen=True)
class SmoothedFieldModel:
    season: str
    coefficient: str
    components: tuple
    bandwidth: float
    kappa: float
    fit_radius: float  # inf for the global stationary model
    isotropic: bool = False
    covariate_kind: str = "elevation"
    metric: str = "euclidean"
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def active(self):
        comps = [c for c in self.components if c.converged]
        if not comps:
            raise ModelError(f"{self.season}/{self.coefficient}: no converged mixture components")
        return comps

    def _arrays(self):
        if "arrays" not in self._cache:
            comps = self.active()
            self._cache["arrays"] = dict(
                centers=np.array([c.center for c in comps], dtype=float),
                beta0=np.array([c.beta0 for c in comps]),
                beta1=np.array([c.beta1 for c in comps]),
                log_sigma2=np.array([c.log_sigma2 for c in comps]),
                log_tau2=np.array([c.log_tau2 for c in comps]),
                kernel=np.array([c.kernel for c in comps]),
            )
        return self._cache["arrays"]

    def weights(self, s):
        return kernel_weights(s, self._arrays()["centers"], self.bandwidth, self.metric)

    def local(self, s):
        return smooth_parameters(self, s)

    def mean(self, s, elevation):
        p = self.local(s)
        return p.beta0 + p.beta1 * covariate(elevation, self.covariate_kind)

    def nugget(self, s):
        return self.local(s).tau2

    def covariance(self, s1, s2=None):
        p1 = self.local(s1)
        if s2 is None:
            s2, p2 = s1, p1
        else:
            p2 = self.local(s2)
        return ns_cov_from_params(s1, p1.sigma2, p1.kernel, s2, p2.sigma2, p2.kernel, self.kappa)

    def variance(self, s):
        return self.local(s).sigma2

    # serialisation
    def to_dict(self):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "season": self.season,
            "coefficient": self.coefficient,
            "bandwidth": self.bandwidth,
            "kappa": self.kappa,
            "fit_radius": None if not np.isfinite(self.fit_radius) else self.fit_radius,
            "isotropic": self.isotropic,
            "covariate": self.covariate_kind,
            "metric": self.metric,
            "components": [
                {**{k: v for k, v in asdict(c).items() if k != "center"},
                 "center": list(c.center)}
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ConfigError(f"unsupported model format version {d.get('format_version')!r}")
        comps = tuple(
            MixtureComponentFit(**{**c, "center": tuple(c["center"])}) for c in d["components"]
        )
        radius = math.inf if d["fit_radius"] is None else float(d["fit_radius"])
        return cls(d["season"], d["coefficient"], comps, float(d["bandwidth"]), float(d["kappa"]),
                   radius, bool(d["isotropic"]), d["covariate"], d.get("metric", "euclidean"))

    def dumps(self):
        return json.dumps(_nan_to_none(self.to_dict()), sort_keys=True, indent=1) + "\n"

    @classmethod
    def loads(cls, text):
        return cls.from_dict(_none_to_nan(json.loads(text)))


def _nan_to_none(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_nan_to_none(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


_NAN_FIELDS = {"beta0", "beta1", "log_sigma2", "log_lam1", "log_lam2", "log_tau2", "loglik"}


def _none_to_nan(obj):
    for c in obj.get("components", []):
        for k in _NAN_FIELDS:
            if c.get(k) is None:
                c[k] = math.nan
    return obj


def smooth_parameters(model, s):
    """Kernel-weighted local parameters at points ``s``.

    Scalars are blended linearly (variances on the log scale); kernel
    matrices are blended element-wise, which keeps them SPD.
    """
    a = model._arrays()
    w = model.weights(s)

    # per-row sums rather than BLAS products: results must not depend on how many points are passed
    def blend(v):
        return np.sum(w * v[None, :], axis=1)

    k = a["kernel"].reshape(-1, 4)
    return LocalParameters(
        beta0=blend(a["beta0"]),
        beta1=blend(a["beta1"]),
        sigma2=np.exp(blend(a["log_sigma2"])),
        tau2=np.exp(blend(a["log_tau2"])),
        kernel=np.stack([blend(k[:, j]) for j in range(4)], axis=1).reshape(-1, 2, 2),
    )


def nonstationary_cov(s1, s2, model):
    return model.covariance(s1, s2)


def component_grid(bbox, spacing):
    """Evenly spaced mixture-component centres covering ``bbox = (lon0, lon1, lat0, lat1)``."""
    lon0, lon1, lat0, lat1 = bbox

    def axis(lo, hi):
        n = int(math.floor((hi - lo) / spacing + 1e-9)) + 1
        mid = 0.5 * (lo + hi)
        return mid + (np.arange(n) - 0.5 * (n - 1)) * spacing

    lon, lat = np.meshgrid(axis(lon0, lon1), axis(lat0, lat1), indexing="ij")
    return np.column_stack([lon.ravel(), lat.ravel()])


def _fit_local_task(args):
    return fit_local(*args[0], **args[1])


def fit_field(values, lonlat, elevation, *, centers=None, radius=None, kappa=0.5,
              isotropic=False, covariate_kind="elevation", bandwidth=3.0, min_stations=10,
              metric="euclidean", season="", coefficient="", init=None, mapper=map):
    """Fit all mixture components and assemble a :class:`SmoothedFieldModel`.

    ``radius=None`` gives the globally stationary model: one component at
    the station centroid using every station.
    """
    values = np.asarray(values, dtype=float)
    lonlat = _lonlat(lonlat)
    ok = ~np.isnan(values)
    if radius is None or not np.isfinite(radius):
        centers = lonlat[ok].mean(axis=0, keepdims=True)
        radius = math.inf
    centers = np.asarray(centers, dtype=float)
    inits = list(init.components) if init is not None else [None] * len(centers)
    if len(inits) != len(centers):
        inits = [None] * len(centers)
    tasks = [
        ((values, lonlat, elevation, tuple(c), radius, kappa),
         dict(isotropic=isotropic, covariate_kind=covariate_kind, min_stations=min_stations,
              metric=metric, init=i0))
        for c, i0 in zip(centers, inits)
    ]
    comps = tuple(mapper(_fit_local_task, tasks))
    model = SmoothedFieldModel(season, coefficient, comps, float(bandwidth), float(kappa),
                               float(radius), bool(isotropic), covariate_kind, metric)
    model.active()
    return model


def with_components(model, components):
    return replace(model, components=tuple(components), _cache={})
