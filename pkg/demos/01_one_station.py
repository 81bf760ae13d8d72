"""One station, start to finish.

Simulate 68 winters of seasonal maxima with a slow upward trend, fit the
trend-in-location GEV, and put a year-block bootstrap standard error on the
20-year return value for 1990 and 2015.
"""
import numpy as np

from probgrid.bootstrap import bootstrap_se, make_plan
from probgrid.gev import GevCoefficients, fit_gev, gev_ppf, return_value

years = np.arange(1950, 2018)
truth = GevCoefficients(mu0=30.0, mu1=0.08, sigma=8.0, xi=0.1, ref_year=1950)
rng = np.random.default_rng(1)
maxima = gev_ppf(rng.random(years.size), truth.location(years), truth.sigma, truth.xi)

fit = fit_gev(maxima, years, ref_year=1950)
c = fit.coefficients
print(f"fitted  mu0={c.mu0:.2f}  mu1={c.mu1:.3f}  sigma={c.sigma:.2f}  xi={c.xi:.3f}")
print(f"truth   mu0={truth.mu0:.2f}  mu1={truth.mu1:.3f}  sigma={truth.sigma:.2f}  xi={truth.xi:.3f}")

# Resample whole years. Refits start from the full-data estimate, which keeps
# each replicate cheap and on the same likelihood mode.
plan = make_plan(years, 200, seed=7)
rv = np.array([return_value(fit_gev(maxima[idx], years, ref_year=1950, n_restarts=0, init=c).coefficients,
                            20, [1990, 2015]) for idx in plan.indices])
se, _ = bootstrap_se(rv)
for year, est, s, true in zip((1990, 2015), return_value(c, 20, [1990, 2015]), se,
                              return_value(truth, 20, [1990, 2015])):
    print(f"20-year return value in {year}: {est:6.2f} +/- {s:.2f}   (true {true:.2f})")
