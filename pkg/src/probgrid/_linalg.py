import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import ConditioningError

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)


def robust_cholesky(a, ladder=JITTER_LADDER):
    """Lower Cholesky factor, adding ``j * mean(diag)`` jitter up the ladder.

    Returns ``(L, jitter_added)``.
    """
    scale = float(np.mean(np.diag(a)))
    if not np.isfinite(scale):
        raise ConditioningError("non-finite covariance matrix")
    for j in ladder:
        try:
            m = a if j == 0 else a + (j * scale) * np.eye(a.shape[0])
            return cholesky(m, lower=True, check_finite=False), j * scale
        except np.linalg.LinAlgError:
            continue
    try:
        lam = float(np.linalg.eigvalsh(a)[0])
    except np.linalg.LinAlgError:
        lam = float("nan")
    raise ConditioningError("covariance factorisation failed after maximum jitter", lam)


def chol_solve(L, b):
    return cho_solve((L, True), b, check_finite=False)


def tri_solve(L, b):
    return solve_triangular(L, b, lower=True, check_finite=False)


def logdet_from_chol(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))
