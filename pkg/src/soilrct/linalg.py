"""Dense least-squares core.

All regression estimators in the package route through `least_squares`,
which solves the problem by Householder QR rather than normal equations:
the QR route is backward stable and its triangular factor exposes rank
deficiency directly on the diagonal.
"""

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionError, InsufficientDataError, SingularMatrixError

#: Relative tolerance on the diagonal of R below which a column is
#: declared linearly dependent.
RANK_RTOL = 1e-10


def qr_factor(design: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR factorization with a rank check.

    Raises SingularMatrixError naming the first offending column when a
    diagonal entry of R falls below RANK_RTOL relative to the largest.
    """
    design = np.asarray(design, dtype=np.float64)
    if design.ndim != 2:
        raise DimensionError(f"design must be 2-D, got shape {design.shape}")
    n, q = design.shape
    if n < q:
        raise InsufficientDataError(
            f"need at least as many rows as columns ({n} rows, {q} columns)")
    qmat, rmat = np.linalg.qr(design)
    diag = np.abs(np.diag(rmat))
    scale = diag.max(initial=0.0)
    if scale == 0.0:
        raise SingularMatrixError("design matrix is identically zero", column=0)
    bad = np.nonzero(diag <= RANK_RTOL * scale)[0]
    if bad.size:
        col = int(bad[0])
        raise SingularMatrixError(
            f"design matrix is rank deficient: column {col} is linearly "
            f"dependent on the preceding columns", column=col)
    return qmat, rmat


def least_squares(design: np.ndarray, response: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of `response` on the columns of `design`.

    Solved through the QR factorization of the design matrix; see
    `qr_factor` for the rank-deficiency diagnostics.
    """
    response = np.asarray(response, dtype=np.float64)
    if response.ndim != 1 or response.shape[0] != np.shape(design)[0]:
        raise DimensionError(
            f"response shape {response.shape} does not match design "
            f"{np.shape(design)}")
    qmat, rmat = qr_factor(design)
    return solve_triangular(rmat, qmat.T @ response)


def hc0_covariance(design: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    """Heteroskedasticity-robust (HC0) covariance of OLS coefficients.

    Uses squared residuals on the meat diagonal with no small-sample
    correction.  Computed from the QR factors as A diag(e^2) A^T with
    A = R^-1 Q^T, which keeps the result symmetric PSD by construction.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    qmat, rmat = qr_factor(design)
    a = solve_triangular(rmat, qmat.T)
    scaled = a * residuals[np.newaxis, :]
    cov = scaled @ scaled.T
    return 0.5 * (cov + cov.T)


def hc2_covariance(design: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    """Leverage-adjusted (HC2) sandwich covariance of OLS coefficients.

    Each squared residual is inflated by 1/(1 - h_i) where h_i is the
    hat-matrix diagonal, which removes the downward bias of the plain
    sandwich in small samples.  Leverages fall directly out of the QR
    factorization as squared row norms of Q.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    qmat, rmat = qr_factor(design)
    leverage = np.einsum("ij,ij->i", qmat, qmat)
    # h_i = 1 exactly means the point is fit perfectly; its residual is 0
    denom = np.clip(1.0 - leverage, 1e-12, None)
    a = solve_triangular(rmat, qmat.T)
    scaled = a * (residuals / np.sqrt(denom))[np.newaxis, :]
    cov = scaled @ scaled.T
    return 0.5 * (cov + cov.T)
