"""Hot Monte Carlo kernel with a compiled and an interpreted backend.

`scenario_kernel` consumes pre-generated randomness (a permutation block
and a standard-normal noise block per replicate) and is itself purely
deterministic numerics: repeated calls with one backend are bitwise
reproducible, and the two backends agree to floating round-off (the
compiler may reorder reductions).  Set the environment variable
SOILRCT_BACKEND to "numpy" before import to skip compilation; anything
else (or unset) uses the jitted kernel when numba is importable.

Replicates are laid out with arm 0 in the first `n0` rows and arm 1 in
the remainder; the caller is responsible for that block ordering.
"""

import os

import numpy as np

#: Output columns of `scenario_kernel`, one row per replicate.
KERNEL_COLUMNS = (
    "dim_est", "dim_var", "did_est", "did_var",
    "ols_est", "ols_var", "mod_est", "mod_var",
    "naive_est", "naive_var",
    "policy_value", "restricted_value", "fail",
)
N_KERNEL_COLUMNS = len(KERNEL_COLUMNS)


def population_tables(b, y0, y1):
    """Sorted baselines and potential-outcome prefix sums for fast policy
    evaluation.  `cum0[j]` is the sum of y0 over the j smallest baselines."""
    order = np.argsort(b, kind="stable")
    sort_b = np.ascontiguousarray(b[order])
    cum0 = np.zeros(b.shape[0] + 1)
    cum1 = np.zeros(b.shape[0] + 1)
    np.cumsum(y0[order], out=cum0[1:])
    np.cumsum(y1[order], out=cum1[1:])
    return sort_b, cum0, cum1


def _mean(x):
    return x.sum() / x.shape[0]


def _var1(x, mean):
    # sample variance, n - 1 denominator
    d = x - mean
    return (d * d).sum() / (x.shape[0] - 1)


def _linefit(x, y):
    """Slope and intercept of y on x; returns (ok, intercept, slope)."""
    mx = _mean(x)
    my = _mean(y)
    dx = x - mx
    ssx = (dx * dx).sum()
    if ssx <= 0.0:
        return False, 0.0, 0.0
    slope = (dx * (y - my)).sum() / ssx
    return True, my - slope * mx, slope


def _scenario_kernel_impl(b, y0, y1, sort_b, cum0, cum1, mean_y0, mean_y1,
                          perm, noise, sigma_delta, n0):
    n_pop = b.shape[0]
    reps = perm.shape[0]
    n = perm.shape[1]
    n1 = n - n0
    out = np.empty((reps, 13))
    w = np.empty((n, 4))
    w[:, 0] = 1.0
    w[:, 1] = 0.0
    w[n0:, 1] = 1.0
    for r in range(reps):
        idx = perm[r]
        bobs = b[idx] + sigma_delta * noise[r, :, 0]
        yobs = np.empty(n)
        for i in range(n0):
            yobs[i] = y0[idx[i]]
        for i in range(n0, n):
            yobs[i] = y1[idx[i]]
        yobs += sigma_delta * noise[r, :, 1]
        diffs = yobs - bobs

        mean_t = _mean(yobs[n0:])
        mean_c = _mean(yobs[:n0])
        out[r, 0] = mean_t - mean_c
        out[r, 1] = (_var1(yobs[:n0], mean_c) / n0
                     + _var1(yobs[n0:], mean_t) / n1)
        mean_dt = _mean(diffs[n0:])
        mean_dc = _mean(diffs[:n0])
        out[r, 2] = mean_dt - mean_dc
        out[r, 3] = (_var1(diffs[:n0], mean_dc) / n0
                     + _var1(diffs[n0:], mean_dt) / n1)

        mean_b = _mean(bobs)
        sd_b = np.sqrt(_var1(bobs, mean_b))
        ok = (sd_b > 0.0
              and _var1(bobs[:n0], _mean(bobs[:n0])) > 0.0
              and _var1(bobs[n0:], _mean(bobs[n0:])) > 0.0)
        if not ok:
            for j in range(4, 12):
                out[r, j] = np.nan
            out[r, 12] = 1.0
            continue
        out[r, 12] = 0.0

        # interacted OLS on baseline standardized to sample SD units,
        # leverage-adjusted (HC2) sandwich variance
        bs = (bobs - mean_b) / sd_b
        w[:, 2] = bs
        w[:, 3] = w[:, 1] * (bs - _mean(bs))
        gram = w.T @ w
        coeffs = np.linalg.solve(gram, w.T @ yobs)
        resid = yobs - w @ coeffs
        ginv = np.linalg.inv(gram)
        ee = np.empty(n)
        for i in range(n):
            lev = w[i] @ (ginv @ w[i])
            denom = 1.0 - lev
            if denom < 1e-12:
                denom = 1e-12
            ee[i] = resid[i] * resid[i] / denom
        meat = w.T @ (w * ee.reshape(n, 1))
        cov = ginv @ meat @ ginv
        out[r, 4] = coeffs[1]
        out[r, 5] = cov[1, 1]
        out[r, 6] = coeffs[3]
        out[r, 7] = cov[3, 3]

        # naive change-on-baseline slope, arms pooled, HC2 variance
        dbs = bs * (diffs - _mean(diffs))
        ss = (bs * bs).sum()
        slope = dbs.sum() / ss
        nresid = diffs - (_mean(diffs) - slope * _mean(bs)) - slope * bs
        lev2 = 1.0 / n + bs * bs / ss
        num = (bs * bs * nresid * nresid / (1.0 - lev2)).sum()
        out[r, 8] = slope
        out[r, 9] = num / (ss * ss)

        # plug-in regime from per-arm line fits, scored on the population
        ok0, a0, s0 = _linefit(bobs[:n0], yobs[:n0])
        ok1, a1, s1 = _linefit(bobs[n0:], yobs[n0:])
        if not (ok0 and ok1):
            out[r, 10] = np.nan
            out[r, 11] = np.nan
            out[r, 12] = 1.0
            continue
        dint = a1 - a0
        dslope = s1 - s0
        if dslope == 0.0:
            value = cum1[n_pop] if dint > 0.0 else cum0[n_pop]
        elif dslope > 0.0:
            cut = np.searchsorted(sort_b, -dint / dslope, side="right")
            value = cum0[cut] + (cum1[n_pop] - cum1[cut])
        else:
            cut = np.searchsorted(sort_b, -dint / dslope, side="left")
            value = cum1[cut] + (cum0[n_pop] - cum0[cut])
        out[r, 10] = value / n_pop
        out[r, 11] = mean_y1 if mean_t > mean_c else mean_y0
    return out


def _select_backend():
    if os.environ.get("SOILRCT_BACKEND", "").lower() == "numpy":
        return "numpy", _scenario_kernel_impl
    try:
        import numba
    except ImportError:
        return "numpy", _scenario_kernel_impl
    jit = numba.njit(cache=True, nogil=True)
    global _mean, _var1, _linefit
    _mean = jit(_mean)
    _var1 = jit(_var1)
    _linefit = jit(_linefit)
    return "numba", jit(_scenario_kernel_impl)


BACKEND, scenario_kernel = _select_backend()
