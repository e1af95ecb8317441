"""Finite populations of potential outcomes.

A population is a fixed table: one row per plot, holding the baseline
%SOC value, the potential outcome under every arm, and the covariate row
used for regression decompositions.  Nothing here is random once the
table is built; all randomness lives in the generator and in the study
design.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linalg
from .errors import DimensionError, ParamError, SchemaError

#: Format spec that round-trips IEEE doubles through text exactly.
FLOAT_FMT = ".17g"


@dataclass(frozen=True)
class PopulationParams:
    """Generative parameters for a synthetic binary-arm population.

    `tau` is the constant component of the treatment effect, `beta_mod`
    the moderator slope per standard deviation of baseline %SOC, and
    `sd_eps1` the SD of the idiosyncratic treatment-effect noise.
    """

    mu_b: float
    sd_b_across: float
    mean_control_change: float
    sd_control_change: float
    tau: float
    beta_mod: float
    sd_eps1: float
    n_plots: int

    def validate(self) -> None:
        if self.n_plots < 2:
            raise ParamError(f"n_plots must be >= 2, got {self.n_plots}")
        if not self.sd_b_across > 0:
            raise ParamError(
                f"sd_b_across must be positive, got {self.sd_b_across}")
        if self.sd_control_change < 0:
            raise ParamError(
                f"sd_control_change must be nonnegative, got "
                f"{self.sd_control_change}")
        if self.sd_eps1 < 0:
            raise ParamError(f"sd_eps1 must be nonnegative, got {self.sd_eps1}")
        for name in ("mu_b", "mean_control_change", "tau", "beta_mod"):
            if not np.isfinite(getattr(self, name)):
                raise ParamError(f"{name} must be finite")


@dataclass(frozen=True)
class Population:
    """Potential-outcome table for `n_plots` plots under `n_arms` arms.

    `po[i, k]` is the %SOC outcome plot i would show under arm k (arm 0
    is control).  `covariates` has an all-ones first column.
    """

    baseline: np.ndarray
    po: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        baseline = np.ascontiguousarray(self.baseline, dtype=np.float64)
        po = np.ascontiguousarray(self.po, dtype=np.float64)
        cov = np.ascontiguousarray(self.covariates, dtype=np.float64)
        object.__setattr__(self, "baseline", baseline)
        object.__setattr__(self, "po", po)
        object.__setattr__(self, "covariates", cov)
        n = baseline.shape[0]
        if baseline.ndim != 1 or n < 2:
            raise DimensionError("baseline must be a vector of length >= 2")
        if po.ndim != 2 or po.shape[0] != n or po.shape[1] < 2:
            raise DimensionError(
                f"po must be {n} x K with K >= 2, got shape {po.shape}")
        if not np.all(np.isfinite(po)) or not np.all(np.isfinite(baseline)):
            raise ParamError("potential outcomes and baseline must be finite")
        if cov.ndim != 2 or cov.shape[0] != n or cov.shape[1] < 1:
            raise DimensionError(
                f"covariates must be {n} x p with p >= 1, got {cov.shape}")
        if not np.all(cov[:, 0] == 1.0):
            raise ParamError("first covariate column must be identically 1")

    @property
    def n_plots(self) -> int:
        return self.baseline.shape[0]

    @property
    def n_arms(self) -> int:
        return self.po.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def to_csv(self, path) -> None:
        """Write `plot_id,baseline,y0,y1[,...]` at full double precision."""
        path = Path(path)
        header = ["plot_id", "baseline"] + [f"y{k}" for k in range(self.n_arms)]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.n_plots):
                row = [str(i), format(self.baseline[i], FLOAT_FMT)]
                row += [format(v, FLOAT_FMT) for v in self.po[i]]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "Population":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:2] != ["plot_id", "baseline"]:
                raise SchemaError(
                    f"{path}: expected header starting 'plot_id,baseline'")
            arm_cols = header[2:]
            if arm_cols != [f"y{k}" for k in range(len(arm_cols))]:
                raise SchemaError(f"{path}: arm columns must be y0,y1,...")
            baseline, po = [], []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise SchemaError(f"{path}:{lineno}: wrong column count")
                try:
                    baseline.append(float(row[1]))
                    po.append([float(v) for v in row[2:]])
                except ValueError as exc:
                    raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        b = np.array(baseline)
        covariates = np.column_stack([np.ones_like(b), b])
        return cls(baseline=b, po=np.array(po), covariates=covariates)


def generate_population(params: PopulationParams, seed) -> Population:
    """Draw a binary-arm population from the linear moderator model.

    Baseline is normal; the control outcome adds a normal change; the
    treated outcome adds a constant effect, a moderator term linear in
    baseline standardized over the realized population (mean 0, unit SD),
    and idiosyncratic normal noise.  Deterministic for a fixed seed.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    n = params.n_plots
    b = rng.normal(params.mu_b, params.sd_b_across, size=n)
    eps0 = rng.normal(params.mean_control_change, params.sd_control_change,
                      size=n)
    eps1 = rng.normal(0.0, params.sd_eps1, size=n)
    y0 = b + eps0
    sd_b = b.std()
    if sd_b == 0.0:
        raise ParamError("degenerate baseline draw: zero spread")
    b_tilde = (b - b.mean()) / sd_b
    y1 = y0 + params.tau + params.beta_mod * b_tilde + eps1
    covariates = np.column_stack([np.ones(n), b])
    return Population(baseline=b, po=np.column_stack([y0, y1]),
                      covariates=covariates)


def papo(pop: Population, regime: np.ndarray) -> float:
    """Population average potential outcome under a per-plot regime."""
    regime = np.asarray(regime)
    if regime.shape != (pop.n_plots,):
        raise DimensionError(
            f"regime length {regime.shape} does not match population "
            f"of {pop.n_plots} plots")
    if regime.min() < 0 or regime.max() >= pop.n_arms:
        raise ParamError("regime entries must be valid arm indices")
    return float(pop.po[np.arange(pop.n_plots), regime.astype(np.intp)].mean())


def pate(pop: Population, arm: int) -> float:
    """Average effect of treating every plot with `arm` versus control."""
    if not 0 <= arm < pop.n_arms:
        raise ParamError(f"arm must be in [0, {pop.n_arms}), got {arm}")
    if arm == 0:
        return 0.0
    return float((pop.po[:, arm] - pop.po[:, 0]).mean())


def population_ols_coeffs(pop: Population, arm: int) -> np.ndarray:
    """Finite-population least-squares coefficients of arm `arm` on the
    covariates.  Residuals sum to zero because of the intercept column."""
    if not 0 <= arm < pop.n_arms:
        raise ParamError(f"arm must be in [0, {pop.n_arms}), got {arm}")
    return linalg.least_squares(pop.covariates, pop.po[:, arm])
