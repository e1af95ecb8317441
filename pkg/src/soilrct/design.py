"""Study design: enrollment, randomization, and measurement.

Enrollment is simple random sampling without replacement; treatment is a
completely randomized design (uniform partition into arms of fixed
sizes).  Both are realized by one uniform permutation of the population:
the first `n` permuted plots are enrolled, and consecutive blocks of the
sample receive consecutive arm labels.  Measurement error with SD
`sd_within_plot / sqrt(samples_per_plot)` is added independently to the
baseline and follow-up observations.
"""

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (DesignError, DimensionError, EnrollmentError, ParamError,
                     SchemaError, SizeLimitError)
from .population import FLOAT_FMT, Population

#: Guard for exhaustive assignment enumeration.
MAX_ENUMERATION_N = 12


@dataclass(frozen=True)
class DesignSpec:
    """Completely randomized design with plot-level measurement noise.

    `samples_per_plot` may be a positive integer or `math.inf`, in which
    case observations reproduce the plot values exactly.
    """

    n_enrolled: int
    arm_sizes: tuple[int, ...]
    samples_per_plot: float = math.inf
    sd_within_plot: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "arm_sizes", tuple(int(k) for k in self.arm_sizes))
        if len(self.arm_sizes) < 2:
            raise DesignError("need at least two arms")
        if any(k < 1 for k in self.arm_sizes):
            raise DesignError(f"every arm needs >= 1 plot, got {self.arm_sizes}")
        if sum(self.arm_sizes) != self.n_enrolled:
            raise DesignError(
                f"arm sizes {self.arm_sizes} do not sum to n_enrolled "
                f"{self.n_enrolled}")
        if self.sd_within_plot < 0:
            raise DesignError("sd_within_plot must be nonnegative")
        m = self.samples_per_plot
        if not (m == math.inf or (float(m).is_integer() and m >= 1)):
            raise DesignError(
                f"samples_per_plot must be a positive integer or inf, got {m}")

    @property
    def n_arms(self) -> int:
        return len(self.arm_sizes)

    @property
    def sigma_delta(self) -> float:
        """Measurement SD per observation: sd_within_plot / sqrt(m)."""
        if self.samples_per_plot == math.inf:
            return 0.0
        return self.sd_within_plot / math.sqrt(self.samples_per_plot)


@dataclass(frozen=True)
class ObservedStudy:
    """What the analyst sees after the study: (B, Y, Z) plus provenance."""

    baseline_obs: np.ndarray
    outcome_obs: np.ndarray
    arm: np.ndarray
    source_index: np.ndarray
    covariates_obs: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        b = np.ascontiguousarray(self.baseline_obs, dtype=np.float64)
        y = np.ascontiguousarray(self.outcome_obs, dtype=np.float64)
        z = np.ascontiguousarray(self.arm, dtype=np.intp)
        s = np.ascontiguousarray(self.source_index, dtype=np.intp)
        cov = self.covariates_obs
        if cov is None:
            cov = np.column_stack([np.ones_like(b), b])
        cov = np.ascontiguousarray(cov, dtype=np.float64)
        n = b.shape[0]
        if not (y.shape == z.shape == s.shape == (n,)):
            raise DimensionError("study columns must all have equal length")
        if cov.shape[0] != n or not np.all(cov[:, 0] == 1.0):
            raise DimensionError(
                "covariates_obs must have one row per plot and a leading "
                "column of ones")
        if z.min() < 0:
            raise DesignError("arm labels must be nonnegative")
        if np.unique(s).size != n:
            raise DesignError("source_index entries must be distinct")
        for name, arr in (("baseline_obs", b), ("outcome_obs", y),
                          ("arm", z), ("source_index", s),
                          ("covariates_obs", cov)):
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.baseline_obs.shape[0]

    @property
    def n_arms(self) -> int:
        return int(self.arm.max()) + 1

    @property
    def diffs(self) -> np.ndarray:
        """Follow-up minus baseline, D_i = Y_i - B_i."""
        return self.outcome_obs - self.baseline_obs

    def arm_counts(self) -> np.ndarray:
        return np.bincount(self.arm, minlength=self.n_arms)

    def to_csv(self, path) -> None:
        """Write `plot_id,source_index,arm,baseline_obs,outcome_obs`."""
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["plot_id", "source_index", "arm", "baseline_obs",
                 "outcome_obs"])
            for i in range(self.n):
                writer.writerow([
                    str(i), str(int(self.source_index[i])),
                    str(int(self.arm[i])),
                    format(self.baseline_obs[i], FLOAT_FMT),
                    format(self.outcome_obs[i], FLOAT_FMT),
                ])

    @classmethod
    def from_csv(cls, path) -> "ObservedStudy":
        path = Path(path)
        expected = ["plot_id", "source_index", "arm", "baseline_obs",
                    "outcome_obs"]
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != expected:
                raise SchemaError(
                    f"{path}: expected header {','.join(expected)}")
            src, arm, b, y = [], [], [], []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(expected):
                    raise SchemaError(f"{path}:{lineno}: wrong column count")
                try:
                    src.append(int(row[1]))
                    arm.append(int(row[2]))
                    b.append(float(row[3]))
                    y.append(float(row[4]))
                except ValueError as exc:
                    raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        if not b:
            raise SchemaError(f"{path}: no data rows")
        return cls(baseline_obs=np.array(b), outcome_obs=np.array(y),
                   arm=np.array(arm), source_index=np.array(src))


def arm_labels(spec: DesignSpec) -> np.ndarray:
    """Arm label vector in block order: n_0 zeros, n_1 ones, ..."""
    return np.repeat(np.arange(spec.n_arms, dtype=np.intp), spec.arm_sizes)


def enroll_and_assign(pop: Population, spec: DesignSpec, seed) -> ObservedStudy:
    """Enroll by SRS, assign by complete randomization, add measurement noise.

    `seed` may be anything `numpy.random.default_rng` accepts, or an
    existing Generator.
    """
    if spec.n_enrolled > pop.n_plots:
        raise EnrollmentError(
            f"cannot enroll {spec.n_enrolled} plots from a population of "
            f"{pop.n_plots}")
    if spec.n_arms != pop.n_arms:
        raise DesignError(
            f"design has {spec.n_arms} arms but population has {pop.n_arms}")
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    source = rng.permutation(pop.n_plots)[:spec.n_enrolled]
    z = arm_labels(spec)
    noise = rng.standard_normal((spec.n_enrolled, 2))
    sd = spec.sigma_delta
    baseline_obs = pop.baseline[source] + sd * noise[:, 0]
    outcome_obs = pop.po[source, z] + sd * noise[:, 1]
    return ObservedStudy(baseline_obs=baseline_obs, outcome_obs=outcome_obs,
                         arm=z, source_index=source)


def assignment_enumeration(n: int, n1: int) -> Iterator[np.ndarray]:
    """Yield every binary assignment of `n` plots with exactly `n1` treated.

    Guarded at n <= 12 to keep the C(n, n1) enumeration tractable.
    """
    if n > MAX_ENUMERATION_N:
        raise SizeLimitError(
            f"exhaustive enumeration is limited to n <= {MAX_ENUMERATION_N}, "
            f"got {n}")
    if not 0 <= n1 <= n:
        raise ParamError(f"need 0 <= n1 <= n, got n1={n1}, n={n}")
    for treated in combinations(range(n), n1):
        z = np.zeros(n, dtype=np.intp)
        z[list(treated)] = 1
        yield z
