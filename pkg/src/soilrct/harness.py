"""Monte Carlo study harness.

A scenario grid crosses population parameters (constant effect, moderator
slope, idiosyncratic effect SD) with design parameters (enrolled plots,
soil samples per plot).  One population is generated per parameter
combination; each scenario then runs many replicates of enroll, assign,
measure, estimate through the compiled kernel and reduces them to metric
rows and a policy-value summary.

Randomness is derived from the master seed and a content hash of each
population or scenario, so results for one scenario never depend on which
other scenarios share the run, and thread count cannot affect output.
"""

import csv
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .errors import ParamError, ScenarioAbortError
from .population import (FLOAT_FMT, Population, PopulationParams,
                         generate_population, pate)
from .stats import norm_ppf

#: Reference baseline mean, used to express effects as relative sizes.
BASELINE_MEAN = 2.34

#: Replicate failure fraction beyond which a scenario aborts the run.
MAX_FAILURE_RATE = 0.01

_Z975 = norm_ppf(0.975)

#: Estimator column layout in the kernel output.
_EST_COLS = {"dim": 0, "did": 2, "ols": 4, "mod": 6, "naive": 8}
PATE_ESTIMATORS = ("dim", "did", "ols")
MODERATOR_ESTIMATORS = ("mod", "naive")


@dataclass(frozen=True)
class ScenarioGrid:
    """Cross product of population and design settings for one study."""

    taus: tuple
    beta_mods: tuple
    sd_eps1s: tuple
    sample_sizes: tuple
    samples_per_plot: tuple
    n_replicates: int = 500
    population_size: int = 5000
    mu_b: float = BASELINE_MEAN
    sd_b_across: float = 0.47
    mean_control_change: float = 0.16
    sd_control_change: float = math.sqrt(0.14)
    sd_within_plot: float = 1.02

    def __post_init__(self):
        for name in ("taus", "beta_mods", "sd_eps1s", "sample_sizes",
                     "samples_per_plot"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ParamError(f"{name} must be nonempty")
            object.__setattr__(self, name, vals)
        for n in self.sample_sizes:
            if not (isinstance(n, int) and n >= 4 and n % 2 == 0):
                raise ParamError(
                    f"sample sizes must be even integers >= 4, got {n}")
            if n > self.population_size:
                raise ParamError(
                    f"cannot enroll {n} from population of "
                    f"{self.population_size}")
        for m in self.samples_per_plot:
            if not (m == math.inf or (float(m).is_integer() and m >= 1)):
                raise ParamError(
                    f"samples_per_plot must be positive integers or inf, "
                    f"got {m}")
        if self.n_replicates < 1:
            raise ParamError("n_replicates must be >= 1")
        if self.population_size < 2:
            raise ParamError("population_size must be >= 2")

    @classmethod
    def paper_defaults(cls, **overrides) -> "ScenarioGrid":
        """The headline study grid: 24 populations by 12 designs."""
        base = dict(
            taus=tuple(v / 0.66 for v in (0.0, 0.05, 0.1, 0.3)),
            beta_mods=(0.0, -0.1, -0.5),
            sd_eps1s=(0.0, math.sqrt(0.1)),
            sample_sizes=(10, 100, 1000),
            samples_per_plot=(5.0, 30.0, 100.0, math.inf),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def power_curve_defaults(cls, **overrides) -> "ScenarioGrid":
        """Power study: small and medium trials over a ladder of effects
        expressed relative to the baseline mean, under strong moderation."""
        base = dict(
            taus=tuple(r * BASELINE_MEAN
                       for r in (0.0, 0.025, 0.05, 0.1, 0.2, 0.3)),
            beta_mods=(-0.5,),
            sd_eps1s=(math.sqrt(0.1),),
            sample_sizes=(14, 140),
            samples_per_plot=(5.0, 100.0),
        )
        base.update(overrides)
        return cls(**base)

    def population_params(self, tau: float, beta_mod: float,
                          sd_eps1: float) -> PopulationParams:
        return PopulationParams(
            mu_b=self.mu_b, sd_b_across=self.sd_b_across,
            mean_control_change=self.mean_control_change,
            sd_control_change=self.sd_control_change,
            tau=tau, beta_mod=beta_mod, sd_eps1=sd_eps1,
            n_plots=self.population_size)

    def sigma_delta(self, m) -> float:
        if m == math.inf:
            return 0.0
        return self.sd_within_plot / math.sqrt(m)


@dataclass(frozen=True)
class Scenario:
    """One cell of the grid: a population setting plus a design setting."""

    tau: float
    beta_mod: float
    sd_eps1: float
    n: int
    m: float

    @property
    def pop_key(self) -> tuple:
        return (self.tau, self.beta_mod, self.sd_eps1)


def grid_scenarios(grid: ScenarioGrid) -> list:
    """All scenarios in a fixed, documented order."""
    return [Scenario(tau=t, beta_mod=b, sd_eps1=e, n=n, m=float(m))
            for t, b, e, n, m in product(grid.taus, grid.beta_mods,
                                         grid.sd_eps1s, grid.sample_sizes,
                                         grid.samples_per_plot)]


def _content_spawn_key(tag: int, *parts) -> tuple:
    """Stable 128-bit spawn key from the identifying values themselves.

    Keying streams by content rather than by position means adding or
    removing grid entries never shifts the randomness of the others.
    """
    text = "|".join(format(p, FLOAT_FMT) if isinstance(p, float) else str(p)
                    for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    words = tuple(int.from_bytes(digest[4 * i:4 * i + 4], "little")
                  for i in range(4))
    return (tag,) + words


def population_rng(master_seed: int, tau, beta_mod, sd_eps1):
    key = _content_spawn_key(1, float(tau), float(beta_mod), float(sd_eps1))
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=key))


def scenario_rng(master_seed: int, scenario: Scenario):
    key = _content_spawn_key(2, scenario.tau, scenario.beta_mod,
                             scenario.sd_eps1, scenario.n, scenario.m)
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=key))


@dataclass(frozen=True)
class PopulationBundle:
    """A generated population plus the precomputed quantities the kernel
    and the policy summary need."""

    population: Population
    pate: float
    mean_y0: float
    mean_y1: float
    oracle_value: float
    sort_b: np.ndarray
    cum0: np.ndarray
    cum1: np.ndarray


def build_bundle(pop: Population) -> PopulationBundle:
    y0 = pop.po[:, 0]
    y1 = pop.po[:, 1]
    sort_b, cum0, cum1 = kernels.population_tables(pop.baseline, y0, y1)
    return PopulationBundle(
        population=pop, pate=pate(pop, 1),
        mean_y0=float(y0.mean()), mean_y1=float(y1.mean()),
        oracle_value=float(np.maximum(y0, y1).mean()),
        sort_b=sort_b, cum0=cum0, cum1=cum1)


@dataclass(frozen=True)
class ScenarioResult:
    """Raw kernel output for one scenario, with failure accounting."""

    scenario: Scenario
    raw: np.ndarray
    n_fail: int
    pate: float
    oracle_value: float

    def valid(self) -> np.ndarray:
        return self.raw[self.raw[:, 12] == 0.0]


def run_scenario(grid: ScenarioGrid, scenario: Scenario,
                 bundle: PopulationBundle, master_seed: int) -> ScenarioResult:
    """Execute every replicate of one scenario through the kernel."""
    rng = scenario_rng(master_seed, scenario)
    reps = grid.n_replicates
    n = scenario.n
    n_pop = bundle.population.n_plots
    perm = np.empty((reps, n), dtype=np.int64)
    for r in range(reps):
        perm[r] = rng.permutation(n_pop)[:n]
    noise = rng.standard_normal((reps, n, 2))
    pop = bundle.population
    raw = kernels.scenario_kernel(
        pop.baseline, np.ascontiguousarray(pop.po[:, 0]),
        np.ascontiguousarray(pop.po[:, 1]),
        bundle.sort_b, bundle.cum0, bundle.cum1,
        bundle.mean_y0, bundle.mean_y1,
        perm, noise, grid.sigma_delta(scenario.m), n // 2)
    n_fail = int((raw[:, 12] != 0.0).sum())
    if n_fail > MAX_FAILURE_RATE * reps:
        raise ScenarioAbortError(
            f"scenario {scenario}: {n_fail}/{reps} replicates failed, "
            f"exceeding the {MAX_FAILURE_RATE:.0%} tolerance")
    return ScenarioResult(scenario=scenario, raw=raw, n_fail=n_fail,
                          pate=bundle.pate,
                          oracle_value=bundle.oracle_value)


@dataclass(frozen=True)
class GridResult:
    """All scenario results of one run, in grid order."""

    grid: ScenarioGrid
    master_seed: int
    scenarios: list
    results: list
    bundles: dict


def run_grid(grid: ScenarioGrid, master_seed: int,
             threads: int = 1) -> GridResult:
    """Run the whole grid, optionally spreading scenarios over threads.

    Populations are generated up front, one per parameter combination.
    Output is identical for any thread count because each scenario owns
    a content-keyed random stream and results are ordered by the grid.
    """
    scenarios = grid_scenarios(grid)
    bundles = {}
    for sc in scenarios:
        if sc.pop_key not in bundles:
            rng = population_rng(master_seed, *sc.pop_key)
            pop = generate_population(
                grid.population_params(*sc.pop_key), rng)
            bundles[sc.pop_key] = build_bundle(pop)

    def one(sc):
        return run_scenario(grid, sc, bundles[sc.pop_key], master_seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, scenarios))
    else:
        results = [one(sc) for sc in scenarios]
    return GridResult(grid=grid, master_seed=master_seed,
                      scenarios=scenarios, results=results, bundles=bundles)


@dataclass(frozen=True)
class MetricsRow:
    """Per-scenario, per-estimator summary metrics."""

    tau: float
    beta_mod: float
    sd_eps1: float
    n: int
    m: float
    estimator: str
    target: float
    bias: float
    rmse: float
    coverage: float
    ci_width: float
    power: Optional[float]
    n_fail: int
    warnings: str


def _estimator_metrics(est: np.ndarray, var: np.ndarray, target: float,
                       with_power: bool):
    half = _Z975 * np.sqrt(var)
    err = est - target
    bias = float(err.mean())
    rmse = float(np.sqrt((err * err).mean()))
    coverage = float((np.abs(err) <= half).mean())
    ci_width = float((2.0 * half).mean())
    power = float((est - half > 0.0).mean()) if with_power else None
    return bias, rmse, coverage, ci_width, power


def scenario_metrics(result: ScenarioResult,
                     n_replicates: int) -> list:
    """Metric rows for every estimator of one scenario."""
    sc = result.scenario
    ok = result.valid()
    warn = []
    if result.n_fail:
        warn.append(f"failures={result.n_fail}")
    if n_replicates == 1:
        warn.append("single-replicate")
    rows = []
    for name in PATE_ESTIMATORS + MODERATOR_ESTIMATORS:
        with_power = name in PATE_ESTIMATORS
        target = result.pate if with_power else sc.beta_mod
        if ok.shape[0] == 0:
            bias = rmse = coverage = ci_width = math.nan
            power = math.nan if with_power else None
            row_warn = warn + ["no-valid-replicates"]
        else:
            col = _EST_COLS[name]
            bias, rmse, coverage, ci_width, power = _estimator_metrics(
                ok[:, col], ok[:, col + 1], target, with_power)
            row_warn = warn
        rows.append(MetricsRow(
            tau=sc.tau, beta_mod=sc.beta_mod, sd_eps1=sc.sd_eps1,
            n=sc.n, m=sc.m, estimator=name, target=target, bias=bias,
            rmse=rmse, coverage=coverage, ci_width=ci_width, power=power,
            n_fail=result.n_fail, warnings=";".join(row_warn)))
    return rows


def metrics_rows(run: GridResult) -> list:
    rows = []
    for result in run.results:
        rows.extend(scenario_metrics(result, run.grid.n_replicates))
    return rows


METRICS_HEADER = ["n", "m", "tau", "beta_mod", "sd_eps1", "estimator",
                  "target", "bias", "rmse", "coverage", "ci_width", "power",
                  "n_fail", "warnings"]


def metrics_to_csv(rows, path) -> None:
    """Write metric rows with a stable column order and full precision."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for r in rows:
            writer.writerow([
                str(r.n), format(r.m, FLOAT_FMT),
                format(r.tau, FLOAT_FMT), format(r.beta_mod, FLOAT_FMT),
                format(r.sd_eps1, FLOAT_FMT), r.estimator,
                format(r.target, FLOAT_FMT), format(r.bias, FLOAT_FMT),
                format(r.rmse, FLOAT_FMT), format(r.coverage, FLOAT_FMT),
                format(r.ci_width, FLOAT_FMT),
                "" if r.power is None else format(r.power, FLOAT_FMT),
                str(r.n_fail), r.warnings,
            ])


def metrics_from_csv(path) -> list:
    """Inverse of `metrics_to_csv` (exact for finite values)."""
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != METRICS_HEADER:
            raise ParamError(f"{path}: unexpected metrics header")
        for rec in reader:
            rows.append(MetricsRow(
                n=int(rec[0]), m=float(rec[1]), tau=float(rec[2]),
                beta_mod=float(rec[3]), sd_eps1=float(rec[4]),
                estimator=rec[5], target=float(rec[6]), bias=float(rec[7]),
                rmse=float(rec[8]), coverage=float(rec[9]),
                ci_width=float(rec[10]),
                power=None if rec[11] == "" else float(rec[11]),
                n_fail=int(rec[12]), warnings=rec[13]))
    return rows


@dataclass(frozen=True)
class AggregateRow:
    """Metrics averaged uniformly over scenarios sharing (n, estimator)."""

    n: int
    estimator: str
    bias: float
    rmse: float
    coverage: float
    ci_width: float
    n_scenarios: int


def aggregate_by_size(rows) -> dict:
    """Average treatment-effect metrics per (n, estimator), weighting each
    scenario equally.  Keys are (n, estimator) tuples."""
    groups = {}
    for r in rows:
        if r.estimator not in PATE_ESTIMATORS:
            continue
        groups.setdefault((r.n, r.estimator), []).append(r)
    out = {}
    for key, members in groups.items():
        out[key] = AggregateRow(
            n=key[0], estimator=key[1],
            bias=float(np.mean([m.bias for m in members])),
            rmse=float(np.mean([m.rmse for m in members])),
            coverage=float(np.mean([m.coverage for m in members])),
            ci_width=float(np.mean([m.ci_width for m in members])),
            n_scenarios=len(members))
    return out


def _policy_block(results) -> dict:
    oracle = float(np.mean([r.oracle_value for r in results]))
    est_means, restr_means = [], []
    for r in results:
        ok = r.valid()
        est_means.append(float(ok[:, 10].mean()))
        restr_means.append(float(ok[:, 11].mean()))
    return {
        "oracle": oracle,
        "estimated": float(np.mean(est_means)),
        "restricted": float(np.mean(restr_means)),
        "n_scenarios": len(results),
    }


def _gap_stats(results) -> dict:
    """Mean and SE of the estimated-minus-restricted realized value.

    Replicates are clustered within simulated populations: any incidental
    moderation in a finite population draw shifts every replicate on that
    population the same way, so the SE is taken across population-level
    means rather than pooled replicates.  With a single population the
    replicate-level SE is the only one available and is used instead.
    """
    by_pop = {}
    variances = []
    for r in results:
        ok = r.valid()
        gap = ok[:, 10] - ok[:, 11]
        by_pop.setdefault(r.scenario.pop_key, []).append(float(gap.mean()))
        variances.append(float(gap.var(ddof=1) / gap.shape[0])
                         if gap.shape[0] > 1 else 0.0)
    pop_means = np.array([np.mean(v) for v in by_pop.values()])
    if pop_means.shape[0] > 1:
        se = float(pop_means.std(ddof=1) / math.sqrt(pop_means.shape[0]))
    else:
        se = float(math.sqrt(sum(variances)) / len(results))
    return {
        "gap_mean": float(pop_means.mean()),
        "gap_se": se,
    }


def policy_summary(run: GridResult) -> dict:
    """Realized policy values: overall, on the null-effect slice, and the
    estimated-versus-restricted gap grouped by moderator strength.

    The headline comparison holds the constant effect at zero so that the
    gain reflects targeting alone; the all-scenario block is reported
    alongside it.
    """
    null_tau = [r for r in run.results if r.scenario.tau == 0.0]
    summary = {"all_scenarios": _policy_block(run.results)}
    if null_tau:
        summary["null_tau"] = _policy_block(null_tau)
        by_beta = {}
        for beta in sorted({r.scenario.beta_mod for r in null_tau}):
            members = [r for r in null_tau if r.scenario.beta_mod == beta]
            by_beta[format(beta, "g")] = _gap_stats(members)
        summary["null_tau_gap_by_beta_mod"] = by_beta
    return summary


def power_table(run: GridResult) -> list:
    """Power per (estimator, n, m, tau), with the effect also expressed
    relative to the baseline mean and a binomial Monte Carlo SE."""
    rows = metrics_rows(run)
    out = []
    for r in rows:
        if r.power is None or math.isnan(r.coverage):
            continue
        reps = run.grid.n_replicates - r.n_fail
        se = math.sqrt(max(r.power * (1.0 - r.power), 1e-12) / reps)
        out.append({
            "estimator": r.estimator, "n": r.n, "m": r.m, "tau": r.tau,
            "tau_relative": r.tau / BASELINE_MEAN, "power": r.power,
            "power_se": se,
        })
    return out


def attenuation_table(run: GridResult) -> list:
    """Moderator bias and coverage per (estimator, n, m), with the Monte
    Carlo SE of the bias for step-size comparisons."""
    out = []
    for result in run.results:
        sc = result.scenario
        ok = result.valid()
        if ok.shape[0] == 0:
            continue
        for name in MODERATOR_ESTIMATORS:
            col = _EST_COLS[name]
            est = ok[:, col]
            half = _Z975 * np.sqrt(ok[:, col + 1])
            err = est - sc.beta_mod
            out.append({
                "estimator": name, "n": sc.n, "m": sc.m, "tau": sc.tau,
                "beta_mod": sc.beta_mod, "sd_eps1": sc.sd_eps1,
                "bias": float(err.mean()),
                "bias_se": float(est.std(ddof=1) / math.sqrt(est.shape[0]))
                if est.shape[0] > 1 else math.nan,
                "coverage": float((np.abs(err) <= half).mean()),
            })
    return out
