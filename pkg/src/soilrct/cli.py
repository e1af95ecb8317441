"""Batch command-line interface.

Three subcommands: `simulate` runs a scenario grid and writes metric
tables plus a manifest; `estimate` applies one estimator to a study CSV;
`policy` computes a treatment regime for a target population from a
study CSV.  Exit codes are stable: 0 success, 2 config or schema error,
3 scenario abort, 4 estimator failure, 5 infeasible budget.
"""

import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__, estimators, harness, kernels, policy
from .design import ObservedStudy
from .errors import (InfeasibleBudgetError, ScenarioAbortError, SchemaError,
                     SoilRctError)
from .population import FLOAT_FMT, Population

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_ESTIMATOR = 4
EXIT_BUDGET = 5

DEFAULT_SEED = 20250801

#: Config keys that mirror ScenarioGrid axes and parameters.
_GRID_KEYS = ("taus", "beta_mods", "sd_eps1s", "sample_sizes",
              "samples_per_plot", "n_replicates", "population_size",
              "mu_b", "sd_b_across", "mean_control_change",
              "sd_control_change", "sd_within_plot")
_TOP_KEYS = _GRID_KEYS + ("grid", "seed", "threads", "out")


class ConfigError(SoilRctError):
    """Invalid or unparsable run configuration."""


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = (f" at line {mark.line + 1}, column {mark.column + 1}"
                 if mark is not None else "")
        raise ConfigError(f"{path}: cannot parse config{where}: "
                          f"{getattr(exc, 'problem', exc)}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    unknown = sorted(set(doc) - set(_TOP_KEYS))
    if unknown:
        raise ConfigError(
            f"{path}: unknown config keys: {', '.join(unknown)}")
    return doc


def _as_float(value, key):
    if isinstance(value, str) and value.lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    return float(value)


def _normalize_grid_settings(config: dict) -> dict:
    settings = {}
    for key in ("taus", "beta_mods", "sd_eps1s"):
        if key in config:
            if not isinstance(config[key], list):
                raise ConfigError(f"{key}: expected a list")
            settings[key] = tuple(_as_float(v, key) for v in config[key])
    if "sample_sizes" in config:
        vals = config["sample_sizes"]
        if (not isinstance(vals, list)
                or any(isinstance(v, bool) or not isinstance(v, int)
                       for v in vals)):
            raise ConfigError("sample_sizes: expected a list of integers")
        settings["sample_sizes"] = tuple(vals)
    if "samples_per_plot" in config:
        if not isinstance(config["samples_per_plot"], list):
            raise ConfigError("samples_per_plot: expected a list")
        settings["samples_per_plot"] = tuple(
            _as_float(v, "samples_per_plot")
            for v in config["samples_per_plot"])
    for key in ("n_replicates", "population_size"):
        if key in config:
            if isinstance(config[key], bool) or not isinstance(config[key], int):
                raise ConfigError(f"{key}: expected an integer")
            settings[key] = config[key]
    for key in ("mu_b", "sd_b_across", "mean_control_change",
                "sd_control_change", "sd_within_plot"):
        if key in config:
            settings[key] = _as_float(config[key], key)
    return settings


def build_grid(grid_name: str, config: dict) -> harness.ScenarioGrid:
    settings = _normalize_grid_settings(config)
    try:
        if grid_name == "paper":
            return harness.ScenarioGrid.paper_defaults(**settings)
        if grid_name == "figure3":
            return harness.ScenarioGrid.power_curve_defaults(**settings)
        if grid_name == "custom":
            missing = [k for k in ("taus", "beta_mods", "sd_eps1s",
                                   "sample_sizes", "samples_per_plot")
                       if k not in settings]
            if missing:
                raise ConfigError(
                    f"custom grid requires keys: {', '.join(missing)}")
            return harness.ScenarioGrid(**settings)
    except SoilRctError:
        raise
    raise ConfigError(f"unknown grid {grid_name!r}")


def _canonical(obj):
    if isinstance(obj, float):
        if obj == math.inf:
            return "inf"
        return format(obj, FLOAT_FMT)
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def _grid_echo(grid: harness.ScenarioGrid) -> dict:
    return {key: getattr(grid, key) for key in _GRID_KEYS}


def grid_hash(grid: harness.ScenarioGrid, seed: int) -> str:
    doc = _canonical({"grid": _grid_echo(grid), "seed": seed})
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@click.group()
@click.version_option(__version__)
def main():
    """Design-based causal analysis and simulation for soil-carbon trials."""


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="YAML run configuration.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--out", "out_dir", type=click.Path(), default=".",
              help="Directory that will hold the run directory.")
@click.option("--threads", type=int, default=None,
              help="Worker threads for scenario execution.")
@click.option("--grid", "grid_name",
              type=click.Choice(["paper", "figure3", "custom"]),
              default=None, help="Scenario grid preset.")
def simulate(config_path, seed, out_dir, threads, grid_name):
    """Run a Monte Carlo scenario grid and write metric tables."""
    try:
        config = _load_config(config_path) if config_path else {}
        grid_name = grid_name or config.get("grid", "paper")
        if grid_name not in ("paper", "figure3", "custom"):
            raise ConfigError(f"unknown grid {grid_name!r}")
        seed = seed if seed is not None else config.get("seed", DEFAULT_SEED)
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError("seed: expected an integer")
        threads = threads if threads is not None else config.get("threads", 1)
        if isinstance(threads, bool) or not isinstance(threads, int) \
                or threads < 1:
            raise ConfigError("threads: expected a positive integer")
        out_dir = Path(config.get("out", out_dir)
                       if out_dir == "." else out_dir)
        grid = build_grid(grid_name, config)
    except SoilRctError as exc:
        _fail(EXIT_CONFIG, str(exc))

    digest = grid_hash(grid, seed)
    run_dir = out_dir / f"run-{seed}-{digest[:12]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        run = harness.run_grid(grid, seed, threads=threads)
    except ScenarioAbortError as exc:
        _fail(EXIT_ABORT, str(exc))

    rows = harness.metrics_rows(run)
    harness.metrics_to_csv(rows, run_dir / "metrics.csv")
    summary = harness.policy_summary(run)
    (run_dir / "policy_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_power_csv(harness.power_table(run), run_dir / "power_curves.csv")
    _write_attenuation_csv(harness.attenuation_table(run),
                           run_dir / "attenuation.csv")
    outputs = ["metrics.csv", "policy_summary.json", "power_curves.csv",
               "attenuation.csv"]
    manifest = {
        "version": __version__,
        "backend": kernels.BACKEND,
        "seed": seed,
        "threads": threads,
        "grid": grid_name,
        "config": _canonical(_grid_echo(grid)),
        "config_sha256": digest,
        "outputs": outputs,
    }
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    click.echo(str(run_dir))
    sys.exit(EXIT_OK)


def _write_power_csv(table, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["estimator", "n", "m", "tau", "tau_relative",
                         "power", "power_se"])
        for row in table:
            writer.writerow([
                row["estimator"], str(row["n"]), format(row["m"], FLOAT_FMT),
                format(row["tau"], FLOAT_FMT),
                format(row["tau_relative"], FLOAT_FMT),
                format(row["power"], FLOAT_FMT),
                format(row["power_se"], FLOAT_FMT)])


def _write_attenuation_csv(table, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["estimator", "n", "m", "tau", "beta_mod", "sd_eps1",
                         "bias", "bias_se", "coverage"])
        for row in table:
            writer.writerow([
                row["estimator"], str(row["n"]), format(row["m"], FLOAT_FMT),
                format(row["tau"], FLOAT_FMT),
                format(row["beta_mod"], FLOAT_FMT),
                format(row["sd_eps1"], FLOAT_FMT),
                format(row["bias"], FLOAT_FMT),
                format(row["bias_se"], FLOAT_FMT),
                format(row["coverage"], FLOAT_FMT)])


@main.command()
@click.argument("study_csv", type=click.Path())
@click.option("--estimator", "name",
              type=click.Choice(["dim", "did", "ols", "naive-mod"]),
              default="dim", help="Which estimator to apply.")
@click.option("--alpha", type=float, default=estimators.DEFAULT_ALPHA,
              help="Nominal two-sided error rate for the Wald interval.")
def estimate(study_csv, name, alpha):
    """Apply one treatment-effect estimator to an observed-study CSV."""
    try:
        study = ObservedStudy.from_csv(study_csv)
    except SchemaError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        lines = []
        if name == "dim":
            lines.append(estimators.diff_in_means(study, alpha).csv_row("dim"))
        elif name == "did":
            lines.append(estimators.diff_in_diffs(study, alpha).csv_row("did"))
        elif name == "ols":
            tau, mods, _ = estimators.ols_interaction(study, alpha)
            lines.append(tau.csv_row("ols"))
            for j, mod in enumerate(mods):
                lines.append(mod.csv_row(f"mod{j}"))
        else:
            lines.append(
                estimators.naive_moderator(study, alpha).csv_row("naive-mod"))
    except SoilRctError as exc:
        _fail(EXIT_ESTIMATOR, str(exc))
    click.echo("estimator,estimate,variance,ci_lower,ci_upper,alpha")
    for line in lines:
        click.echo(line)
    sys.exit(EXIT_OK)


def _read_target(path):
    """Target covariates for imputation: a population CSV (which also
    enables oracle evaluation) or a bare `plot_id,baseline` table."""
    with Path(path).open(newline="") as fh:
        header = next(csv.reader(fh), None)
    if header == ["plot_id", "baseline"]:
        baselines = []
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for lineno, row in enumerate(reader, start=2):
                try:
                    baselines.append(float(row[1]))
                except (IndexError, ValueError) as exc:
                    raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        if not baselines:
            raise SchemaError(f"{path}: no data rows")
        b = np.array(baselines)
        return np.column_stack([np.ones_like(b), b]), None
    pop = Population.from_csv(path)
    return pop.covariates, pop


def _read_costs(path, n_plots, n_arms, budget) -> policy.CostModel:
    expected = ["plot_id"] + [f"cost{k}" for k in range(n_arms)]
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise SchemaError(f"{path}: expected header {','.join(expected)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise SchemaError(f"{path}:{lineno}: wrong column count")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    if len(rows) != n_plots:
        raise SchemaError(
            f"{path}: {len(rows)} cost rows for {n_plots} target plots")
    return policy.CostModel(cost=np.array(rows), budget=budget)


@main.command("policy")
@click.argument("study_csv", type=click.Path())
@click.argument("target_csv", type=click.Path())
@click.option("--costs", "cost_csv", type=click.Path(), default=None,
              help="Per-plot, per-arm cost table.")
@click.option("--budget", type=float, default=None,
              help="Total budget; requires --costs.")
@click.option("--out", "out_dir", type=click.Path(), default=".",
              help="Directory for regime.csv and policy.json.")
def policy_cmd(study_csv, target_csv, cost_csv, budget, out_dir):
    """Estimate the best treatment regime for a target population."""
    try:
        study = ObservedStudy.from_csv(study_csv)
        target_cov, target_pop = _read_target(target_csv)
    except SchemaError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        coeffs = policy.fit_per_arm(study)
        imputed = policy.impute_population(coeffs, target_cov)
    except SoilRctError as exc:
        _fail(EXIT_ESTIMATOR, str(exc))
    try:
        if cost_csv is not None:
            costs = _read_costs(cost_csv, imputed.shape[0], imputed.shape[1],
                                math.inf if budget is None else budget)
            regime = policy.optimal_budgeted(imputed, costs)
            total_cost = costs.total_cost(regime.regime)
            budget_out = costs.budget
        else:
            if budget is not None:
                raise SchemaError("--budget requires --costs")
            regime = policy.optimal_unconstrained(imputed)
            total_cost = 0.0
            budget_out = math.inf
    except InfeasibleBudgetError as exc:
        _fail(EXIT_BUDGET, str(exc))
    except SchemaError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except SoilRctError as exc:
        _fail(EXIT_ESTIMATOR, str(exc))

    realized = (policy.realized_value(target_pop, regime)
                if target_pop is not None else None)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "regime.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["plot_id", "arm"])
        for i, arm in enumerate(regime.regime):
            writer.writerow([str(i), str(int(arm))])
    summary = {
        "predicted_mean": regime.predicted_mean,
        "realized_mean": realized,
        "total_cost": total_cost,
        "budget": "inf" if budget_out == math.inf else budget_out,
        "optimality_gap": regime.optimality_gap,
    }
    (out_dir / "policy.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    click.echo(str(out_dir / "regime.csv"))
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
