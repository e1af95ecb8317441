import math

import numpy as np
import pytest

from soilrct.errors import DimensionError, ParamError, SchemaError
from soilrct.population import (Population, PopulationParams,
                                generate_population, papo, pate,
                                population_ols_coeffs)


def params(**overrides):
    base = dict(mu_b=2.34, sd_b_across=0.47, mean_control_change=0.16,
                sd_control_change=math.sqrt(0.14), tau=0.1, beta_mod=-0.5,
                sd_eps1=0.1, n_plots=500)
    base.update(overrides)
    return PopulationParams(**base)


def test_generation_is_deterministic():
    a = generate_population(params(), 7)
    b = generate_population(params(), 7)
    assert np.array_equal(a.baseline, b.baseline)
    assert np.array_equal(a.po, b.po)


def test_different_seeds_differ():
    a = generate_population(params(), 7)
    b = generate_population(params(), 8)
    assert not np.array_equal(a.baseline, b.baseline)


def test_null_population_has_equal_arms():
    pop = generate_population(params(tau=0.0, beta_mod=0.0, sd_eps1=0.0), 3)
    assert np.array_equal(pop.po[:, 0], pop.po[:, 1])
    assert pate(pop, 1) == 0.0


def test_constant_effect_shifts_pate_exactly():
    # with beta_mod = 0 and sd_eps1 = 0 every plot gains exactly tau
    pop = generate_population(params(tau=0.25, beta_mod=0.0, sd_eps1=0.0), 3)
    assert np.allclose(pop.po[:, 1] - pop.po[:, 0], 0.25)
    assert pate(pop, 1) == pytest.approx(0.25, abs=1e-12)


def test_moderator_term_is_standardized_in_population():
    pop = generate_population(params(tau=0.0, beta_mod=-0.5, sd_eps1=0.0),
                              11)
    ite = pop.po[:, 1] - pop.po[:, 0]
    b = pop.baseline
    scaled = (b - b.mean()) / b.std()
    assert np.allclose(ite, -0.5 * scaled)
    # standardization is over the realized population: mean 0, unit SD
    assert ite.mean() == pytest.approx(0.0, abs=1e-12)
    assert ite.std() == pytest.approx(0.5, abs=1e-12)


def test_moment_calibration_large_population():
    p = params(tau=0.2, beta_mod=-0.5, sd_eps1=0.1, n_plots=200_000)
    pop = generate_population(p, 19)
    assert pop.baseline.mean() == pytest.approx(2.34, abs=0.01)
    assert pop.baseline.std() == pytest.approx(0.47, abs=0.01)
    change = pop.po[:, 0] - pop.baseline
    assert change.mean() == pytest.approx(0.16, abs=0.01)
    assert change.std() == pytest.approx(math.sqrt(0.14), abs=0.01)
    assert pate(pop, 1) == pytest.approx(0.2, abs=0.01)


def test_papo_interpolates_between_arms():
    pop = generate_population(params(), 2)
    n = pop.n_plots
    all_control = papo(pop, np.zeros(n, dtype=int))
    all_treat = papo(pop, np.ones(n, dtype=int))
    assert all_control == pytest.approx(pop.po[:, 0].mean())
    assert all_treat == pytest.approx(pop.po[:, 1].mean())
    assert all_treat - all_control == pytest.approx(pate(pop, 1), abs=1e-12)
    mixed = np.zeros(n, dtype=int)
    mixed[: n // 2] = 1
    lo, hi = sorted([all_control, all_treat])
    assert lo - 1.0 < papo(pop, mixed) < hi + 1.0


def test_papo_rejects_bad_regimes():
    pop = generate_population(params(), 2)
    with pytest.raises(DimensionError):
        papo(pop, np.zeros(3, dtype=int))
    with pytest.raises(ParamError):
        papo(pop, np.full(pop.n_plots, 5))


def test_population_ols_intercept_only_is_column_mean():
    pop = generate_population(params(), 4)
    flat = Population(baseline=pop.baseline, po=pop.po,
                      covariates=np.ones((pop.n_plots, 1)))
    coeffs = population_ols_coeffs(flat, 1)
    assert coeffs == pytest.approx([pop.po[:, 1].mean()])


def test_population_validation():
    with pytest.raises(DimensionError):
        Population(baseline=np.array([1.0]), po=np.ones((1, 2)),
                   covariates=np.ones((1, 1)))
    with pytest.raises(ParamError):
        Population(baseline=np.array([1.0, 2.0]),
                   po=np.array([[1.0, np.inf], [1.0, 1.0]]),
                   covariates=np.ones((2, 1)))
    with pytest.raises(ParamError):
        Population(baseline=np.array([1.0, 2.0]), po=np.ones((2, 2)),
                   covariates=np.array([[2.0], [2.0]]))


def test_params_validation():
    with pytest.raises(ParamError):
        params(n_plots=1).validate()
    with pytest.raises(ParamError):
        params(sd_b_across=0.0).validate()
    with pytest.raises(ParamError):
        params(sd_eps1=-0.1).validate()
    with pytest.raises(ParamError):
        params(tau=math.nan).validate()


def test_csv_roundtrip_is_exact(tmp_path):
    pop = generate_population(params(n_plots=50), 13)
    path = tmp_path / "pop.csv"
    pop.to_csv(path)
    back = Population.from_csv(path)
    assert np.array_equal(back.baseline, pop.baseline)
    assert np.array_equal(back.po, pop.po)
    header = path.read_text().splitlines()[0]
    assert header == "plot_id,baseline,y0,y1"


def test_csv_rejects_bad_schema(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("plot,baseline,y0,y1\n0,1,1,1\n")
    with pytest.raises(SchemaError):
        Population.from_csv(path)
    path.write_text("plot_id,baseline,y0,y1\n0,1,1\n")
    with pytest.raises(SchemaError):
        Population.from_csv(path)
    path.write_text("plot_id,baseline,y0,y1\n0,1,x,1\n")
    with pytest.raises(SchemaError):
        Population.from_csv(path)
