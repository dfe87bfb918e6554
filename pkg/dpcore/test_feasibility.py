import math

import pytest

from dpcore.exceptions import InvalidParameterError, InvalidStatisticsError
from dpcore.feasibility import (
    EconomicModel,
    expected_cost_from_breach_stats,
    is_feasible,
    max_feasible_epsilon,
)

CASE_STUDY = EconomicModel(budget_B=10000, expected_cost_E=34, population_N=10646)


def test_max_feasible_epsilon():
    assert max_feasible_epsilon(CASE_STUDY) == pytest.approx(0.0272523, abs=1e-7)
    assert round(max_feasible_epsilon(CASE_STUDY), 3) == 0.027

    tiny = EconomicModel(budget_B=1e-12, expected_cost_E=34, population_N=10646)
    assert 0 < max_feasible_epsilon(tiny) < 1e-15

    unit = EconomicModel(budget_B=(math.e - 1) * 34 * 100, expected_cost_E=34, population_N=100)
    assert max_feasible_epsilon(unit) == pytest.approx(1.0)


def test_max_feasible_epsilon_monotone():
    richer = EconomicModel(budget_B=20000, expected_cost_E=34, population_N=10646)
    costlier = EconomicModel(budget_B=10000, expected_cost_E=68, population_N=10646)
    larger = EconomicModel(budget_B=10000, expected_cost_E=34, population_N=20000)

    assert max_feasible_epsilon(richer) > max_feasible_epsilon(CASE_STUDY)
    assert max_feasible_epsilon(costlier) < max_feasible_epsilon(CASE_STUDY)
    assert max_feasible_epsilon(larger) < max_feasible_epsilon(CASE_STUDY)


def test_economic_model_validation():
    with pytest.raises(InvalidParameterError):
        EconomicModel(budget_B=0, expected_cost_E=34, population_N=10646)
    with pytest.raises(InvalidParameterError):
        EconomicModel(budget_B=10000, expected_cost_E=-1, population_N=10646)
    with pytest.raises(InvalidParameterError):
        EconomicModel(budget_B=10000, expected_cost_E=34, population_N=0)


def test_expected_cost_from_breach_stats():
    assert expected_cost_from_breach_stats(23.5e6, 293.75e6, 429) == pytest.approx(34.32)
    assert expected_cost_from_breach_stats(0, 1000, 429) == 0
    assert expected_cost_from_breach_stats(1000, 1000, 100) == 100

    with pytest.raises(InvalidStatisticsError):
        expected_cost_from_breach_stats(2000, 1000, 100)


def test_is_feasible():
    assert is_feasible(CASE_STUDY, 0.02)
    assert not is_feasible(CASE_STUDY, 0.2)
    assert is_feasible(CASE_STUDY, 1e-9)

    boundary = max_feasible_epsilon(CASE_STUDY)
    assert is_feasible(CASE_STUDY, boundary)
    assert not is_feasible(CASE_STUDY, boundary * (1 + 1e-6))

    with pytest.raises(InvalidParameterError):
        is_feasible(CASE_STUDY, 0.0)
