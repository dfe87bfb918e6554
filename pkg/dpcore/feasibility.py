"""
Economic feasibility of epsilon under the budget constraint (e^eps - 1) E N <= B.

B is the study budget, E the expected cost an individual already bears without
participating, and N the number of participants. Currency units are opaque.
"""

import math
import logging
from dataclasses import asdict, dataclass

from dpcore.exceptions import InvalidParameterError, InvalidStatisticsError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EconomicModel:
    budget_B: float
    expected_cost_E: float
    population_N: int

    def __post_init__(self):
        if not self.budget_B > 0:
            raise InvalidParameterError(f"budget must be positive, got {self.budget_B}")
        if not self.expected_cost_E > 0:
            raise InvalidParameterError(
                f"expected cost must be positive, got {self.expected_cost_E}"
            )
        if not self.population_N > 0:
            raise InvalidParameterError(
                f"population must be positive, got {self.population_N}"
            )

    def as_dict(self):
        return asdict(self)


def max_feasible_epsilon(model: EconomicModel) -> float:
    """Return ln(1 + B / (E N)), the boundary of the budget constraint."""
    return math.log1p(model.budget_B / (model.expected_cost_E * model.population_N))


def expected_cost_from_breach_stats(
    annual_affected: float, population: float, breach_cost: float
) -> float:
    """
    Expected per-individual loss from breaches outside the study.

    Args:
        annual_affected (float): People affected by breaches per year.
        population (float): Population the breaches are drawn from.
        breach_cost (float): Average cost of one breach per person.

    Returns:
        float: (annual_affected / population) * breach_cost.
    """
    if annual_affected < 0 or not population > 0 or breach_cost < 0:
        raise InvalidStatisticsError("breach statistics must be nonnegative")
    if annual_affected > population:
        raise InvalidStatisticsError(
            f"affected count {annual_affected:g} exceeds population {population:g}"
        )

    return (annual_affected / population) * breach_cost


def is_feasible(model: EconomicModel, epsilon: float) -> bool:
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon}")

    cost = math.expm1(epsilon) * model.expected_cost_E * model.population_N
    # relative slack absorbs rounding at the boundary itself
    return cost <= model.budget_B * (1 + 1e-12)
