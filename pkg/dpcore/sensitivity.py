"""
Clipping and global sensitivity of the supported aggregate queries.

Every record belongs to exactly one individual. Counts and histograms hold
under neighbors that add or remove one record. Per-group means and sums treat
the group size as public and hold under neighbors that replace one record,
where a clipped sum moves by at most b - a. Under add/remove the clipped sum
moves by max(|a|, |b|), which is larger whenever a > 0.
"""

import math
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from dpcore.exceptions import (
    InvalidDataError,
    InvalidParameterError,
    UnstableBoundsError,
)
from dpcore.mechanisms import RandomSource, laplace_sample, laplace_scale

ADD_REMOVE = "add-remove"
REPLACE_ONE = "replace-one"
NEIGHBORING = (ADD_REMOVE, REPLACE_ONE)

DEFAULT_SEARCH_GROWTH = 2.0
DEFAULT_SEARCH_STABILITY_TOL = 0.01
DEFAULT_SEARCH_MAX_STEPS = 64

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClippingBounds:
    lower: float
    upper: float

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise InvalidParameterError("clipping bounds must be finite")
        if not self.lower < self.upper:
            raise InvalidParameterError(
                f"lower bound {self.lower} must be below upper bound {self.upper}"
            )

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return (self.lower + self.upper) / 2.0

    def __str__(self):
        return f"[{self.lower:g}, {self.upper:g}]"

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SensitivityValue:
    delta_f: float
    neighboring: str = ADD_REMOVE

    def __post_init__(self):
        if self.neighboring not in NEIGHBORING:
            raise InvalidParameterError(
                f"unknown neighboring relation {self.neighboring!r}"
            )
        if not self.delta_f > 0:
            raise InvalidParameterError(
                f"sensitivity must be positive, got {self.delta_f}"
            )


def clamp(value: float, bounds: ClippingBounds) -> float:
    if math.isnan(value):
        raise InvalidDataError("cannot clamp NaN")

    return min(max(value, bounds.lower), bounds.upper)


def clamp_array(values: Sequence[float], bounds: ClippingBounds) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if np.isnan(array).any():
        raise InvalidDataError("cannot clamp NaN")

    return np.clip(array, bounds.lower, bounds.upper)


def clipped_sum(values: Sequence[float], bounds: ClippingBounds) -> float:
    return float(np.sum(clamp_array(values, bounds)))


def count_sensitivity() -> SensitivityValue:
    return SensitivityValue(delta_f=1.0)


def clipped_sum_sensitivity(
    bounds: ClippingBounds, neighboring: str = REPLACE_ONE
) -> SensitivityValue:
    """
    Sensitivity of the sum of values clamped into [a, b].

    Replacing one record moves the sum by at most b - a. Adding or removing
    one record moves it by the clamped value itself, at most max(|a|, |b|).
    """
    match neighboring:
        case "replace-one":
            return SensitivityValue(delta_f=bounds.width, neighboring=REPLACE_ONE)
        case "add-remove":
            return SensitivityValue(
                delta_f=max(abs(bounds.lower), abs(bounds.upper)),
                neighboring=ADD_REMOVE,
            )
        case _:
            raise InvalidParameterError(
                f"unknown neighboring relation {neighboring!r}"
            )


def mean_sensitivity(bounds: ClippingBounds, n: int) -> SensitivityValue:
    """
    Sensitivity of the clipped mean over a group of public size n.

    Args:
        bounds (ClippingBounds): The clamp range [a, b].
        n (int): The group size.

    Returns:
        SensitivityValue: (b - a) / n.
    """
    if n < 1:
        raise InvalidParameterError(f"mean sensitivity needs n >= 1, got {n}")

    return SensitivityValue(delta_f=bounds.width / n, neighboring=REPLACE_ONE)


def _relative_change(previous: float, current: float) -> float:
    change = abs(current - previous)
    if previous == 0:
        return 0.0 if change == 0 else math.inf
    return change / abs(previous)


def dp_upper_bound_search(
    values: Sequence[float],
    epsilon_per_step: float,
    rng: RandomSource,
    start: float = 1.0,
    growth: float = DEFAULT_SEARCH_GROWTH,
    stability_tol: float = DEFAULT_SEARCH_STABILITY_TOL,
    max_steps: int = DEFAULT_SEARCH_MAX_STEPS,
    on_step: Callable[[int, float], None] | None = None,
) -> ClippingBounds:
    """
    Grow the upper clipping bound until a noisy clipped sum stabilizes.

    The lower bound is fixed at 0 and negative values are clamped to it. Step k
    evaluates the noisy clipped sum at upper = start * growth**k; the search
    stops at the first step whose relative change against the previous step
    falls below `stability_tol` and returns the previous candidate.

    Args:
        values: The attribute values.
        epsilon_per_step (float): Budget spent by each noisy evaluation.
        rng (RandomSource): The random source to draw from.
        start (float): First candidate upper bound.
        growth (float): Multiplicative growth between candidates.
        stability_tol (float): Relative change regarded as stable.
        max_steps (int): Maximum number of noisy evaluations.
        on_step: Called with (step, epsilon_per_step) before every evaluation,
            so the caller can charge its ledger first.

    Returns:
        ClippingBounds: [0, chosen upper].

    Raises:
        UnstableBoundsError: If no stable step occurs within max_steps.
    """
    if len(values) == 0:
        raise InvalidParameterError("bound search needs values")
    if start <= 0 or growth <= 1 or stability_tol <= 0 or max_steps < 1:
        raise InvalidParameterError("invalid bound search parameters")

    array = np.asarray(values, dtype=float)
    if np.isnan(array).any():
        raise InvalidDataError("bound search values contain NaN")

    previous = None
    upper = start
    for step in range(max_steps):
        upper = start * growth**step
        if on_step is not None:
            on_step(step, epsilon_per_step)

        bounds = ClippingBounds(0.0, upper)
        scale = laplace_scale(
            clipped_sum_sensitivity(bounds, ADD_REMOVE).delta_f, epsilon_per_step
        )
        noisy = clipped_sum(array, bounds) + laplace_sample(scale, rng)

        logger.debug(f"Bound search step {step}: upper {upper:g}")

        if previous is not None and _relative_change(previous, noisy) < stability_tol:
            return ClippingBounds(0.0, upper / growth)
        previous = noisy

    raise UnstableBoundsError(
        f"bound search did not stabilize within {max_steps} steps", upper
    )
