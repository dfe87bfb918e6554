"""
Differentially private aggregates: count, sum, mean, median and histogram.

Every aggregate takes its own epsilon and random source and leaves budget
accounting to the caller. Passing `delta > 0` routes the additive aggregates
through the Gaussian mechanism instead of Laplace.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from dpcore.exceptions import EmptyGroupError, InvalidParameterError
from dpcore.mechanisms import (
    Mechanism,
    PrivacyParams,
    RandomSource,
    exponential_choice,
    gaussian_samples,
    gaussian_sigma,
    laplace_accuracy,
    laplace_samples,
    laplace_scale,
)
from dpcore.sensitivity import (
    REPLACE_ONE,
    ClippingBounds,
    clamp,
    clamp_array,
    clipped_sum,
    clipped_sum_sensitivity,
    count_sensitivity,
    mean_sensitivity,
)

OTHER_BIN = "other"
MEDIAN_UTILITY_SENSITIVITY = 1.0

# Two-sided 95% quantile of the standard normal
_GAUSSIAN_Z95 = 1.959964

logger = logging.getLogger(__name__)


@dataclass
class NoisyResult:
    query_id: str
    value: float | list[float]
    epsilon_spent: float
    mechanism: Mechanism
    bounds: ClippingBounds | None = None
    clamped: bool = False
    delta_spent: float = 0.0
    input_bounds: ClippingBounds | None = None
    accuracy_95: float | None = None
    bin_labels: list[str] | None = None
    bin_edges: list[float] | None = None

    def as_dict(self):
        data = asdict(self)
        data["mechanism"] = str(self.mechanism)
        return data


@dataclass(frozen=True)
class HistogramSpec:
    """
    Binning of one column.

    Either `categories` (explicit labels, plus a reserved "other" bin for
    values outside the list) or the numeric triple (`minimum`, `maximum`,
    `bin_count`) of equal-width bins over the clamped domain.
    """

    column: str
    categories: tuple[str, ...] | None = None
    minimum: float | None = None
    maximum: float | None = None
    bin_count: int | None = None
    units: str = ""

    def __post_init__(self):
        numeric = (self.minimum, self.maximum, self.bin_count)
        if self.categories is not None:
            if any(v is not None for v in numeric):
                raise InvalidParameterError(
                    f"histogram {self.column}: categories and numeric bins are exclusive"
                )
            if not self.categories or len(set(self.categories)) != len(self.categories):
                raise InvalidParameterError(
                    f"histogram {self.column}: categories must be unique and nonempty"
                )
            if OTHER_BIN in self.categories:
                raise InvalidParameterError(
                    f"histogram {self.column}: '{OTHER_BIN}' is a reserved bin"
                )
        else:
            if any(v is None for v in numeric):
                raise InvalidParameterError(
                    f"histogram {self.column}: numeric bins need minimum, maximum and bin_count"
                )
            if self.bin_count < 1:
                raise InvalidParameterError(
                    f"histogram {self.column}: bin_count must be at least 1"
                )
            ClippingBounds(self.minimum, self.maximum)

    @property
    def is_categorical(self) -> bool:
        return self.categories is not None

    @property
    def edges(self) -> list[float] | None:
        if self.is_categorical:
            return None
        return np.linspace(self.minimum, self.maximum, self.bin_count + 1).tolist()

    @property
    def labels(self) -> list[str]:
        if self.is_categorical:
            return list(self.categories) + [OTHER_BIN]
        edges = self.edges
        return [f"{lo:g}-{hi:g}" for lo, hi in zip(edges[:-1], edges[1:])]

    def counts(self, values: Sequence) -> np.ndarray:
        """True (non-private) bin counts."""
        if self.is_categorical:
            index = {label: i for i, label in enumerate(self.categories)}
            counts = np.zeros(len(self.categories) + 1)
            for value in values:
                counts[index.get(str(value), len(self.categories))] += 1
            return counts

        clamped = clamp_array(values, ClippingBounds(self.minimum, self.maximum))
        counts, _ = np.histogram(
            clamped, bins=self.bin_count, range=(self.minimum, self.maximum)
        )
        return counts.astype(float)


def _noise_profile(
    sensitivity: float, epsilon: float, delta: float
) -> tuple[Mechanism, float]:
    """Return (mechanism, 95% accuracy) of additive noise at this calibration."""
    if delta > 0:
        params = PrivacyParams(epsilon, delta)
        return Mechanism.GAUSSIAN, _GAUSSIAN_Z95 * gaussian_sigma(sensitivity, params)

    return Mechanism.LAPLACE, laplace_accuracy(laplace_scale(sensitivity, epsilon), 0.05)


def _noise_samples(
    sensitivity: float, epsilon: float, delta: float, size: int, rng: RandomSource
) -> np.ndarray:
    if delta > 0:
        return gaussian_samples(sensitivity, PrivacyParams(epsilon, delta), size, rng)

    return laplace_samples(laplace_scale(sensitivity, epsilon), size, rng)


def _additive_noise(
    sensitivity: float, epsilon: float, delta: float, rng: RandomSource
) -> tuple[float, Mechanism, float]:
    """Draw one noise value; returns (noise, mechanism, 95% accuracy)."""
    mechanism, accuracy = _noise_profile(sensitivity, epsilon, delta)
    noise = float(_noise_samples(sensitivity, epsilon, delta, 1, rng)[0])
    return noise, mechanism, accuracy


def _check_epsilon(epsilon: float):
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon}")


def _round_counts(values: np.ndarray) -> np.ndarray:
    return np.maximum(np.rint(values), 0.0)


def noisy_counts(
    n: int, epsilon: float, size: int, rng: RandomSource, *, delta: float = 0.0
) -> np.ndarray:
    """
    Draw `size` independent releases of the count n.

    Each release adds noise calibrated to sensitivity 1, rounds to the nearest
    integer and floors at zero. `dp_count` is one draw of this.
    """
    _check_epsilon(epsilon)

    noise = _noise_samples(count_sensitivity().delta_f, epsilon, delta, size, rng)
    return _round_counts(n + noise)


def noisy_clipped_sums(
    values: Sequence[float],
    bounds: ClippingBounds,
    epsilon: float,
    size: int,
    rng: RandomSource,
    *,
    delta: float = 0.0,
    neighboring: str = REPLACE_ONE,
) -> np.ndarray:
    """Draw `size` independent releases of the clipped sum; see `dp_sum`."""
    _check_epsilon(epsilon)

    sensitivity = clipped_sum_sensitivity(bounds, neighboring).delta_f
    return clipped_sum(values, bounds) + _noise_samples(
        sensitivity, epsilon, delta, size, rng
    )


def dp_count(
    values: Sequence,
    epsilon: float,
    rng: RandomSource,
    *,
    query_id: str = "count",
    delta: float = 0.0,
) -> NoisyResult:
    _check_epsilon(epsilon)

    mechanism, accuracy = _noise_profile(count_sensitivity().delta_f, epsilon, delta)
    value = noisy_counts(len(values), epsilon, 1, rng, delta=delta)[0]
    return NoisyResult(
        query_id=query_id,
        value=float(value),
        epsilon_spent=epsilon,
        delta_spent=delta,
        mechanism=mechanism,
        accuracy_95=accuracy,
    )


def dp_sum(
    values: Sequence[float],
    bounds: ClippingBounds,
    epsilon: float,
    rng: RandomSource,
    *,
    query_id: str = "sum",
    delta: float = 0.0,
    neighboring: str = REPLACE_ONE,
) -> NoisyResult:
    """
    Clipped sum with additive noise.

    The default calibration is b - a, which covers neighbors that replace one
    record. Pass `neighboring=ADD_REMOVE` when neighbors add or remove a record;
    the noise is then calibrated to max(|a|, |b|).
    """
    _check_epsilon(epsilon)

    sensitivity = clipped_sum_sensitivity(bounds, neighboring).delta_f
    mechanism, accuracy = _noise_profile(sensitivity, epsilon, delta)
    value = noisy_clipped_sums(
        values, bounds, epsilon, 1, rng, delta=delta, neighboring=neighboring
    )[0]
    return NoisyResult(
        query_id=query_id,
        value=float(value),
        epsilon_spent=epsilon,
        delta_spent=delta,
        mechanism=mechanism,
        input_bounds=bounds,
        accuracy_95=accuracy,
    )


def dp_mean(
    values: Sequence[float],
    bounds: ClippingBounds,
    epsilon: float,
    rng: RandomSource,
    *,
    query_id: str = "mean",
    delta: float = 0.0,
) -> NoisyResult:
    """
    Clipped mean over a group of public size n, clamped back into bounds.

    Args:
        values: The group's attribute values.
        bounds (ClippingBounds): Input clipping and output clamping range.
        epsilon (float): Budget of this query.
        rng (RandomSource): The random source to draw from.

    Returns:
        NoisyResult: `clamped` is set when the noisy mean fell outside bounds.

    Raises:
        EmptyGroupError: If values is empty.
    """
    _check_epsilon(epsilon)
    if len(values) == 0:
        raise EmptyGroupError(f"{query_id}: mean of an empty group")

    true_mean = float(np.mean(clamp_array(values, bounds)))
    noise, mechanism, accuracy = _additive_noise(
        mean_sensitivity(bounds, len(values)).delta_f, epsilon, delta, rng
    )
    noisy = true_mean + noise
    value = clamp(noisy, bounds)

    return NoisyResult(
        query_id=query_id,
        value=value,
        epsilon_spent=epsilon,
        delta_spent=delta,
        mechanism=mechanism,
        bounds=bounds,
        clamped=value != noisy,
        input_bounds=bounds,
        accuracy_95=accuracy,
    )


@dataclass
class MedianPieces:
    """
    Piecewise-constant utility of the rank-based median over [lower, upper].

    Pieces alternate between open intervals between consecutive distinct
    clamped values and the values themselves (zero-length pieces). A point o
    has utility #{x = o} - |#{x < o} - #{x > o}|, so records tied at o count
    toward whichever side is short. Inside an open interval no record equals
    o and the utility is the plain rank distance -|#{x < o} - #{x > o}|.
    """

    lows: np.ndarray
    highs: np.ndarray
    utilities: np.ndarray
    lengths: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lengths = self.highs - self.lows

    @staticmethod
    def build(values: Sequence[float], bounds: ClippingBounds) -> "MedianPieces":
        clamped = clamp_array(values, bounds)
        n = len(clamped)
        distinct, counts = np.unique(clamped, return_counts=True)

        lows, highs, utilities = [], [], []
        previous = bounds.lower
        below = 0
        for value, count in zip(distinct.tolist(), counts.tolist()):
            if value > previous:
                lows.append(previous)
                highs.append(value)
                utilities.append(-abs(below - (n - below)))
            lows.append(value)
            highs.append(value)
            utilities.append(count - abs(below - (n - below - count)))
            below += count
            previous = value
        if bounds.upper > previous:
            lows.append(previous)
            highs.append(bounds.upper)
            utilities.append(-abs(n - 0))

        return MedianPieces(
            lows=np.asarray(lows, dtype=float),
            highs=np.asarray(highs, dtype=float),
            utilities=np.asarray(utilities, dtype=float),
        )

    def argmax_midpoint(self) -> float:
        """
        Midpoint of the span covered by the maximum-utility pieces.

        The maximisers form one contiguous run: the middle value for odd n,
        and everything between the two middle values for even n. The midpoint
        of that run is the ordinary median of the clamped values.
        """
        best = np.flatnonzero(self.utilities == self.utilities.max())
        return (self.lows[best[0]] + self.highs[best[-1]]) / 2.0

    def interval_log_weights(self, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
        """Return (indices, log weights) of the positive-length pieces."""
        positive = np.flatnonzero(self.lengths > 0)
        log_weights = np.log(self.lengths[positive]) + epsilon * self.utilities[
            positive
        ] / (2.0 * MEDIAN_UTILITY_SENSITIVITY)
        return positive, log_weights

    def sample(self, epsilon: float, rng: RandomSource) -> float:
        if rng.is_noise_off:
            return self.argmax_midpoint()

        positive, log_weights = self.interval_log_weights(epsilon)
        # selection epsilon 2 with unit sensitivity turns each log weight w
        # into exp(w) = length * exp(eps * u / 2)
        choice = exponential_choice(
            list(zip(positive.tolist(), log_weights.tolist())), 2.0, 1.0, rng
        )
        return self.lows[choice] + self.lengths[choice] * rng.uniform()

    def samples(self, epsilon: float, size: int, rng: RandomSource) -> np.ndarray:
        if rng.is_noise_off:
            return np.full(size, self.argmax_midpoint())

        positive, log_weights = self.interval_log_weights(epsilon)
        p = np.exp(log_weights - log_weights.max())
        p /= p.sum()
        chosen = positive[rng.indices(p, size)]
        return self.lows[chosen] + self.lengths[chosen] * rng.uniforms(size)


def dp_median(
    values: Sequence[float],
    bounds: ClippingBounds,
    epsilon: float,
    rng: RandomSource,
    *,
    query_id: str = "median",
) -> NoisyResult:
    """
    Exponential-mechanism median with rank-based utility over [lower, upper].

    An interval piece is drawn with weight length * exp(eps * u / 2) and the
    output is uniform inside it. Noise-off mode returns the midpoint of the
    maximum-utility piece, which is the ordinary median of the clamped values.
    """
    _check_epsilon(epsilon)
    if len(values) == 0:
        raise EmptyGroupError(f"{query_id}: median of an empty group")

    value = float(MedianPieces.build(values, bounds).sample(epsilon, rng))

    return NoisyResult(
        query_id=query_id,
        value=value,
        epsilon_spent=epsilon,
        mechanism=Mechanism.EXPONENTIAL,
        bounds=bounds,
        clamped=False,
        input_bounds=bounds,
    )


def dp_histogram(
    values: Sequence,
    spec: HistogramSpec,
    epsilon: float,
    rng: RandomSource,
    *,
    query_id: str = "histogram",
    delta: float = 0.0,
) -> NoisyResult:
    """
    Per-bin counts with independent noise; one epsilon covers all bins.

    Values outside an explicit category list land in the "other" bin; numeric
    values are clamped into [minimum, maximum] before binning.
    """
    _check_epsilon(epsilon)

    counts = spec.counts(values)
    sensitivity = count_sensitivity().delta_f
    if delta > 0:
        params = PrivacyParams(epsilon, delta)
        noise = gaussian_samples(sensitivity, params, len(counts), rng)
        mechanism = Mechanism.GAUSSIAN
        accuracy = _GAUSSIAN_Z95 * gaussian_sigma(sensitivity, params)
    else:
        scale = laplace_scale(sensitivity, epsilon)
        noise = laplace_samples(scale, len(counts), rng)
        mechanism = Mechanism.LAPLACE
        accuracy = laplace_accuracy(scale, 0.05)

    noisy = _round_counts(counts + noise).tolist()

    return NoisyResult(
        query_id=query_id,
        value=noisy,
        epsilon_spent=epsilon,
        delta_spent=delta,
        mechanism=mechanism,
        accuracy_95=accuracy,
        bin_labels=spec.labels,
        bin_edges=spec.edges,
    )
