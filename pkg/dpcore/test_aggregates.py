import math

import numpy as np
import pytest
from scipy import stats

from dpcore.aggregates import (
    OTHER_BIN,
    HistogramSpec,
    MedianPieces,
    dp_count,
    dp_histogram,
    dp_mean,
    dp_median,
    dp_sum,
)
from dpcore.exceptions import EmptyGroupError, InvalidParameterError
from dpcore.mechanisms import Mechanism, RandomSource
from dpcore.sensitivity import ADD_REMOVE, ClippingBounds

QRS = ClippingBounds(18.0, 256.0)
RHYTHMS = ("AFIB", "SB", "SA", "AF", "SR", "ST", "SVT", "AT", "AVNRT", "SAAWR", "AVRT")


def test_count_noise_off():
    rng = RandomSource.noise_off()

    assert dp_count([], 1.0, rng).value == 0
    assert dp_count(range(10646), 0.2 / 14, rng).value == 10646


def test_count_accuracy():
    rng = RandomSource(seed=1)
    values = list(range(1000))

    outputs = np.array([dp_count(values, 1.0, rng).value for _ in range(10_000)])

    assert np.all(outputs == np.round(outputs))
    assert np.mean(np.abs(outputs - 1000) <= 3) >= 0.95


def test_count_error_distribution():
    # scale 200 keeps the rounding step well under the KS threshold
    rng = RandomSource(seed=12)
    values = range(10_000)

    errors = np.array([dp_count(values, 0.005, rng).value for _ in range(100_000)]) - 10_000

    assert stats.kstest(errors, stats.laplace(scale=200.0).cdf).statistic < 0.01


def test_count_never_negative():
    rng = RandomSource(seed=2)

    assert all(dp_count([], 0.1, rng).value >= 0 for _ in range(1000))


def test_count_gaussian_route():
    result = dp_count([1, 2, 3], 0.5, RandomSource(seed=1), delta=1e-5)

    assert result.mechanism == Mechanism.GAUSSIAN
    assert result.delta_spent == 1e-5
    assert result.accuracy_95 == pytest.approx(1.959964 * 9.6896, rel=1e-3)


def test_sum_noise_off():
    rng = RandomSource.noise_off()
    bounds = ClippingBounds(0, 100)

    assert dp_sum([50, 50], bounds, 1.0, rng).value == 100
    assert dp_sum([150], bounds, 1.0, rng).value == 100


def test_sum_accuracy():
    rng = RandomSource(seed=3)
    values = [1.0] * 1000
    bounds = ClippingBounds(0, 1)

    outputs = np.array([dp_sum(values, bounds, 0.5, rng).value for _ in range(100_000)])

    assert np.mean(np.abs(outputs - 1000) <= 2 * math.log(20)) >= 0.94
    assert stats.kstest(outputs - 1000, stats.laplace(scale=2.0).cdf).statistic < 0.01


def test_sum_add_remove_calibration():
    result = dp_sum([20.0, 300.0], QRS, 1.0, RandomSource(seed=3), neighboring=ADD_REMOVE)

    assert result.accuracy_95 == pytest.approx(256.0 * math.log(20))
    assert dp_sum([20.0], QRS, 1.0, RandomSource(seed=3)).accuracy_95 == pytest.approx(
        238.0 * math.log(20)
    )


def test_mean_noise_off():
    result = dp_mean([100, 120], QRS, 1.0, RandomSource.noise_off())

    assert result.value == 110
    assert result.clamped is False
    assert result.bounds == QRS
    assert result.accuracy_95 == pytest.approx(119.0 * math.log(20))


def test_mean_rare_group_is_clamped():
    rng = RandomSource(seed=2019)

    results = [dp_mean([85], QRS, 0.2 / 11, rng) for _ in range(1000)]

    clamped = [r for r in results if r.clamped]
    assert len(clamped) >= 960
    assert all(r.value in (18.0, 256.0) for r in clamped)
    assert all(QRS.lower <= r.value <= QRS.upper for r in results)
    assert all(r.clamped == (r.value in (18.0, 256.0)) for r in results)


def test_mean_large_group_accuracy():
    rng = RandomSource(seed=4)
    values = [90.0] * 10_000
    band = (238 / (10_000 * 0.2)) * math.log(20)

    outputs = np.array([dp_mean(values, QRS, 0.2, rng).value for _ in range(2000)])

    assert np.mean(np.abs(outputs - 90) <= band) >= 0.93


def test_mean_error_distribution():
    rng = RandomSource(seed=13)
    values = [100.0] * 1000

    errors = np.array([dp_mean(values, QRS, 1.0, rng).value for _ in range(100_000)]) - 100.0

    assert stats.kstest(errors, stats.laplace(scale=238.0 / 1000).cdf).statistic < 0.01


def test_mean_empty_group():
    with pytest.raises(EmptyGroupError):
        dp_mean([], QRS, 1.0, RandomSource(seed=1))


def test_median_noise_off():
    rng = RandomSource.noise_off()

    assert dp_median([1, 2, 3], ClippingBounds(0, 10), 1.0, rng).value == 2.0
    assert dp_median([1, 2, 3, 4], ClippingBounds(0, 10), 1.0, rng).value == 2.5


def test_median_noise_off_with_ties():
    rng = RandomSource.noise_off()

    assert dp_median([264.77, 259.93, 184.32, 97.38, 278.77], QRS, 1.0, rng).value == 256.0
    assert dp_median([1, 2, 2, 3, 3, 4], ClippingBounds(0, 10), 1.0, rng).value == 2.5
    assert dp_median([0, 0, 0, 7], ClippingBounds(0, 10), 1.0, rng).value == 0.0
    assert dp_median([4, 4, 4, 9, 9, 9], ClippingBounds(0, 10), 1.0, rng).value == 6.5


def test_median_piece_utilities():
    pieces = MedianPieces.build([97.38, 184.32, 256, 256, 256], QRS)

    # (18, 97.38), 97.38, (97.38, 184.32), 184.32, (184.32, 256), 256
    assert list(pieces.utilities) == [-5, -3, -3, -1, -1, 1]
    assert list(pieces.lengths > 0) == [True, False, True, False, True, False]


def test_median_ignores_outliers():
    rng = RandomSource.noise_off()
    values = list(np.random.default_rng(5).uniform(18, 256, 101))
    outlier = values.copy()
    outlier[int(np.argmax(outlier))] = QRS.upper

    assert dp_median(values, QRS, 1.0, rng).value == dp_median(outlier, QRS, 1.0, rng).value


def test_median_symmetric():
    rng = RandomSource(seed=6)
    pieces = MedianPieces.build([0, 0, 0, 10, 10, 10], ClippingBounds(0, 10))

    samples = pieces.samples(1.0, 100_000, rng)
    low = np.mean(samples < 5)

    assert low == pytest.approx(0.5, abs=3 * math.sqrt(0.25 / 100_000))


def test_median_duplicated_values():
    bounds = ClippingBounds(0, 10)
    values = [5] * 99 + [1000]
    pieces = MedianPieces.build(values, bounds)

    # brute-force the continuous exponential weights on a fine grid
    grid = np.linspace(0.0025, 9.9975, 2000)
    below = np.array([np.sum(np.minimum(values, 10) < o) for o in grid])
    utility = -np.abs(below - (100 - below))
    weights = np.exp(2.0 * utility / 2.0)
    oracle = np.sum(weights[(grid >= 4) & (grid <= 6)]) / np.sum(weights)

    samples = pieces.samples(2.0, 10_000, RandomSource(seed=7))
    observed = np.mean((samples >= 4) & (samples <= 6))

    assert oracle == pytest.approx(0.2, abs=0.01)
    assert observed == pytest.approx(oracle, abs=3 * math.sqrt(0.25 / 10_000) + 0.01)


def test_median_stays_in_bounds():
    rng = RandomSource(seed=8)
    for _ in range(200):
        result = dp_median([20, 300, 40], QRS, 0.5, rng)
        assert QRS.lower <= result.value <= QRS.upper
        assert result.mechanism == Mechanism.EXPONENTIAL


def test_median_empty_group():
    with pytest.raises(EmptyGroupError):
        dp_median([], QRS, 1.0, RandomSource(seed=1))


def test_histogram_spec():
    with pytest.raises(InvalidParameterError):
        HistogramSpec("rhythm", categories=("SB", "SB"))
    with pytest.raises(InvalidParameterError):
        HistogramSpec("rhythm", categories=("SB", OTHER_BIN))
    with pytest.raises(InvalidParameterError):
        HistogramSpec("age", categories=("a",), minimum=0)
    with pytest.raises(InvalidParameterError):
        HistogramSpec("age", minimum=0, maximum=100)

    spec = HistogramSpec("age", minimum=0, maximum=100, bin_count=4)
    assert spec.labels == ["0-25", "25-50", "50-75", "75-100"]
    assert spec.edges == [0, 25, 50, 75, 100]
    assert list(spec.counts([-10, 10, 30, 100, 500])) == [2, 1, 0, 2]


def test_histogram_noise_off():
    rng = RandomSource.noise_off()
    spec = HistogramSpec("sex", categories=("MALE", "FEMALE"))

    empty = dp_histogram([], spec, 1.0, rng)
    assert empty.value == [0, 0, 0]

    exact = dp_histogram(["MALE", "FEMALE", "FEMALE", "X"], spec, 0.2 / 14, rng)
    assert exact.value == [1, 2, 1]
    assert exact.bin_labels == ["MALE", "FEMALE", OTHER_BIN]


def test_histogram_fidelity():
    rng = RandomSource(seed=10)
    spec = HistogramSpec("rhythm", categories=RHYTHMS)
    sizes = [1780, 3889, 399, 445, 1826, 1568, 587, 121, 16, 7, 8]
    values = [code for code, size in zip(RHYTHMS, sizes) for _ in range(size)]
    truth = spec.counts(values)

    within = 0
    total = 0
    for _ in range(100):
        noisy = np.array(dp_histogram(values, spec, 0.2 / 14, rng).value)
        within += int(np.sum(np.abs(noisy - truth) <= 70 * math.log(20)))
        total += len(noisy)

    assert within / total >= 0.90


def test_histogram_bin_noise_independent():
    rng = RandomSource(seed=11)
    spec = HistogramSpec("x", minimum=0, maximum=10, bin_count=2)
    values = [1.0] * 500 + [9.0] * 500

    errors = np.array(
        [np.array(dp_histogram(values, spec, 0.1, rng).value) - 500 for _ in range(100_000)]
    )

    assert abs(np.corrcoef(errors[:, 0], errors[:, 1])[0, 1]) < 0.02


def test_noise_off_matches_reference():
    data_rng = np.random.default_rng(2020)
    rng = RandomSource.noise_off()
    spec = HistogramSpec("qrs", minimum=18, maximum=256, bin_count=10)

    for _ in range(1000):
        n = int(data_rng.integers(1, 60))
        values = data_rng.uniform(0, 300, n)
        clamped = np.clip(values, QRS.lower, QRS.upper)

        assert dp_count(values, 1.0, rng).value == n
        assert dp_sum(values, QRS, 1.0, rng).value == float(np.sum(clamped))
        assert dp_mean(values, QRS, 1.0, rng).value == float(np.mean(clamped))
        assert dp_median(values, QRS, 1.0, rng).value == float(np.median(clamped))
        assert dp_histogram(values, spec, 1.0, rng).value == list(
            np.histogram(clamped, bins=10, range=(18, 256))[0].astype(float)
        )
