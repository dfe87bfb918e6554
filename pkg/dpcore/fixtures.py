"""
Mechanisms for the DP tester: the shipped aggregates plus deliberately broken
variants, each paired with the claimed epsilon at which it must be flagged.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from dpcore import aggregates
from dpcore.mechanisms import RandomSource, laplace_samples, laplace_scale
from dpcore.sensitivity import ADD_REMOVE, ClippingBounds
from dpcore.tester import Database, NeighborPair, Relation

logger = logging.getLogger(__name__)

BatchSampler = Callable[[Database, int, RandomSource], np.ndarray]


@dataclass(frozen=True)
class SampledMechanism:
    """A mechanism under test, exposing both single and batched sampling."""

    name: str
    sampler: BatchSampler

    def __call__(self, database: Database, rng: RandomSource) -> float:
        return float(self.sampler(database, 1, rng)[0])

    def batch(self, database: Database, trials: int, rng: RandomSource) -> np.ndarray:
        return self.sampler(database, trials, rng)


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    factory: Callable[[float, ClippingBounds], SampledMechanism]
    description: str
    fails_at: float | None = None
    pairs: Callable[[ClippingBounds], list[NeighborPair]] | None = None

    @property
    def is_broken(self) -> bool:
        return self.fails_at is not None


def dp_count_mechanism(epsilon: float, bounds: ClippingBounds) -> SampledMechanism:
    def sampler(database, trials, rng):
        return aggregates.noisy_counts(len(database), epsilon, trials, rng)

    return SampledMechanism("dp_count", sampler)


def dp_sum_mechanism(epsilon: float, bounds: ClippingBounds) -> SampledMechanism:
    # tester neighbors add or remove a record
    def sampler(database, trials, rng):
        return aggregates.noisy_clipped_sums(
            database, bounds, epsilon, trials, rng, neighboring=ADD_REMOVE
        )

    return SampledMechanism("dp_sum", sampler)


def dp_median_mechanism(epsilon: float, bounds: ClippingBounds) -> SampledMechanism:
    def sampler(database, trials, rng):
        return aggregates.MedianPieces.build(database, bounds).samples(
            epsilon, trials, rng
        )

    return SampledMechanism("dp_median", sampler)


def broken_half_noise(epsilon: float, bounds: ClippingBounds) -> SampledMechanism:
    """Count with half the required noise scale."""
    scale = laplace_scale(1.0, 2.0 * epsilon)

    def sampler(database, trials, rng):
        return len(database) + laplace_samples(scale, trials, rng)

    return SampledMechanism("broken_half_noise", sampler)


def broken_no_noise(epsilon: float, bounds: ClippingBounds) -> SampledMechanism:
    """Exact count."""

    def sampler(database, trials, rng):
        return np.full(trials, float(len(database)))

    return SampledMechanism("broken_no_noise", sampler)


def broken_unclamped_mean(epsilon: float, bounds: ClippingBounds) -> SampledMechanism:
    """Mean whose noise assumes clipping that is never applied."""

    def sampler(database, trials, rng):
        if len(database) == 0:
            return np.full(trials, bounds.midpoint)
        scale = laplace_scale(bounds.width / len(database), epsilon)
        return float(np.mean(database)) + laplace_samples(scale, trials, rng)

    return SampledMechanism("broken_unclamped_mean", sampler)


def outlier_pairs(bounds: ClippingBounds) -> list[NeighborPair]:
    """Neighbors where the added record lies far outside the claimed bounds."""
    outlier = bounds.upper + 1000.0 * bounds.width
    base = (bounds.midpoint,)
    return [
        NeighborPair(base, tuple(sorted(base + (outlier,))), Relation.ADDED, value=outlier),
        NeighborPair(
            (bounds.lower, bounds.upper),
            (bounds.lower, bounds.upper, outlier),
            Relation.ADDED,
            value=outlier,
        ),
    ]


def correct_fixtures() -> list[CatalogEntry]:
    return [
        CatalogEntry("dp_count", dp_count_mechanism, "Laplace count, rounded"),
        CatalogEntry("dp_sum", dp_sum_mechanism, "Laplace clipped sum"),
        CatalogEntry("dp_median", dp_median_mechanism, "exponential median"),
    ]


def broken_fixtures() -> list[CatalogEntry]:
    return [
        CatalogEntry(
            "broken_half_noise",
            broken_half_noise,
            "count with noise scale 1/(2 eps)",
            fails_at=1.0,
        ),
        CatalogEntry(
            "broken_no_noise", broken_no_noise, "count without noise", fails_at=1.0
        ),
        CatalogEntry(
            "broken_unclamped_mean",
            broken_unclamped_mean,
            "mean without input clipping",
            fails_at=1.0,
            pairs=outlier_pairs,
        ),
    ]


def mechanism_catalog() -> dict[str, CatalogEntry]:
    return {entry.name: entry for entry in correct_fixtures() + broken_fixtures()}
