"""
Empirical refuter of the epsilon-DP predicate.

A mechanism is sampled on pairs of neighboring micro-databases; the outputs of
both sides are binned into equal-width bins over their pooled range and every
bin is checked in both directions against

    p_hat <= e^eps * p_hat' + delta + slack

with slack = 2 * sqrt(ln(2 / beta) / (2 T)). Bins are only a family of events,
so the tester can refute a privacy claim but never prove one.
"""

import math
import json
import logging
import itertools
from enum import Enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import psutil

from dpcore.exceptions import HarnessError, InvalidParameterError
from dpcore.mechanisms import PrivacyParams, RandomSource
from dpcore.sensitivity import ClippingBounds

DEFAULT_TRIALS = 100_000
DEFAULT_BINS = 20
DEFAULT_BETA = 1e-9
MIN_TRIALS = 10_000

logger = logging.getLogger(__name__)

Database = tuple[float, ...]


class Relation(str, Enum):
    REMOVED = "removed"
    ADDED = "added"

    def __str__(self) -> str:
        return self.value


class Outcome(str, Enum):
    PASS = "pass"
    VIOLATION = "violation"
    INCONCLUSIVE = "inconclusive"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class NeighborPair:
    base: Database
    neighbor: Database
    relation: Relation
    index: int | None = None
    value: float | None = None

    def __post_init__(self):
        longer, shorter = (
            (self.base, self.neighbor)
            if len(self.base) > len(self.neighbor)
            else (self.neighbor, self.base)
        )
        if len(longer) - len(shorter) != 1:
            raise InvalidParameterError("neighbors must differ by exactly one record")
        remaining = iter(longer)
        if not all(any(x == y for y in remaining) for x in shorter):
            raise InvalidParameterError("the smaller database must be a subsequence")

    def swapped(self) -> "NeighborPair":
        return NeighborPair(self.neighbor, self.base, self.relation, self.index, self.value)

    def as_dict(self):
        data = asdict(self)
        data["relation"] = str(self.relation)
        return data


@dataclass(frozen=True)
class DpTestConfig:
    claimed: PrivacyParams
    trials_T: int = DEFAULT_TRIALS
    bins_K: int = DEFAULT_BINS
    confidence_beta: float = DEFAULT_BETA
    domain_bounds: ClippingBounds = ClippingBounds(0.0, 1.0)

    def __post_init__(self):
        if self.trials_T < MIN_TRIALS:
            raise InvalidParameterError(
                f"at least {MIN_TRIALS} trials are needed, got {self.trials_T}"
            )
        if self.bins_K < 2:
            raise InvalidParameterError(f"at least 2 bins are needed, got {self.bins_K}")
        if not 0 < self.confidence_beta < 1:
            raise InvalidParameterError("beta must be a probability")

    @property
    def slack(self) -> float:
        return 2.0 * math.sqrt(math.log(2.0 / self.confidence_beta) / (2.0 * self.trials_T))


@dataclass
class DpTestVerdict:
    outcome: Outcome
    worst_pair: int | None = None
    worst_bin: int | None = None
    observed_ratio: float | None = None
    slack_used: float = 0.0
    excess: float | None = None
    pairs_tested: int = 0

    def as_dict(self):
        data = asdict(self)
        data["outcome"] = str(self.outcome)
        return data

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    @staticmethod
    def from_json(data: str) -> "DpTestVerdict":
        data = json.loads(data)
        filtered_data = {
            k: v for k, v in data.items() if k in DpTestVerdict.__annotations__
        }
        filtered_data["outcome"] = Outcome(filtered_data["outcome"])
        return DpTestVerdict(**filtered_data)


@dataclass(frozen=True)
class BinComparison:
    excess: float
    worst_bin: int | None
    observed_ratio: float | None


def generate_neighbor_pairs(
    domain_bounds: ClippingBounds, max_size: int
) -> list[NeighborPair]:
    """
    Enumerate neighboring databases over {lower, midpoint, upper}.

    Every multiset of size <= max_size is paired with each of its remove-one
    neighbors and with the databases obtained by adding one domain value.
    Databases are kept sorted, so pairs are deduplicated as multisets.
    """
    if max_size < 1:
        raise InvalidParameterError(f"max_size must be at least 1, got {max_size}")

    domain = (domain_bounds.lower, domain_bounds.midpoint, domain_bounds.upper)

    pairs = []
    seen = set()

    def emit(pair: NeighborPair):
        key = (pair.base, pair.neighbor)
        if key not in seen:
            seen.add(key)
            pairs.append(pair)

    for size in range(max_size + 1):
        for base in itertools.combinations_with_replacement(domain, size):
            for k in range(len(base)):
                emit(
                    NeighborPair(
                        base, base[:k] + base[k + 1 :], Relation.REMOVED, index=k
                    )
                )
            for value in domain:
                emit(
                    NeighborPair(
                        base,
                        tuple(sorted(base + (value,))),
                        Relation.ADDED,
                        value=value,
                    )
                )

    return pairs


def compare_samples(
    samples: np.ndarray, other: np.ndarray, config: DpTestConfig
) -> BinComparison | None:
    """
    Check the DP inequality on one pair of output samples, both directions.

    Returns:
        BinComparison | None: The largest excess over the allowed frequency,
        negative when every bin passes; None when outputs are not finite.
    """
    pooled = np.concatenate([samples, other])
    if pooled.size == 0 or not np.all(np.isfinite(pooled)):
        return None

    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        # both sides are the same point mass
        return BinComparison(excess=-config.slack, worst_bin=None, observed_ratio=1.0)

    edges = np.linspace(lo, hi, config.bins_K + 1)
    p, _ = np.histogram(samples, bins=edges)
    q, _ = np.histogram(other, bins=edges)
    p = p / len(samples)
    q = q / len(other)

    factor = math.exp(config.claimed.epsilon)
    allowance = config.claimed.delta + config.slack
    forward = p - (factor * q + allowance)
    backward = q - (factor * p + allowance)

    excess = np.maximum(forward, backward)
    worst = int(np.argmax(excess))
    if forward[worst] >= backward[worst]:
        high, low, n = p[worst], q[worst], len(other)
    else:
        high, low, n = q[worst], p[worst], len(samples)

    return BinComparison(
        excess=float(excess[worst]),
        worst_bin=worst,
        observed_ratio=float(high / max(low, 1.0 / n)),
    )


def draw(
    mechanism: Callable, database: Database, trials: int, rng: RandomSource
) -> np.ndarray:
    """Run a mechanism `trials` times on one database."""
    try:
        batch = getattr(mechanism, "batch", None)
        if batch is not None:
            return np.asarray(batch(database, trials, rng), dtype=float)
        return np.asarray([mechanism(database, rng) for _ in range(trials)], dtype=float)
    except Exception as e:
        raise HarnessError(f"mechanism failed on database {database}: {e}") from e


def _default_workers() -> int:
    return psutil.cpu_count(logical=False) or 1


def test_mechanism(
    mechanism: Callable,
    pairs: Sequence[NeighborPair],
    config: DpTestConfig,
    rng: RandomSource,
    workers: int | None = None,
) -> DpTestVerdict:
    """
    Statistically test a mechanism against its claimed privacy parameters.

    Each distinct database is sampled once, from its own child stream, so the
    verdict does not depend on pair order or on which side of a pair a
    database sits.

    Args:
        mechanism: Callable (database, rng) -> float; an optional
            `batch(database, trials, rng)` attribute is used when present.
        pairs: Neighboring databases to test.
        config (DpTestConfig): Claimed parameters and test resolution.
        rng (RandomSource): Root random source.
        workers (int | None): Sampling threads; defaults to physical cores.

    Returns:
        DpTestVerdict: The verdict with its worst pair and bin.

    Raises:
        HarnessError: If the mechanism fails during sampling.
    """
    databases = sorted({db for pair in pairs for db in (pair.base, pair.neighbor)})
    streams = dict(zip(databases, rng.spawn(len(databases))))

    with ThreadPoolExecutor(max_workers=workers or _default_workers()) as pool:
        futures = {
            db: pool.submit(draw, mechanism, db, config.trials_T, streams[db])
            for db in databases
        }
        samples = {db: future.result() for db, future in futures.items()}

    verdict = DpTestVerdict(outcome=Outcome.INCONCLUSIVE, slack_used=config.slack)
    for i, pair in enumerate(pairs):
        comparison = compare_samples(samples[pair.base], samples[pair.neighbor], config)
        if comparison is None:
            continue

        verdict.pairs_tested += 1
        if verdict.excess is None or comparison.excess > verdict.excess:
            verdict.excess = comparison.excess
            verdict.worst_pair = i
            verdict.worst_bin = comparison.worst_bin
            verdict.observed_ratio = comparison.observed_ratio

    if verdict.pairs_tested == 0:
        logger.warning("No pair produced finite outputs")
    elif verdict.excess > 0:
        verdict.outcome = Outcome.VIOLATION
    else:
        verdict.outcome = Outcome.PASS

    logger.info(
        f"DP test {verdict.outcome} over {verdict.pairs_tested} pairs "
        f"(claimed epsilon {config.claimed.epsilon:g})"
    )
    return verdict


test_mechanism.__test__ = False
