import itertools

import numpy as np
import pytest

from dpcore import aggregates, fixtures, tester
from dpcore.aggregates import dp_count, dp_sum
from dpcore.exceptions import HarnessError, InvalidParameterError
from dpcore.mechanisms import PrivacyParams, RandomSource
from dpcore.sensitivity import ADD_REMOVE, ClippingBounds

UNIT = ClippingBounds(0.0, 1.0)


def _config(epsilon: float, bounds: ClippingBounds = UNIT) -> tester.DpTestConfig:
    return tester.DpTestConfig(
        claimed=PrivacyParams(epsilon),
        trials_T=100_000,
        bins_K=20,
        confidence_beta=1e-9,
        domain_bounds=bounds,
    )


def _run(entry_name: str, claimed: float, seed: int = 1, bounds=UNIT, actual=None):
    entry = fixtures.mechanism_catalog()[entry_name]
    mechanism = entry.factory(actual or claimed, bounds)
    pairs = entry.pairs(bounds) if entry.pairs else tester.generate_neighbor_pairs(bounds, 1)
    return tester.test_mechanism(mechanism, pairs, _config(claimed, bounds), RandomSource(seed=seed))


def test_neighbor_pairs_max_size_one():
    pairs = tester.generate_neighbor_pairs(UNIT, 1)
    keys = {(p.base, p.neighbor) for p in pairs}

    assert len(pairs) == 15
    assert len(keys) == 15
    assert ((0.0,), ()) in keys
    assert ((), (0.0,)) in keys
    assert ((), (1.0,)) in keys


def test_neighbor_pairs_match_brute_force():
    domain = (UNIT.lower, UNIT.midpoint, UNIT.upper)
    expected = set()
    for size in range(3):
        for base in itertools.combinations_with_replacement(domain, size):
            for k in range(size):
                expected.add((base, base[:k] + base[k + 1 :]))
            for value in domain:
                expected.add((base, tuple(sorted(base + (value,)))))

    pairs = tester.generate_neighbor_pairs(UNIT, 2)

    assert {(p.base, p.neighbor) for p in pairs} == expected
    assert all(abs(len(p.base) - len(p.neighbor)) == 1 for p in pairs)


def test_neighbor_pairs_invalid_size():
    with pytest.raises(InvalidParameterError):
        tester.generate_neighbor_pairs(UNIT, 0)


def test_neighbor_pair_invariant():
    with pytest.raises(InvalidParameterError):
        tester.NeighborPair((1.0, 2.0), (1.0, 2.0), tester.Relation.REMOVED)
    with pytest.raises(InvalidParameterError):
        tester.NeighborPair((1.0, 2.0), (3.0,), tester.Relation.REMOVED, index=0)


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        tester.DpTestConfig(claimed=PrivacyParams(1.0), trials_T=1000)
    with pytest.raises(InvalidParameterError):
        tester.DpTestConfig(claimed=PrivacyParams(1.0), bins_K=1)

    assert _config(1.0).slack == pytest.approx(0.0207, abs=1e-4)


def test_correct_count_passes():
    verdict = _run("dp_count", 1.0)

    assert verdict.outcome == tester.Outcome.PASS
    assert verdict.pairs_tested == 15
    assert verdict.excess <= 0


def test_conservative_claim_passes():
    assert _run("dp_count", 1.1, actual=1.0).outcome == tester.Outcome.PASS


def test_correct_sum_and_median_pass():
    bounds = ClippingBounds(0.0, 10.0)

    assert _run("dp_sum", 1.0, bounds=bounds).outcome == tester.Outcome.PASS
    assert _run("dp_median", 1.0, bounds=bounds).outcome == tester.Outcome.PASS


def test_sum_with_positive_lower_bound_passes():
    bounds = ClippingBounds(50.0, 60.0)

    assert _run("dp_sum", 1.0, bounds=bounds).outcome == tester.Outcome.PASS


def test_count_fixture_draws_match_dp_count():
    database = (0.0, 0.5, 1.0)
    batch = fixtures.dp_count_mechanism(0.5, UNIT).batch(database, 50, RandomSource(seed=3))

    rng = RandomSource(seed=3)
    singles = [dp_count(database, 0.5, rng).value for _ in range(50)]

    assert list(batch) == singles


def test_sum_fixture_draws_match_dp_sum():
    bounds = ClippingBounds(18.0, 256.0)
    database = (20.0, 300.0)
    batch = fixtures.dp_sum_mechanism(1.0, bounds).batch(database, 50, RandomSource(seed=4))

    rng = RandomSource(seed=4)
    singles = [
        dp_sum(database, bounds, 1.0, rng, neighboring=ADD_REMOVE).value for _ in range(50)
    ]

    assert list(batch) == singles


def test_catalog_samples_through_aggregates(monkeypatch):
    calls = []
    original = aggregates.noisy_counts

    def counting(*args, **kwargs):
        calls.append(args[0])
        return original(*args, **kwargs)

    monkeypatch.setattr(aggregates, "noisy_counts", counting)

    assert _run("dp_count", 1.0).outcome == tester.Outcome.PASS
    assert set(calls) == {0, 1, 2}


def test_broken_fixtures_are_flagged():
    for entry in fixtures.broken_fixtures():
        verdict = _run(entry.name, entry.fails_at)

        assert verdict.outcome == tester.Outcome.VIOLATION, entry.name
        assert verdict.excess > 0
        assert verdict.observed_ratio > np.exp(entry.fails_at)


def test_no_noise_count_on_empty_pair():
    pairs = [tester.NeighborPair((), (0.0,), tester.Relation.ADDED, value=0.0)]
    mechanism = fixtures.broken_no_noise(1.0, UNIT)

    verdict = tester.test_mechanism(mechanism, pairs, _config(1.0), RandomSource(seed=1))

    assert verdict.outcome == tester.Outcome.VIOLATION
    assert verdict.worst_pair == 0


def test_constant_mechanism_passes():
    def constant(database, rng):
        return 42.0

    pairs = tester.generate_neighbor_pairs(UNIT, 1)
    verdict = tester.test_mechanism(
        constant, pairs, _config(0.01), RandomSource(seed=1), workers=2
    )

    assert verdict.outcome == tester.Outcome.PASS


def test_swapping_pairs_keeps_verdict():
    mechanism = fixtures.broken_half_noise(1.0, UNIT)
    pairs = tester.generate_neighbor_pairs(UNIT, 1)

    forward = tester.test_mechanism(mechanism, pairs, _config(1.0), RandomSource(seed=3))
    swapped = tester.test_mechanism(
        mechanism, [p.swapped() for p in pairs], _config(1.0), RandomSource(seed=3)
    )

    assert forward.outcome == swapped.outcome
    assert forward.excess == pytest.approx(swapped.excess)
    assert forward.worst_pair == swapped.worst_pair


def test_verdict_is_monotone_in_claimed_epsilon():
    mechanism = fixtures.dp_count_mechanism(1.0, UNIT)
    pairs = tester.generate_neighbor_pairs(UNIT, 1)

    tight = tester.test_mechanism(mechanism, pairs, _config(1.0), RandomSource(seed=4))
    loose = tester.test_mechanism(mechanism, pairs, _config(2.0), RandomSource(seed=4))

    assert tight.outcome == tester.Outcome.PASS
    assert loose.outcome == tester.Outcome.PASS
    assert loose.excess <= tight.excess


def test_seeded_verdicts_are_identical():
    first = _run("broken_half_noise", 1.0, seed=9)
    second = _run("broken_half_noise", 1.0, seed=9)

    assert first.as_dict() == second.as_dict()


def test_inconclusive_without_finite_outputs():
    def undefined(database, rng):
        return float("nan")

    pairs = tester.generate_neighbor_pairs(UNIT, 1)

    verdict = tester.test_mechanism(undefined, pairs, _config(1.0), RandomSource(seed=1))
    assert verdict.outcome == tester.Outcome.INCONCLUSIVE

    verdict = tester.test_mechanism(undefined, [], _config(1.0), RandomSource(seed=1))
    assert verdict.outcome == tester.Outcome.INCONCLUSIVE


def test_mechanism_failure_is_harness_error():
    def failing(database, rng):
        raise RuntimeError("boom")

    pairs = tester.generate_neighbor_pairs(UNIT, 1)

    with pytest.raises(HarnessError):
        tester.test_mechanism(failing, pairs, _config(1.0), RandomSource(seed=1))


def test_verdict_json():
    verdict = _run("broken_no_noise", 1.0)

    restored = tester.DpTestVerdict.from_json(verdict.to_json())
    assert restored.outcome == tester.Outcome.VIOLATION
    assert restored.worst_bin == verdict.worst_bin
