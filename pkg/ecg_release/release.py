"""
Release pipeline: validate a plan against a dataset, distribute its budget,
charge the ledger and run the aggregates.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import psutil

from dpcore.accountant import BudgetLedger, distribute
from dpcore.aggregates import (
    NoisyResult,
    dp_count,
    dp_histogram,
    dp_mean,
    dp_median,
)
from dpcore.feasibility import is_feasible, max_feasible_epsilon
from dpcore.mechanisms import PrivacyParams, RandomSource
from ecg_release.dataset import Dataset, RhythmCode, Sex
from ecg_release.exceptions import PlanValidationError
from ecg_release.plan import DpType, QueryKind, QuerySpec, ReleasePlan, Weighting
from ecg_release.report import DpReport, ReportEntry

GROUPS = {
    "rhythm": [code.value for code in RhythmCode],
    "sex": [s.value for s in Sex],
}

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Allocation:
    """One charged query: a plan query, or one group of a grouped query."""

    query_id: str
    spec: QuerySpec
    params: PrivacyParams
    group: str | None = None


def validate_plan(plan: ReleasePlan, data: Dataset) -> list[str]:
    """
    Check a plan against the dataset it will run on.

    Returns:
        list[str]: Warnings; an economically infeasible total epsilon is a
        warning, not an error.

    Raises:
        PlanValidationError: With every structural problem found.
    """
    errors = []
    warnings = []

    if not plan.queries:
        errors.append("plan has no queries")
    if plan.total_epsilon is None or not plan.total_epsilon > 0:
        errors.append("total_epsilon must be positive")

    if plan.dp_type == DpType.PURE and plan.delta:
        errors.append("pure plans must not set delta")
    if plan.dp_type == DpType.APPROXIMATE:
        if not plan.delta or not plan.delta > 0:
            errors.append("approximate plans need delta > 0")
        elif plan.delta >= 1.0 / max(len(data), 1):
            errors.append(
                f"delta {plan.delta:g} must be below 1/n = {1.0 / max(len(data), 1):.6g}"
            )
        elif plan.total_epsilon is not None and plan.total_epsilon >= 1:
            errors.append("approximate plans need total_epsilon < 1 for Gaussian noise")

    for query in plan.queries:
        where = f"query {query.query_id}"
        if query.kind in (QueryKind.MEAN, QueryKind.MEDIAN):
            if query.column not in plan.bounds_policy:
                errors.append(f"{where}: no bounds for column {query.column}")

    for name, weight in plan.report_weights.items():
        if not weight > 0:
            errors.append(f"reports.{name}: weight must be positive")
        if name not in plan.reports:
            errors.append(f"reports.{name}: no query belongs to this report")

    if plan.weighting == Weighting.RARE_BOOST:
        for query in plan.queries:
            if query.group_by is None:
                continue
            missing = [g for g in GROUPS[query.group_by] if g not in plan.group_prior]
            if missing:
                errors.append(
                    f"query {query.query_id}: rare_boost needs group_prior for {', '.join(missing)}"
                )
        if any(not size > 0 for size in plan.group_prior.values()):
            errors.append("group_prior sizes must be positive")

    if errors:
        for error in errors:
            logger.error(f"Plan: {error}")
        raise PlanValidationError(errors)

    if plan.economic_model is not None:
        if not is_feasible(plan.economic_model, plan.total_epsilon):
            warning = (
                f"total epsilon {plan.total_epsilon:g} exceeds the economically "
                f"feasible epsilon {max_feasible_epsilon(plan.economic_model):.6g}"
            )
            logger.warning(warning)
            warnings.append(warning)

    return warnings


def _uses_gaussian(spec: QuerySpec) -> bool:
    return spec.kind != QueryKind.MEDIAN


def allocate(plan: ReleasePlan) -> list[Allocation]:
    """
    Distribute the plan's budget down to the charged queries.

    The total is split across reports, each report across its queries and
    each grouped query across its groups. Approximate plans split delta
    evenly over the Gaussian-backed queries; medians get no delta.
    """
    reports = plan.reports
    report_eps = distribute(
        plan.total_epsilon, [plan.report_weights.get(name, 1.0) for name in reports]
    )

    shares: list[tuple[str, QuerySpec, float, str | None]] = []
    for name, epsilon in zip(reports, report_eps):
        queries = [q for q in plan.queries if q.report == name]
        weights = [
            1.0 if plan.weighting == Weighting.EQUAL else q.weight for q in queries
        ]
        for query, query_eps in zip(queries, distribute(epsilon, weights)):
            if query.group_by is None:
                shares.append((query.query_id, query, query_eps, None))
                continue

            groups = GROUPS[query.group_by]
            if plan.weighting == Weighting.RARE_BOOST:
                group_weights = [1.0 / plan.group_prior[g] for g in groups]
            else:
                group_weights = [1.0] * len(groups)
            for group, group_eps in zip(groups, distribute(query_eps, group_weights)):
                shares.append((f"{query.query_id}:{group}", query, group_eps, group))

    delta_share = 0.0
    if plan.dp_type == DpType.APPROXIMATE:
        gaussian = sum(1 for _, spec, _, _ in shares if _uses_gaussian(spec))
        delta_share = plan.delta / gaussian if gaussian else 0.0

    return [
        Allocation(
            query_id=query_id,
            spec=spec,
            params=PrivacyParams(epsilon, delta_share if _uses_gaussian(spec) else 0.0),
            group=group,
        )
        for query_id, spec, epsilon, group in shares
    ]


def _run(
    allocation: Allocation, plan: ReleasePlan, data: Dataset, rng: RandomSource
) -> ReportEntry:
    spec = allocation.spec
    records = data.records
    if allocation.group is not None:
        records = [r for r in records if str(getattr(r, spec.group_by)) == allocation.group]

    column = spec.column or "rhythm"
    values = [getattr(record, column) for record in records]
    epsilon, delta = allocation.params.epsilon, allocation.params.delta

    result: NoisyResult | None = None
    match spec.kind:
        case QueryKind.COUNT:
            result = dp_count(values, epsilon, rng, query_id=allocation.query_id, delta=delta)
        case QueryKind.HISTOGRAM:
            result = dp_histogram(
                values, spec.histogram_spec, epsilon, rng, query_id=allocation.query_id, delta=delta
            )
        case QueryKind.MEAN if values:
            result = dp_mean(
                values,
                plan.bounds_policy[column],
                epsilon,
                rng,
                query_id=allocation.query_id,
                delta=delta,
            )
        case QueryKind.MEDIAN if values:
            result = dp_median(
                values, plan.bounds_policy[column], epsilon, rng, query_id=allocation.query_id
            )

    if result is None:
        return ReportEntry.suppressed_entry(allocation.query_id, spec, allocation.group, allocation.params)
    return ReportEntry.from_result(result, spec, allocation.group)


def execute(
    plan: ReleasePlan,
    data: Dataset,
    ledger: BudgetLedger,
    rng: RandomSource,
    workers: int | None = None,
) -> DpReport:
    """
    Run a release plan and assemble its report.

    Every charge is admitted as one batch before any query runs, so a plan
    that does not fit the remaining budget runs nothing. Empty groups are
    reported as suppressed and stay charged.

    Args:
        plan (ReleasePlan): The plan to run.
        data (Dataset): The private dataset.
        ledger (BudgetLedger): The ledger every query is charged to.
        rng (RandomSource): Must be in noisy mode.
        workers (int | None): Query threads; defaults to physical cores.

    Raises:
        NoiseOffRefusedError: If rng is in noise-off mode.
        PlanValidationError: If the plan is invalid for this dataset.
        BudgetExceededError: If the plan does not fit the ledger.
    """
    rng.require_noisy()

    warnings = validate_plan(plan, data)
    allocations = allocate(plan)

    try:
        ledger.admit([(a.query_id, a.params) for a in allocations])
    except Exception as e:
        logger.error(f"Release refused: {e}")
        raise

    for allocation in allocations:
        ledger.charge(allocation.query_id, allocation.params)
    logger.info(f"Charged {len(allocations)} queries to the ledger")

    streams = rng.spawn(len(allocations))
    with ThreadPoolExecutor(max_workers=workers or psutil.cpu_count(logical=False) or 1) as pool:
        entries = list(
            pool.map(lambda a, s: _run(a, plan, data, s), allocations, streams)
        )

    for entry in entries:
        if entry.suppressed:
            warnings.append(f"{entry.query_id}: suppressed, empty group")
        elif entry.clamped:
            warnings.append(f"{entry.query_id}: noisy output clamped to bounds")

    return DpReport.assemble(plan.digest, entries, warnings)
