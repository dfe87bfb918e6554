"""
Release plans: the declarative description of one noninteractive release.

A plan is an INI file read with configparser:

    [plan]
    dp_type = pure | approximate
    total_epsilon = 0.6
    delta = 1e-6                 ; approximate plans only
    weighting = equal | explicit | rare_boost

    [reports]                    ; optional, equal shares by default
    means = 1

    [bounds]
    qrs_duration = 18, 256

    [economic_model]             ; optional
    budget = 10000
    expected_cost = 34
    population = 10646

    [group_prior]                ; public group sizes for rare_boost
    AFIB = 1780

    [query:qrs_mean]
    kind = mean | median | count | histogram
    column = qrs_duration
    group_by = rhythm
    report = means
    weight = 1
    bins = 20                    ; numeric histograms
    categories = MALE, FEMALE    ; categorical histograms

The total budget is split across reports, then across the queries of each
report by weight, then across the groups of a grouped query.
"""

import hashlib
import logging
import configparser
from enum import Enum
from dataclasses import dataclass, field

from dpcore.aggregates import HistogramSpec
from dpcore.exceptions import PrivacyError
from dpcore.feasibility import EconomicModel
from dpcore.sensitivity import ClippingBounds
from ecg_release.dataset import CATEGORICAL_FIELDS, RhythmCode, Sex, resolve_column
from ecg_release.exceptions import PlanValidationError, SchemaError

QUERY_PREFIX = "query:"
DEFAULT_REPORT = "default"

DEFAULT_CATEGORIES = {
    "rhythm": tuple(RhythmCode.codes()),
    "sex": tuple(s.value for s in Sex),
}

logger = logging.getLogger(__name__)


class DpType(str, Enum):
    PURE = "pure"
    APPROXIMATE = "approximate"

    def __str__(self) -> str:
        return self.value


class QueryKind(str, Enum):
    MEAN = "mean"
    MEDIAN = "median"
    COUNT = "count"
    HISTOGRAM = "histogram"

    def __str__(self) -> str:
        return self.value


class Weighting(str, Enum):
    EQUAL = "equal"
    EXPLICIT = "explicit"
    RARE_BOOST = "rare_boost"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class QuerySpec:
    query_id: str
    kind: QueryKind
    column: str | None = None
    group_by: str | None = None
    histogram_spec: HistogramSpec | None = None
    weight: float = 1.0
    report: str = DEFAULT_REPORT


@dataclass
class ReleasePlan:
    dp_type: DpType
    total_epsilon: float
    queries: list[QuerySpec]
    bounds_policy: dict[str, ClippingBounds] = field(default_factory=dict)
    delta: float = 0.0
    weighting: Weighting = Weighting.EQUAL
    report_weights: dict[str, float] = field(default_factory=dict)
    group_prior: dict[str, float] = field(default_factory=dict)
    economic_model: EconomicModel | None = None
    digest: str = ""

    @property
    def reports(self) -> list[str]:
        """Report names in order of first appearance."""
        return list(dict.fromkeys(query.report for query in self.queries))

    @property
    def weights(self) -> list[float]:
        return [query.weight for query in self.queries]


def _float(errors: list[str], where: str, value: str) -> float | None:
    try:
        return float(value)
    except ValueError:
        errors.append(f"{where}: not a number: {value}")
        return None


def _column(errors: list[str], where: str, value: str | None) -> str | None:
    if value is None:
        return None
    try:
        return resolve_column(value)
    except SchemaError as e:
        errors.append(f"{where}: {e}")
        return None


def _parse_bounds(errors: list[str], parser) -> dict[str, ClippingBounds]:
    bounds = {}
    if not parser.has_section("bounds"):
        return bounds

    for key, value in parser.items("bounds"):
        column = _column(errors, f"bounds.{key}", key)
        parts = [p.strip() for p in value.split(",")]
        if len(parts) != 2:
            errors.append(f"bounds.{key}: expected 'lower, upper'")
            continue
        lower = _float(errors, f"bounds.{key}", parts[0])
        upper = _float(errors, f"bounds.{key}", parts[1])
        if column is None or lower is None or upper is None:
            continue
        try:
            bounds[column] = ClippingBounds(lower, upper)
        except PrivacyError as e:
            errors.append(f"bounds.{key}: {e}")

    return bounds


def _parse_query(
    errors: list[str], section, query_id: str, bounds: dict[str, ClippingBounds]
) -> QuerySpec | None:
    where = f"query {query_id}"

    try:
        kind = QueryKind(section.get("kind", "").strip().lower())
    except ValueError:
        errors.append(f"{where}: kind must be one of {', '.join(k.value for k in QueryKind)}")
        return None

    column = _column(errors, where, section.get("column"))
    group_by = _column(errors, where, section.get("group_by"))
    weight = _float(errors, where, section.get("weight", "1"))
    if weight is not None and not weight > 0:
        errors.append(f"{where}: weight must be positive")

    if kind != QueryKind.COUNT and section.get("column") is None:
        errors.append(f"{where}: {kind} needs a column")
    if group_by is not None and group_by not in DEFAULT_CATEGORIES:
        errors.append(f"{where}: cannot group by {group_by}")
    if kind in (QueryKind.MEAN, QueryKind.MEDIAN) and column in CATEGORICAL_FIELDS:
        errors.append(f"{where}: {kind} needs a numeric column")

    histogram_spec = None
    if kind == QueryKind.HISTOGRAM and column is not None:
        try:
            histogram_spec = _histogram_spec(section, column, bounds)
        except (PrivacyError, ValueError) as e:
            errors.append(f"{where}: {e}")

    return QuerySpec(
        query_id=query_id,
        kind=kind,
        column=column,
        group_by=group_by,
        histogram_spec=histogram_spec,
        weight=weight if weight is not None else 1.0,
        report=section.get("report", DEFAULT_REPORT).strip(),
    )


def _histogram_spec(section, column: str, bounds: dict[str, ClippingBounds]) -> HistogramSpec:
    if "categories" in section:
        categories = tuple(c.strip() for c in section["categories"].split(",") if c.strip())
        return HistogramSpec(column, categories=categories)
    if column in CATEGORICAL_FIELDS:
        if column not in DEFAULT_CATEGORIES:
            raise ValueError(f"histogram of {column} needs explicit categories")
        return HistogramSpec(column, categories=DEFAULT_CATEGORIES[column])
    if column not in bounds:
        raise ValueError(f"histogram of {column} needs bounds")
    return HistogramSpec(
        column,
        minimum=bounds[column].lower,
        maximum=bounds[column].upper,
        bin_count=int(section.get("bins", "20")),
    )


def parse_plan(text: str, source: str = "<plan>") -> ReleasePlan:
    """
    Parse plan text into a ReleasePlan.

    Raises:
        PlanValidationError: With one item per structural problem found.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise PlanValidationError([str(e)]) from e

    errors = []
    if not parser.has_section("plan"):
        raise PlanValidationError([f"{source}: missing [plan] section"])

    header = parser["plan"]
    try:
        dp_type = DpType(header.get("dp_type", "pure").strip().lower())
    except ValueError:
        errors.append("plan.dp_type: must be pure or approximate")
        dp_type = DpType.PURE
    try:
        weighting = Weighting(header.get("weighting", "equal").strip().lower())
    except ValueError:
        errors.append("plan.weighting: must be equal, explicit or rare_boost")
        weighting = Weighting.EQUAL

    total_epsilon = _float(errors, "plan.total_epsilon", header.get("total_epsilon", ""))
    delta = _float(errors, "plan.delta", header.get("delta", "0"))

    bounds = _parse_bounds(errors, parser)

    report_weights = {}
    if parser.has_section("reports"):
        for name, value in parser.items("reports"):
            weight = _float(errors, f"reports.{name}", value)
            if weight is not None:
                report_weights[name] = weight

    group_prior = {}
    if parser.has_section("group_prior"):
        for name, value in parser.items("group_prior"):
            size = _float(errors, f"group_prior.{name}", value)
            if size is not None:
                group_prior[name.upper()] = size

    economic_model = None
    if parser.has_section("economic_model"):
        section = parser["economic_model"]
        values = [
            _float(errors, f"economic_model.{key}", section.get(key, ""))
            for key in ("budget", "expected_cost", "population")
        ]
        if None not in values:
            try:
                economic_model = EconomicModel(values[0], values[1], int(values[2]))
            except PrivacyError as e:
                errors.append(f"economic_model: {e}")

    queries = []
    for name in parser.sections():
        if name.startswith(QUERY_PREFIX):
            query = _parse_query(errors, parser[name], name[len(QUERY_PREFIX) :].strip(), bounds)
            if query is not None:
                queries.append(query)

    if errors:
        raise PlanValidationError(errors)

    return ReleasePlan(
        dp_type=dp_type,
        total_epsilon=total_epsilon,
        queries=queries,
        bounds_policy=bounds,
        delta=delta,
        weighting=weighting,
        report_weights=report_weights,
        group_prior=group_prior,
        economic_model=economic_model,
        digest=hashlib.sha256(text.encode("utf-8")).hexdigest(),
    )


def load_plan(path: str) -> ReleasePlan:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()

    plan = parse_plan(text, source=path)
    logger.debug(f"Loaded plan {path} with {len(plan.queries)} queries")
    return plan
