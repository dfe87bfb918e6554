import os
import re
import json
import logging
from datetime import datetime, timezone
from dataclasses import asdict, dataclass, field

import pandas as pd

from dpcore import __version__
from dpcore.aggregates import NoisyResult
from dpcore.mechanisms import PrivacyParams
from ecg_release.exceptions import ReleaseError

SEED_POLICY = "none"
DEFAULT_DIGITS = 6

_UNSAFE_NAME_CHARS = re.compile(r"[^A-Za-z0-9_.-]")

logger = logging.getLogger(__name__)


@dataclass
class ReportEntry:
    query_id: str
    kind: str
    group: str | None
    value: float | list[float] | None
    epsilon_spent: float
    delta_spent: float = 0.0
    clamped: bool = False
    suppressed: bool = False
    mechanism: str | None = None
    accuracy_95: float | None = None
    bin_labels: list[str] | None = None
    bin_edges: list[float] | None = None

    @staticmethod
    def from_result(result: NoisyResult, spec, group: str | None) -> "ReportEntry":
        return ReportEntry(
            query_id=result.query_id,
            kind=str(spec.kind),
            group=group,
            value=result.value,
            epsilon_spent=result.epsilon_spent,
            delta_spent=result.delta_spent,
            clamped=result.clamped,
            mechanism=str(result.mechanism),
            accuracy_95=result.accuracy_95,
            bin_labels=result.bin_labels,
            bin_edges=result.bin_edges,
        )

    @staticmethod
    def suppressed_entry(
        query_id: str, spec, group: str | None, params: PrivacyParams
    ) -> "ReportEntry":
        return ReportEntry(
            query_id=query_id,
            kind=str(spec.kind),
            group=group,
            value=None,
            epsilon_spent=params.epsilon,
            delta_spent=params.delta,
            suppressed=True,
        )

    @property
    def is_histogram(self) -> bool:
        return self.bin_labels is not None

    def as_dict(self):
        return asdict(self)


@dataclass
class DpReport:
    plan_digest: str
    results: list[ReportEntry]
    total_epsilon: float
    total_delta: float = 0.0
    warnings: list[str] = field(default_factory=list)
    timestamp: str = ""
    run_metadata: dict = field(default_factory=dict)

    @staticmethod
    def assemble(plan_digest: str, results: list[ReportEntry], warnings: list[str]) -> "DpReport":
        timestamp = datetime.now(timezone.utc).isoformat()
        return DpReport(
            plan_digest=plan_digest,
            results=results,
            total_epsilon=sum(entry.epsilon_spent for entry in results),
            total_delta=sum(entry.delta_spent for entry in results),
            warnings=warnings,
            timestamp=timestamp,
            run_metadata={
                "version": __version__,
                "timestamp": timestamp,
                "seed_policy": SEED_POLICY,
            },
        )

    def as_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    @staticmethod
    def from_json(data: str) -> "DpReport":
        data = json.loads(data)
        filtered_data = {k: v for k, v in data.items() if k in DpReport.__annotations__}
        filtered_data["results"] = [ReportEntry(**entry) for entry in filtered_data["results"]]
        return DpReport(**filtered_data)

    def summary_lines(self, digits: int = DEFAULT_DIGITS) -> list[str]:
        lines = []
        for entry in self.results:
            if entry.suppressed:
                shown = "suppressed"
            elif entry.is_histogram:
                shown = f"{len(entry.value)} bins"
            else:
                shown = f"{entry.value:.{digits}g}"
                if entry.clamped:
                    shown += " (clamped)"
            lines.append(
                f"{entry.query_id:<24} {entry.kind:<10} epsilon {entry.epsilon_spent:.{digits}g}  {shown}"
            )

        lines.append(f"total epsilon {self.total_epsilon:.{digits}g} over {len(self.results)} queries")
        return lines


def sidecar_path(path: str, query_id: str) -> str:
    stem, _ = os.path.splitext(path)
    return f"{stem}.{_UNSAFE_NAME_CHARS.sub('_', query_id)}.csv"


def emit_report(report: DpReport, path: str) -> list[str]:
    """
    Write the report as JSON plus one plot-data CSV per histogram.

    Returns:
        list[str]: Every file written, the report first.

    Raises:
        ReleaseError: If the report has no results.
        OSError: If a file cannot be written.
    """
    if not report.results:
        raise ReleaseError("a report must contain at least one query")

    with open(path, "w", encoding="utf-8") as f:
        f.write(report.to_json())
    written = [path]

    for entry in report.results:
        if not entry.is_histogram:
            continue

        sidecar = sidecar_path(path, entry.query_id)
        pd.DataFrame({"bin": entry.bin_labels, "noisy_count": entry.value}).to_csv(
            sidecar, index=False
        )
        written.append(sidecar)

    logger.info(f"Wrote report {path} with {len(report.results)} results")
    return written
