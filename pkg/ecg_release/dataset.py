"""
Arrhythmia feature table: CSV ingestion, partitioning by rhythm and a
deterministic synthetic generator for desk-scale runs.

One row is one patient; the numeric columns are the features extracted from a
10 second 12-lead recording.
"""

import logging
from enum import Enum
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from dpcore.exceptions import InvalidParameterError
from ecg_release.exceptions import (
    EmptyDatasetError,
    RowError,
    SchemaError,
    UnknownRhythmError,
)

logger = logging.getLogger(__name__)


class RhythmCode(str, Enum):
    """Rhythm labels, in the order per-rhythm reports list them."""

    AFIB = "AFIB"
    SB = "SB"
    SA = "SA"
    AF = "AF"
    SR = "SR"
    ST = "ST"
    SVT = "SVT"
    AT = "AT"
    AVNRT = "AVNRT"
    SAAWR = "SAAWR"
    AVRT = "AVRT"

    def __str__(self) -> str:
        return self.value

    @property
    def full_name(self) -> str:
        return RHYTHM_NAMES[self]

    @staticmethod
    def codes() -> list[str]:
        return [code.value for code in RhythmCode]


RHYTHM_NAMES = {
    RhythmCode.SB: "Sinus Bradycardia",
    RhythmCode.SR: "Sinus Rhythm",
    RhythmCode.AFIB: "Atrial Fibrillation",
    RhythmCode.ST: "Sinus Tachycardia",
    RhythmCode.AF: "Atrial Flutter",
    RhythmCode.SA: "Sinus Irregularity",
    RhythmCode.SVT: "Supraventricular Tachycardia",
    RhythmCode.AT: "Atrial Tachycardia",
    RhythmCode.AVNRT: "Atrioventricular Node Reentrant Tachycardia",
    RhythmCode.AVRT: "Atrioventricular Reentrant Tachycardia",
    RhythmCode.SAAWR: "Sinus Atrium to Atrial Wandering Rhythm",
}


class Sex(str, Enum):
    MALE = "MALE"
    FEMALE = "FEMALE"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class EcgRecord:
    rhythm: RhythmCode
    beat: str
    age: int
    sex: Sex
    ventricular_rate: int
    atrial_rate: int
    qrs_duration: int
    qt_interval: int
    qt_corrected: int
    r_axis: int
    t_axis: int
    qrs_count: int
    q_onset: int
    q_offset: int
    t_offset: int

    def as_dict(self):
        data = asdict(self)
        data["rhythm"] = str(self.rhythm)
        data["sex"] = str(self.sex)
        return data


HEADERS = {
    "rhythm": "Rhythm",
    "beat": "Beat",
    "age": "Patient Age",
    "sex": "Sex",
    "ventricular_rate": "Ventricular Rate",
    "atrial_rate": "Atrial Rate",
    "qrs_duration": "QRS Duration",
    "qt_interval": "QT Interval",
    "qt_corrected": "QT Corrected",
    "r_axis": "R Axis",
    "t_axis": "T Axis",
    "qrs_count": "QRS Count",
    "q_onset": "Q Onset",
    "q_offset": "Q Offset",
    "t_offset": "T Offset",
}

NUMERIC_FIELDS = tuple(name for name in HEADERS if name not in ("rhythm", "beat", "sex"))
CATEGORICAL_FIELDS = ("rhythm", "beat", "sex")

# integral values must survive the cast to int64
_INT64_LIMIT = float(np.iinfo(np.int64).max)


def _normalize(name: str) -> str:
    return "".join(name.split()).replace("_", "").lower()


_COLUMN_INDEX = {
    **{_normalize(header): name for name, header in HEADERS.items()},
    **{_normalize(name): name for name in HEADERS},
    "gender": "sex",
}


def resolve_column(name: str) -> str:
    """Map a header or plan column name to an EcgRecord field."""
    try:
        return _COLUMN_INDEX[_normalize(name)]
    except KeyError:
        raise SchemaError(f"unknown column: {name}") from None


@dataclass(frozen=True)
class Dataset:
    records: tuple[EcgRecord, ...]
    source: str
    diagnostics: dict[str, int] = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> list:
        attribute = resolve_column(name)
        return [getattr(record, attribute) for record in self.records]


def ingest_csv(path: str, strict: bool = True) -> Dataset:
    """
    Parse the arrhythmia feature table.

    Header names are matched case-insensitively, ignoring spaces and
    underscores. In lenient mode rows with an unknown rhythm or an unparseable
    value are dropped and counted in `Dataset.diagnostics`.

    Raises:
        SchemaError: If the header lacks a required column.
        EmptyDatasetError: If no data row remains.
        UnknownRhythmError: On an unknown rhythm code, strict mode only.
        RowError: On an unparseable value, strict mode only.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise SchemaError(f"{path} has no header row") from e

    columns = {}
    for column in frame.columns:
        name = _COLUMN_INDEX.get(_normalize(column))
        if name is not None and name not in columns.values():
            columns[column] = name

    missing = [header for name, header in HEADERS.items() if name not in columns.values()]
    if missing:
        raise SchemaError(f"{path}: missing column {', '.join(missing)}")

    frame = frame.rename(columns=columns)[list(HEADERS)]
    if frame.empty:
        raise EmptyDatasetError(f"{path} has no data rows")

    frame = frame.apply(lambda col: col.str.strip())
    rhythm = frame["rhythm"].str.upper()
    sex = frame["sex"].str.upper()
    numeric = frame[list(NUMERIC_FIELDS)].apply(pd.to_numeric, errors="coerce")

    unknown = ~rhythm.isin(RhythmCode.codes())
    invalid = pd.concat(
        [
            (~sex.isin([s.value for s in Sex])).rename("sex"),
            ~(
                np.isfinite(numeric)
                & (numeric % 1 == 0)
                & (numeric.abs() < _INT64_LIMIT)
            ),
        ],
        axis=1,
    )

    if strict:
        if unknown.any():
            line = int(np.flatnonzero(unknown.to_numpy())[0]) + 2
            raise UnknownRhythmError(
                f"line {line}: unknown rhythm code, expected one of "
                f"{', '.join(RhythmCode.codes())}"
            )
        if invalid.to_numpy().any():
            row, col = np.argwhere(invalid.to_numpy())[0]
            name = invalid.columns[col]
            raise RowError(
                f"line {row + 2}: invalid value in column {HEADERS[name]}",
                row=int(row) + 2,
                column=name,
            )

    bad_value = invalid.any(axis=1) & ~unknown
    keep = ~(unknown | bad_value)
    diagnostics = {
        "unknown_rhythm": int(unknown.sum()),
        "invalid_value": int(bad_value.sum()),
    }

    values = numeric[keep].astype("int64").to_dict("records")
    records = tuple(
        EcgRecord(
            rhythm=RhythmCode(r),
            beat=b,
            sex=Sex(s),
            **{k: int(v) for k, v in row.items()},
        )
        for r, b, s, row in zip(rhythm[keep], frame.loc[keep, "beat"], sex[keep], values)
    )

    dropped = len(frame) - len(records)
    if dropped:
        logger.warning(f"Dropped {dropped} of {len(frame)} rows from {path}")
    if not records:
        raise EmptyDatasetError(f"{path} has no valid data rows")

    logger.info(f"Ingested {len(records)} records from {path}")
    return Dataset(records=records, source=str(path), diagnostics=diagnostics)


def write_csv(dataset: Dataset, path: str):
    frame = pd.DataFrame(
        [record.as_dict() for record in dataset.records], columns=list(HEADERS)
    )
    frame.rename(columns=HEADERS).to_csv(path, index=False)

    logger.debug(f"Wrote {len(dataset)} records to {path}")


def partition_by_rhythm(data: Dataset) -> dict[RhythmCode, tuple[EcgRecord, ...]]:
    groups = {code: [] for code in RhythmCode}
    for record in data.records:
        groups[record.rhythm].append(record)

    return {code: tuple(records) for code, records in groups.items()}


# Approximate rhythm frequencies of the public 12-lead arrhythmia database;
# sinus bradycardia and sinus rhythm dominate and SAAWR is the rarest.
DEFAULT_GROUP_WEIGHTS = {
    RhythmCode.SB: 3889,
    RhythmCode.SR: 1826,
    RhythmCode.AFIB: 1780,
    RhythmCode.ST: 1568,
    RhythmCode.SVT: 587,
    RhythmCode.AF: 445,
    RhythmCode.SA: 399,
    RhythmCode.AT: 121,
    RhythmCode.AVNRT: 16,
    RhythmCode.AVRT: 8,
    RhythmCode.SAAWR: 7,
}

# (mean QRS duration ms, mean ventricular rate BPM)
_RHYTHM_PROFILES = {
    RhythmCode.AFIB: (93.0, 98.0),
    RhythmCode.SB: (90.0, 52.0),
    RhythmCode.SA: (88.0, 68.0),
    RhythmCode.AF: (95.0, 100.0),
    RhythmCode.SR: (88.0, 75.0),
    RhythmCode.ST: (88.0, 112.0),
    RhythmCode.SVT: (92.0, 160.0),
    RhythmCode.AT: (90.0, 125.0),
    RhythmCode.AVNRT: (90.0, 150.0),
    RhythmCode.SAAWR: (88.0, 65.0),
    RhythmCode.AVRT: (92.0, 140.0),
}

_BEATS = ("NONE", "TWC", "RBBB", "STDD", "STTC", "LVH", "RBBB TWC", "STDD STTC")
_BEAT_WEIGHTS = (0.45, 0.2, 0.08, 0.08, 0.07, 0.05, 0.04, 0.03)


def synthesize(
    n: int,
    seed: int = 0,
    group_weights: Mapping[RhythmCode | str, float] | None = None,
) -> Dataset:
    """
    Generate a deterministic synthetic feature table.

    Args:
        n (int): Number of patients.
        seed (int): Generator seed; equal seeds give equal datasets.
        group_weights: Relative rhythm frequencies overriding the defaults.

    Returns:
        Dataset: QRS durations lie in [18, 256] and ages in [4, 98] with a
        left-skewed distribution.
    """
    if n < 1:
        raise InvalidParameterError(f"synthetic dataset needs n >= 1, got {n}")

    weights = dict(DEFAULT_GROUP_WEIGHTS)
    for code, weight in (group_weights or {}).items():
        weights[RhythmCode(str(code).upper())] = weight

    codes = list(RhythmCode)
    p = np.asarray([weights[code] for code in codes], dtype=float)
    if np.any(p < 0) or not p.sum() > 0:
        raise InvalidParameterError("group weights must be nonnegative and not all zero")
    p /= p.sum()

    rng = np.random.default_rng(seed)
    index = rng.choice(len(codes), size=n, p=p)
    qrs_mean = np.asarray([_RHYTHM_PROFILES[code][0] for code in codes])[index]
    rate_mean = np.asarray([_RHYTHM_PROFILES[code][1] for code in codes])[index]

    age = np.clip(np.rint(98.0 - rng.gamma(2.0, 12.0, n)), 4, 98)
    male = rng.random(n) < 0.56
    ventricular = np.clip(np.rint(rng.normal(rate_mean, 12.0)), 30, 250)
    atrial = np.where(
        rng.random(n) < 0.8,
        ventricular,
        np.clip(np.rint(rng.normal(ventricular, 20.0)), 30, 400),
    )
    qrs = np.clip(np.rint(rng.normal(qrs_mean, 16.0)), 18, 256)
    qt = np.clip(np.rint(rng.normal(400.0 - 1.2 * (ventricular - 60.0), 30.0)), 200, 700)
    qt_corrected = np.clip(np.rint(qt * np.sqrt(ventricular / 60.0)), 250, 760)
    r_axis = np.clip(np.rint(rng.normal(40.0, 45.0, n)), -179, 180)
    t_axis = np.clip(np.rint(rng.normal(45.0, 45.0, n)), -179, 180)
    qrs_count = np.clip(np.rint(ventricular / 6.0 + rng.normal(0.0, 1.0, n)), 4, 50)
    # 500 Hz sampling: two milliseconds per sample
    q_onset = np.rint(rng.normal(220.0, 6.0, n))
    q_offset = q_onset + np.rint(qrs / 2.0)
    t_offset = q_onset + np.rint(qt / 2.0)
    beat = rng.choice(len(_BEATS), size=n, p=_BEAT_WEIGHTS)

    columns = {
        "age": age,
        "ventricular_rate": ventricular,
        "atrial_rate": atrial,
        "qrs_duration": qrs,
        "qt_interval": qt,
        "qt_corrected": qt_corrected,
        "r_axis": r_axis,
        "t_axis": t_axis,
        "qrs_count": qrs_count,
        "q_onset": q_onset,
        "q_offset": q_offset,
        "t_offset": t_offset,
    }
    columns = {name: values.astype(int).tolist() for name, values in columns.items()}

    records = tuple(
        EcgRecord(
            rhythm=codes[index[i]],
            beat=_BEATS[beat[i]],
            sex=Sex.MALE if male[i] else Sex.FEMALE,
            **{name: values[i] for name, values in columns.items()},
        )
        for i in range(n)
    )

    logger.debug(f"Synthesized {n} records with seed {seed}")
    return Dataset(records=records, source=f"synthetic:seed={seed}")
