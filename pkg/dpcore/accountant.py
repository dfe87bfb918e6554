import os
import json
import logging
import tempfile
import threading
from enum import Enum
from datetime import datetime, timezone
from dataclasses import asdict, dataclass
from typing import Sequence

from dpcore.exceptions import (
    BudgetExceededError,
    DuplicateQueryError,
    InvalidParameterError,
    InvalidWeightError,
    LedgerClosedError,
)
from dpcore.mechanisms import PrivacyParams

EXHAUSTION_TOLERANCE = 1e-12

logger = logging.getLogger(__name__)


class LedgerState(str, Enum):
    OPEN = "open"
    EXHAUSTED = "exhausted"
    CLOSED = "closed"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Budget:
    """A nonnegative (epsilon, delta) amount, used for remaining budget."""

    epsilon: float
    delta: float = 0.0

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LedgerEntry:
    query_id: str
    epsilon: float
    delta: float
    timestamp: str

    def to_json(self) -> str:
        return json.dumps({"record": "charge", **asdict(self)})

    @staticmethod
    def from_dict(data: dict) -> "LedgerEntry":
        filtered_data = {
            k: v for k, v in data.items() if k in LedgerEntry.__annotations__
        }
        return LedgerEntry(**filtered_data)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class BudgetLedger:
    """
    Privacy budget account under sequential composition.

    Every successful charge is persisted before it is acknowledged, so a run
    killed mid-release cannot spend the same budget twice after a restart. The
    ledger file is newline-delimited JSON: an `open` record holding the total,
    one `charge` record per query and an optional terminal `close` record. The
    file is rewritten through a temporary file and an atomic rename.

    Args:
        total (PrivacyParams): The total budget of the ledger.
        path (str | None): Ledger file; None keeps the ledger in memory.
    """

    def __init__(self, total: PrivacyParams, path: str | None = None):
        self._total = total
        self._path = path
        self._opened = _now()
        self._entries: list[LedgerEntry] = []
        self._closed = None
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str) -> "BudgetLedger":
        """
        Load a ledger file written by `open_or_create` and `charge`.

        Raises:
            InvalidParameterError: If the file is not a ledger or holds a
                malformed record.
        """
        with open(path, "r", encoding="utf-8") as f:
            lines = [line for line in f if line.strip()]

        try:
            ledger = cls._from_records([json.loads(line) for line in lines], path)
        except InvalidParameterError:
            raise
        except (AttributeError, KeyError, TypeError, ValueError) as e:
            raise InvalidParameterError(f"{path}: malformed ledger record: {e!r}") from e

        logger.debug(f"Loaded ledger {path} with {len(ledger._entries)} entries")
        return ledger

    @classmethod
    def _from_records(cls, records: list[dict], path: str) -> "BudgetLedger":
        if not records or records[0].get("record") != "open":
            raise InvalidParameterError(f"{path} is not a budget ledger")

        header = records[0]
        ledger = cls(PrivacyParams(header["epsilon"], header.get("delta", 0.0)), path)
        ledger._opened = header.get("timestamp", ledger._opened)

        for record in records[1:]:
            match record.get("record"):
                case "charge":
                    entry = LedgerEntry.from_dict(record)
                    PrivacyParams(entry.epsilon, entry.delta)
                    ledger._entries.append(entry)
                case "close":
                    ledger._closed = record.get("timestamp")
                case _:
                    raise InvalidParameterError(
                        f"Unknown ledger record: {record.get('record')}"
                    )

        return ledger

    @classmethod
    def open_or_create(cls, path: str, total: PrivacyParams) -> "BudgetLedger":
        """
        Load the ledger at path, creating it with `total` if it does not exist.

        An existing ledger is never re-initialized, even when exhausted.
        """
        if os.path.exists(path):
            return cls.load(path)

        ledger = cls(total, path)
        ledger._persist(ledger._entries, None)
        logger.info(f"Created ledger {path} with total epsilon {total.epsilon:g}")
        return ledger

    @property
    def total(self) -> PrivacyParams:
        return self._total

    @property
    def path(self) -> str | None:
        return self._path

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    @property
    def state(self) -> LedgerState:
        if self._closed is not None:
            return LedgerState.CLOSED
        if self.remaining().epsilon <= EXHAUSTION_TOLERANCE:
            return LedgerState.EXHAUSTED
        return LedgerState.OPEN

    def spent(self) -> Budget:
        return Budget(
            epsilon=sum(entry.epsilon for entry in self._entries),
            delta=sum(entry.delta for entry in self._entries),
        )

    def remaining(self) -> Budget:
        spent = self.spent()
        return Budget(
            epsilon=max(0.0, self._total.epsilon - spent.epsilon),
            delta=max(0.0, self._total.delta - spent.delta),
        )

    def _check(self, query_ids: Sequence[str], costs: Sequence[PrivacyParams]):
        if self._closed is not None:
            raise LedgerClosedError("ledger is closed")

        remaining = self.remaining()
        epsilon = sum(cost.epsilon for cost in costs)
        delta = sum(cost.delta for cost in costs)
        if epsilon > remaining.epsilon + EXHAUSTION_TOLERANCE:
            raise BudgetExceededError(
                f"requested epsilon {epsilon:g} exceeds remaining {remaining.epsilon:g}",
                requested=epsilon,
                remaining=remaining.epsilon,
            )
        if delta > remaining.delta + EXHAUSTION_TOLERANCE:
            raise BudgetExceededError(
                f"requested delta {delta:g} exceeds remaining {remaining.delta:g}",
                requested=delta,
                remaining=remaining.delta,
            )

        known = {entry.query_id for entry in self._entries}
        seen = set()
        for query_id in query_ids:
            if query_id in known or query_id in seen:
                raise DuplicateQueryError(f"query id {query_id} already charged")
            seen.add(query_id)

    def admit(self, charges: Sequence[tuple[str, PrivacyParams]]):
        """
        Check that a whole batch of charges fits, without charging anything.

        Raises:
            BudgetExceededError: If the batch does not fit.
            DuplicateQueryError: If any query id repeats.
            LedgerClosedError: If the ledger is closed.
        """
        with self._lock:
            self._check([qid for qid, _ in charges], [cost for _, cost in charges])

    def charge(self, query_id: str, cost: PrivacyParams) -> "BudgetLedger":
        """
        Deduct cost from the ledger and persist the entry.

        A refused charge leaves the ledger and its file untouched.
        """
        with self._lock:
            self._check([query_id], [cost])

            entry = LedgerEntry(query_id, cost.epsilon, cost.delta, _now())
            entries = self._entries + [entry]
            self._persist(entries, self._closed)
            self._entries = entries

        logger.debug(f"Charged {query_id}: epsilon {cost.epsilon:g}")
        if self.state == LedgerState.EXHAUSTED:
            logger.info("Privacy budget exhausted")
        return self

    def close(self):
        with self._lock:
            if self._closed is not None:
                return
            closed = _now()
            self._persist(self._entries, closed)
            self._closed = closed

    def _persist(self, entries: list[LedgerEntry], closed: str | None):
        if self._path is None:
            return

        lines = [
            json.dumps(
                {"record": "open", **self._total.as_dict(), "timestamp": self._opened}
            )
        ]
        lines += [entry.to_json() for entry in entries]
        if closed is not None:
            lines.append(json.dumps({"record": "close", "timestamp": closed}))

        directory = os.path.dirname(os.path.abspath(self._path))
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".ledger-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write("\n".join(lines) + "\n")
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp_path, self._path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.unlink(tmp_path)
            raise


def distribute(total_epsilon: float, weights: Sequence[float]) -> list[float]:
    """
    Split a total epsilon proportionally to the given weights.

    Args:
        total_epsilon (float): The budget to split.
        weights: Positive weights, one per query.

    Returns:
        list[float]: total * w_i / sum(w).
    """
    if total_epsilon <= 0:
        raise InvalidParameterError(
            f"total epsilon must be positive, got {total_epsilon}"
        )
    if not weights:
        raise InvalidWeightError("at least one weight is required")
    if any(not w > 0 for w in weights):
        raise InvalidWeightError("weights must be positive")

    weight_sum = sum(weights)
    return [total_epsilon * w / weight_sum for w in weights]
