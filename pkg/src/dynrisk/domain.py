"""Core records: transactions, feedback events, entity descriptors and labels.

Time is integer seconds on a simulation clock and money is integer minor
currency units, so window arithmetic and dollar sums are exact.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

SEPARATOR = "|"
UNKNOWN = "UNKNOWN"

CHARGEBACK = "chargeback"
MANUAL_REVIEW_REJECT = "manual_review_reject"
SYSTEM_REJECT = "system_reject"
FEEDBACK_KINDS = (CHARGEBACK, MANUAL_REVIEW_REJECT, SYSTEM_REJECT)

FRAUD = "fraud"
LEGITIMATE = "legitimate"
GOOD_SO_FAR = "good-so-far"
VERDICTS = (FRAUD, LEGITIMATE)

MINUTE = 60
HOUR = 3600
DAY = 86400
WEEK = 7 * DAY

_PREFIX_RE = re.compile(r"^(?P<base>.+)_prefix(?P<n>\d+)$")


@dataclass(frozen=True)
class Transaction:
    id: str
    time: int
    amount: int
    features: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.time < 0:
            raise ValueError(f"transaction {self.id}: negative time {self.time}")
        if self.amount < 0:
            raise ValueError(f"transaction {self.id}: negative amount {self.amount}")
        object.__setattr__(self, "features", MappingProxyType(dict(self.features)))

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "time": self.time, "amount": self.amount,
             "features": dict(self.features)},
            sort_keys=False, separators=(",", ":"),
        )

    @classmethod
    def from_dict(cls, d: Mapping) -> "Transaction":
        return cls(id=str(d["id"]), time=int(d["time"]), amount=int(d["amount"]),
                   features=d.get("features") or {})


@dataclass(frozen=True)
class FeedbackEvent:
    transaction_id: str
    kind: str
    arrival_time: int
    verdict: str = FRAUD

    def __post_init__(self):
        if self.kind not in FEEDBACK_KINDS:
            raise ValueError(f"unknown feedback kind {self.kind!r}")
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.arrival_time < 0:
            raise ValueError(f"negative arrival_time {self.arrival_time}")

    def to_json(self) -> str:
        return json.dumps(
            {"transaction_id": self.transaction_id, "kind": self.kind,
             "arrival_time": self.arrival_time, "verdict": self.verdict},
            separators=(",", ":"),
        )

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeedbackEvent":
        return cls(transaction_id=str(d["transaction_id"]), kind=d["kind"],
                   arrival_time=int(d["arrival_time"]), verdict=d["verdict"])


@dataclass(frozen=True)
class EntityDescriptor:
    """A named entity built by joining one or more static feature values.

    A feature name of the form ``<name>_prefix<N>`` that is not itself present
    on the transaction resolves to the first N characters of ``<name>``.
    """

    name: str
    extractor: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "extractor", tuple(self.extractor))
        if not self.extractor:
            raise ValueError(f"entity descriptor {self.name!r}: extractor is empty")


@dataclass(frozen=True)
class FeedbackPolicy:
    """Which feedback kinds count as fraud evidence."""

    chargeback: bool = True
    manual_review_reject: bool = True
    system_reject: bool = True

    def enabled(self, kind: str) -> bool:
        return bool(getattr(self, kind))

    def counts(self, event: FeedbackEvent) -> bool:
        # legitimate verdicts never add evidence; goods stay good by absence
        return event.verdict == FRAUD and self.enabled(event.kind)


def _feature_token(features: Mapping[str, object], name: str) -> str:
    value = features.get(name)
    if value is None:
        m = _PREFIX_RE.match(name)
        if m and features.get(m.group("base")) is not None:
            return str(features[m.group("base")])[: int(m.group("n"))]
        return UNKNOWN
    return str(value)


def extract_entity_value(txn: Transaction, desc: EntityDescriptor) -> str:
    return SEPARATOR.join(_feature_token(txn.features, name) for name in desc.extractor)


def resolve_label(events: Iterable[FeedbackEvent], policy: FeedbackPolicy, as_of: float) -> str:
    """As-of label: fraud once any counted fraud event has arrived strictly before ``as_of``."""
    events = list(events)
    if len({e.transaction_id for e in events}) > 1:
        raise ValueError("resolve_label: events reference more than one transaction")
    for e in events:
        if policy.counts(e) and e.arrival_time < as_of:
            return FRAUD
    return GOOD_SO_FAR


def validate_descriptors(descriptors: Sequence[EntityDescriptor]) -> None:
    names = [d.name for d in descriptors]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ValueError(f"duplicate entity descriptor names: {dupes}")


def read_transactions(path) -> list[Transaction]:
    with open(path) as fh:
        return [Transaction.from_dict(json.loads(line)) for line in fh if line.strip()]


def read_feedback(path) -> list[FeedbackEvent]:
    with open(path) as fh:
        return [FeedbackEvent.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json())
            fh.write("\n")
