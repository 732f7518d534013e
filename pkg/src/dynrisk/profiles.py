"""Windowed entity profiles and the statistics derived from them.

For each entity descriptor and each window length the store maintains the
good/bad contingency table of counts and dollar sums over ``[t - h, t)``.
Expiry is per transaction through a FIFO queue, so a snapshot at any integer
time is exact rather than bucket-approximate.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from dynrisk.domain import (
    EntityDescriptor,
    FeedbackEvent,
    FeedbackPolicy,
    Transaction,
    extract_entity_value,
)
from dynrisk.errors import DataError, InvariantError

SHORT = "short"
LONG = "long"
WINDOWS = (SHORT, LONG)
COUNT = "count"
DOLLAR = "dollar"
WEIGHTINGS = (COUNT, DOLLAR)

EMPTY_FR = 0.0


@dataclass(frozen=True)
class WindowConfig:
    short_length: int
    long_length: int

    def __post_init__(self):
        if not 0 < self.short_length < self.long_length:
            raise ValueError("window lengths need 0 < short_length < long_length")

    def length(self, window: str) -> int:
        return self.short_length if window == SHORT else self.long_length


class Cell(NamedTuple):
    """One entity value's row: fraud/good counts and fraud/good dollar sums."""

    n1: int = 0
    n0: int = 0
    d1: int = 0
    d0: int = 0

    @property
    def n(self) -> int:
        return self.n1 + self.n0

    @property
    def d(self) -> int:
        return self.d1 + self.d0


@dataclass(frozen=True)
class EntityProfileTable:
    rows: Mapping[str, Cell] = field(default_factory=dict)

    @property
    def totals(self) -> Cell:
        n1 = n0 = d1 = d0 = 0
        for c in self.rows.values():
            n1 += c.n1
            n0 += c.n0
            d1 += c.d1
            d0 += c.d0
        return Cell(n1, n0, d1, d0)

    def present(self) -> list[str]:
        return [v for v, c in self.rows.items() if c.n > 0]

    def get(self, value: str) -> Cell | None:
        return self.rows.get(value)


@dataclass(frozen=True)
class WindowSnapshot:
    t: int
    window: str
    tables: Mapping[str, EntityProfileTable]
    totals: Cell
    warm_up: bool = False


@dataclass(frozen=True)
class WindowStatistic:
    value: float
    weighting: str
    window: str | None = None


def _rate(bad: float, total: float) -> float | None:
    return bad / total if total > 0 else None


def overall_fr(table: EntityProfileTable | Cell, weighting: str = COUNT) -> float:
    """Fraud rate over the whole window; 0.0 for an empty window."""
    tot = table if isinstance(table, Cell) else table.totals
    r = _rate(tot.n1, tot.n) if weighting == COUNT else _rate(tot.d1, tot.d)
    return EMPTY_FR if r is None else r


def entity_fr(table: EntityProfileTable, value: str, weighting: str = COUNT) -> float:
    """Fraud rate of one entity value, falling back to the overall rate when undefined."""
    c = table.get(value)
    r = None
    if c is not None:
        r = _rate(c.n1, c.n) if weighting == COUNT else _rate(c.d1, c.d)
    return overall_fr(table, weighting) if r is None else r


def smoothing_unit(table: EntityProfileTable, weighting: str) -> float:
    """Pseudo-count scale: 1 for counts, the mean transaction amount for dollars."""
    if weighting == COUNT:
        return 1.0
    tot = table.totals
    return tot.d / tot.n if tot.n > 0 and tot.d > 0 else 1.0


def woe(table: EntityProfileTable, value: str, weighting: str = COUNT, alpha: float = 0.5) -> float:
    """Smoothed weight of evidence of ``value`` against the rest of the window.

    Every cell of the K present values gets ``alpha`` (times the mean amount
    for dollars) added before the fraud and good shares are formed, so the
    log-odds decomposition holds exactly on the smoothed table.
    """
    if not alpha > 0:
        raise ValueError("woe smoothing alpha must be positive")
    present = table.present()
    c = table.get(value)
    if c is None or c.n == 0:
        return 0.0
    a = alpha * smoothing_unit(table, weighting)
    k = len(present)
    tot = table.totals
    if weighting == COUNT:
        bad, good, bad_all, good_all = c.n1, c.n0, tot.n1, tot.n0
    else:
        bad, good, bad_all, good_all = c.d1, c.d0, tot.d1, tot.d0
    return math.log(((bad + a) / (bad_all + k * a)) / ((good + a) / (good_all + k * a)))


class _Record:
    __slots__ = ("id", "time", "amount", "values", "fraud")

    def __init__(self, id, time, amount, values):
        self.id = id
        self.time = time
        self.amount = amount
        self.values = values
        self.fraud = False


class _Window:
    def __init__(self, length: int, names: Sequence[str]):
        self.length = length
        self.queue: deque[_Record] = deque()
        self.tables: dict[str, dict[str, list[int]]] = {n: {} for n in names}
        self.totals = [0, 0, 0, 0]

    def _apply(self, rec: _Record, sign: int, fraud: bool) -> None:
        i_n, i_d = (0, 2) if fraud else (1, 3)
        self.totals[i_n] += sign
        self.totals[i_d] += sign * rec.amount
        for name, value in zip(self.tables, rec.values):
            row = self.tables[name].get(value)
            if row is None:
                row = self.tables[name][value] = [0, 0, 0, 0]
            row[i_n] += sign
            row[i_d] += sign * rec.amount
            if sign < 0 and row[0] == 0 and row[1] == 0:
                del self.tables[name][value]

    def add(self, rec: _Record) -> None:
        self.queue.append(rec)
        self._apply(rec, +1, rec.fraud)

    def evict_before(self, cutoff: int) -> None:
        q = self.queue
        while q and q[0].time < cutoff:
            rec = q.popleft()
            self._apply(rec, -1, rec.fraud)

    def flip(self, rec: _Record) -> None:
        self._apply(rec, -1, False)
        self._apply(rec, +1, True)

    def snapshot(self) -> tuple[dict[str, EntityProfileTable], Cell]:
        tables = {
            name: EntityProfileTable({v: Cell(*row) for v, row in sorted(rows.items())})
            for name, rows in self.tables.items()
        }
        return tables, Cell(*self.totals)


class ProfileStore:
    """Single-writer store of short- and long-window entity profiles.

    Events must arrive in non-decreasing clock order. A snapshot at ``t``
    requires the clock to have been advanced to exactly ``t`` and no event at
    or after ``t`` to have been ingested yet.
    """

    def __init__(self, descriptors: Sequence[EntityDescriptor], windows: WindowConfig,
                 policy: FeedbackPolicy | None = None, epoch: int = 0):
        self.descriptors = tuple(descriptors)
        self.windows = windows
        self.policy = policy or FeedbackPolicy()
        self.epoch = epoch
        self.now = 0
        self._last_event: int | None = None
        names = [d.name for d in self.descriptors]
        self._win = {w: _Window(windows.length(w), names) for w in WINDOWS}
        self._live: dict[str, _Record] = {}

    def _tick(self, t: int) -> None:
        if t < self.now:
            raise InvariantError(f"non-monotonic clock: {t} < {self.now}")
        self.now = t
        for w in self._win.values():
            w.evict_before(t - w.length)
        # the long window bounds which records can still be flipped
        long_q = self._win[LONG].queue
        if len(self._live) > 2 * len(long_q) + 1024:
            self._live = {r.id: r for r in long_q}

    def advance_to(self, t: int) -> None:
        self._tick(t)

    def ingest_transaction(self, txn: Transaction) -> None:
        self._tick(txn.time)
        if txn.id in self._live:
            raise DataError(f"duplicate transaction id {txn.id!r}")
        rec = _Record(txn.id, txn.time, txn.amount,
                      tuple(extract_entity_value(txn, d) for d in self.descriptors))
        self._live[txn.id] = rec
        for w in self._win.values():
            w.add(rec)
        self._last_event = txn.time

    def ingest_feedback(self, event: FeedbackEvent) -> None:
        self._tick(event.arrival_time)
        self._last_event = event.arrival_time
        if not self.policy.counts(event):
            return
        rec = self._live.get(event.transaction_id)
        if rec is None or rec.fraud:
            return
        rec.fraud = True
        for w in self._win.values():
            if rec.time >= self.now - w.length:
                w.flip(rec)

    def ingest(self, kind: str, event) -> None:
        if kind == "transaction":
            self.ingest_transaction(event)
        else:
            self.ingest_feedback(event)

    def snapshot(self, t: int, window: str) -> WindowSnapshot:
        if t != self.now:
            raise InvariantError(f"snapshot at {t} but store clock is at {self.now}")
        if self._last_event is not None and self._last_event >= t:
            raise InvariantError(f"snapshot at {t} after ingesting an event at {self._last_event}")
        tables, totals = self._win[window].snapshot()
        return WindowSnapshot(t, window, tables, totals,
                              warm_up=t - self.epoch < self.windows.length(window))


def rescan_snapshot(transactions: Iterable[Transaction], feedback: Iterable[FeedbackEvent],
                    descriptors: Sequence[EntityDescriptor], policy: FeedbackPolicy,
                    t: int, length: int) -> tuple[dict[str, EntityProfileTable], Cell]:
    """Recompute a window table from the raw event log (reference path)."""
    flagged = {e.transaction_id for e in feedback if policy.counts(e) and e.arrival_time < t}
    rows: dict[str, dict[str, list[int]]] = {d.name: {} for d in descriptors}
    tot = [0, 0, 0, 0]
    for txn in transactions:
        if not t - length <= txn.time < t:
            continue
        i_n, i_d = (0, 2) if txn.id in flagged else (1, 3)
        tot[i_n] += 1
        tot[i_d] += txn.amount
        for d in descriptors:
            row = rows[d.name].setdefault(extract_entity_value(txn, d), [0, 0, 0, 0])
            row[i_n] += 1
            row[i_d] += txn.amount
    tables = {n: EntityProfileTable({v: Cell(*r) for v, r in sorted(rs.items())})
              for n, rs in rows.items()}
    return tables, Cell(*tot)


def write_snapshot_csv(path, snapshots: Sequence[WindowSnapshot]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["entity", "value", "window", "N1", "N0", "D1", "D0"])
        for snap in snapshots:
            for name, table in snap.tables.items():
                for value, c in table.rows.items():
                    w.writerow([name, value, snap.window, c.n1, c.n0, c.d1, c.d0])
