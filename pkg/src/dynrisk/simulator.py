"""Synthetic transaction streams with scripted drift and delayed feedback.

Both drift flavours are expressible in a :class:`DriftScript`: a change of the
fraud prior between segments shifts p(Y); a per-value attack multiplier or a
new population mix shifts p(X|Y).
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from dynrisk.domain import (
    CHARGEBACK,
    DAY,
    FEEDBACK_KINDS,
    FRAUD,
    HOUR,
    LEGITIMATE,
    MANUAL_REVIEW_REJECT,
    MINUTE,
    SYSTEM_REJECT,
    FeedbackEvent,
    Transaction,
)
from dynrisk.errors import DataError

TRANSACTION = "transaction"
FEEDBACK = "feedback"

DEVICES = ("PC", "Mobile", "Console")
DEVICE_WEIGHTS_GOOD = (0.55, 0.35, 0.10)
DEVICE_WEIGHTS_FRAUD = (0.35, 0.45, 0.20)
CURRENCIES = ("USD", "EUR", "GBP")


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    fraud_prior: float
    attack_targets: Mapping[str, float] = field(default_factory=dict)
    population_mix: Mapping[str, float] = field(default_factory=dict)
    fraud_amount_multiplier: float = 1.0


@dataclass(frozen=True)
class DriftScript:
    """Piecewise-constant generating process over ``[0, horizon)``.

    ``entity_feature`` is the static feature whose values the segments' attack
    targets and population mixes refer to; ``values`` lists its domain, which a
    segment samples uniformly unless its ``population_mix`` says otherwise.
    """

    segments: tuple[Segment, ...]
    values: tuple[str, ...] = tuple(f"P{i:02d}" for i in range(20))
    entity_feature: str = "product"
    signal_shift: float = 1.0
    amount_min: int = 500
    amount_max: int = 50000

    def validate(self, horizon: int) -> None:
        if not self.segments:
            raise ValueError("drift script must cover horizon")
        segs = self.segments
        if segs[0].start != 0 or segs[-1].end < horizon:
            raise ValueError("drift script must cover horizon")
        for a, b in zip(segs, segs[1:]):
            if a.end != b.start:
                raise ValueError(f"drift script segments overlap or leave a gap at {a.end}..{b.start}")
        for s in segs:
            if s.end <= s.start:
                raise ValueError(f"empty drift segment [{s.start}, {s.end})")
            if not 0.0 <= s.fraud_prior <= 1.0:
                raise ValueError(f"fraud_prior {s.fraud_prior} outside [0, 1]")
            if any(w <= 0 for w in s.population_mix.values()):
                raise ValueError("population_mix weights must be positive")
            if any(m < 0 for m in s.attack_targets.values()):
                raise ValueError("attack multipliers must be non-negative")
        if not self.values:
            raise ValueError("drift script has no entity values")
        if not 0 < self.amount_min <= self.amount_max:
            raise ValueError("need 0 < amount_min <= amount_max")


@dataclass(frozen=True)
class KindDelay:
    """Delay schedule for one feedback kind, in seconds.

    ``family`` is ``uniform`` (low..high), ``fixed`` (low) or ``exponential``
    (low plus an exponential with mean ``high - low``).
    """

    family: str = "uniform"
    low: int = 0
    high: int = 0
    emission: float = 0.0
    legit_emission: float = 0.0

    def validate(self, kind: str) -> None:
        if self.family not in ("uniform", "fixed", "exponential"):
            raise ValueError(f"{kind}: unknown delay family {self.family!r}")
        if self.low < 0 or self.high < self.low:
            raise ValueError(f"{kind}: need 0 <= low <= high")
        for p in (self.emission, self.legit_emission):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{kind}: emission probability {p} outside [0, 1]")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == "fixed" or self.high == self.low:
            return np.full(n, self.low, dtype=np.int64)
        if self.family == "uniform":
            return rng.integers(self.low, self.high, size=n, endpoint=True)
        return self.low + np.floor(rng.exponential(self.high - self.low, size=n)).astype(np.int64)


def default_delays() -> dict[str, KindDelay]:
    return {
        CHARGEBACK: KindDelay("uniform", 14 * DAY, 56 * DAY, emission=0.9),
        MANUAL_REVIEW_REJECT: KindDelay("uniform", 10 * MINUTE, 3 * HOUR, emission=0.3),
        SYSTEM_REJECT: KindDelay("fixed", 0, 0, emission=0.2),
    }


@dataclass(frozen=True)
class DelayModel:
    kinds: Mapping[str, KindDelay] = field(default_factory=default_delays)

    def validate(self) -> None:
        for kind, d in self.kinds.items():
            if kind not in FEEDBACK_KINDS:
                raise ValueError(f"unknown feedback kind {kind!r}")
            d.validate(kind)

    def min_delay(self, kind: str) -> int:
        return self.kinds[kind].low


@dataclass
class Stream:
    transactions: list[Transaction]
    labels: dict[str, str]
    feedback: list[FeedbackEvent]


def generate_stream(script: DriftScript, delay: DelayModel, rate: float, horizon: int,
                    seed: int) -> Stream:
    """Sample a labelled stream at ``rate`` transactions per day over ``[0, horizon)``.

    Transactions are evenly spaced; fraud is drawn per transaction with
    probability ``fraud_prior * multiplier(value)`` clipped to [0, 1].
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if rate <= 0:
        raise ValueError("rate must be positive")
    script.validate(horizon)
    delay.validate()

    n = int(round(rate * horizon / DAY))
    if n < 1:
        raise ValueError("rate * horizon yields no transactions")
    rng = np.random.Generator(np.random.PCG64(seed))
    times = (np.arange(n, dtype=np.int64) * horizon) // n
    starts = np.array([s.start for s in script.segments], dtype=np.int64)
    seg_idx = np.searchsorted(starts, times, side="right") - 1

    values = list(script.values)
    k = len(values)
    value_idx = np.empty(n, dtype=np.int64)
    p_fraud = np.empty(n, dtype=np.float64)
    amount_mult = np.ones(n, dtype=np.float64)
    for j, seg in enumerate(script.segments):
        rows = np.flatnonzero(seg_idx == j)
        if rows.size == 0:
            continue
        w = np.array([float(seg.population_mix.get(v, 1.0 if not seg.population_mix else 0.0))
                      for v in values])
        if w.sum() <= 0:
            raise ValueError(f"segment at {seg.start}: population_mix selects no known value")
        value_idx[rows] = rng.choice(k, size=rows.size, p=w / w.sum())
        mult = np.array([float(seg.attack_targets.get(v, 1.0)) for v in values])
        p_fraud[rows] = np.clip(seg.fraud_prior * mult[value_idx[rows]], 0.0, 1.0)
        amount_mult[rows] = seg.fraud_amount_multiplier

    is_fraud = rng.random(n) < p_fraud
    ids = [f"tx{i:07d}-{h:08x}" for i, h in enumerate(rng.integers(0, 2**32, size=n))]

    dev_u = rng.random(n)
    cum_good = np.cumsum(DEVICE_WEIGHTS_GOOD)
    cum_fraud = np.cumsum(DEVICE_WEIGHTS_FRAUD)
    device_idx = np.where(is_fraud, np.searchsorted(cum_fraud, dev_u, side="right"),
                          np.searchsorted(cum_good, dev_u, side="right"))
    device_idx = np.minimum(device_idx, len(DEVICES) - 1)
    currency_idx = rng.integers(0, len(CURRENCIES), size=n)
    signal = rng.standard_normal(n) + np.where(is_fraud, script.signal_shift, 0.0)
    log_amt = rng.uniform(math.log(script.amount_min), math.log(script.amount_max), size=n)
    amounts = np.round(np.exp(log_amt) * np.where(is_fraud, amount_mult, 1.0)).astype(np.int64)

    txns = []
    labels = {}
    for i in range(n):
        v = values[value_idx[i]]
        txns.append(Transaction(
            id=ids[i], time=int(times[i]), amount=int(amounts[i]),
            features={
                script.entity_feature: v,
                "device": DEVICES[device_idx[i]],
                "currency": CURRENCIES[currency_idx[i]],
                "risk_signal": round(float(signal[i]), 4),
            },
        ))
        labels[ids[i]] = FRAUD if is_fraud[i] else LEGITIMATE

    feedback = []
    for kind in FEEDBACK_KINDS:
        kd = delay.kinds.get(kind)
        if kd is None:
            continue
        for verdict, mask, p in ((FRAUD, is_fraud, kd.emission),
                                 (LEGITIMATE, ~is_fraud, kd.legit_emission)):
            # draws happen even at p == 0 so toggling one kind leaves the others' streams intact
            emit = (rng.random(n) < p) & mask
            delays = kd.sample(rng, n)
            for i in np.flatnonzero(emit):
                feedback.append(FeedbackEvent(ids[i], kind, int(times[i] + delays[i]), verdict))
    feedback.sort(key=lambda e: (e.arrival_time, e.transaction_id, e.kind))
    return Stream(txns, labels, feedback)


def replay(transactions: Sequence[Transaction], feedback: Sequence[FeedbackEvent],
           clock_callback: Callable[[int], None] | None = None) -> Iterator[tuple[str, object]]:
    """Merge transactions and feedback into one time-ordered event sequence.

    Ties sort by (time, transactions first, id). ``clock_callback(t)`` fires
    once before the first event at each new time ``t``.
    """
    by_id = {t.id: t for t in transactions}
    for e in feedback:
        txn = by_id.get(e.transaction_id)
        if txn is None:
            raise DataError(f"feedback references unknown transaction {e.transaction_id!r}")
        if e.arrival_time < txn.time:
            raise DataError(f"feedback for {e.transaction_id} arrives before the transaction")
    txn_iter = ((t.time, 0, t.id, "", TRANSACTION, t)
                for t in sorted(transactions, key=lambda t: (t.time, t.id)))
    fb_iter = ((e.arrival_time, 1, e.transaction_id, e.kind, FEEDBACK, e)
               for e in sorted(feedback, key=lambda e: (e.arrival_time, e.transaction_id, e.kind)))
    last = None
    for time, _, _, _, kind, obj in heapq.merge(txn_iter, fb_iter, key=lambda r: r[:4]):
        if clock_callback is not None and time != last:
            clock_callback(time)
        last = time
        yield kind, obj


def write_ground_truth(path, labels: Mapping[str, str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "final_label"])
        for tid, lab in labels.items():
            w.writerow([tid, lab])


def read_ground_truth(path) -> dict[str, str]:
    with open(path, newline="") as fh:
        return {row["id"]: row["final_label"] for row in csv.DictReader(fh)}
