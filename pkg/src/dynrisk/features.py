"""Dynamic risk feature frames and point-in-time assembly onto transactions.

A frame is computed at each schedule tick ``t_k`` from the store's window
tables and applies to every transaction with time in ``[t_k, t_{k+1})``.

Column order is fixed: the four overall fraud rates (short count, short
dollar, long count, long dollar), then for each descriptor in configuration
order the entity fraud rates followed by the weights of evidence, each as
short count, short dollar, long count, long dollar.
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from dynrisk.domain import (
    DAY,
    FRAUD,
    EntityDescriptor,
    FeedbackEvent,
    FeedbackPolicy,
    Transaction,
    extract_entity_value,
)
from dynrisk.profiles import (
    LONG,
    SHORT,
    WINDOWS,
    WEIGHTINGS,
    ProfileStore,
    WindowConfig,
    WindowSnapshot,
    entity_fr,
    overall_fr,
    woe,
)
from dynrisk.simulator import replay

DYN_PREFIX = "dyn_"
META_COLUMNS = ("id", "time", "label", "warm_up")
_GRID = [(w, wt) for w in WINDOWS for wt in WEIGHTINGS]


@dataclass(frozen=True)
class UpdateSchedule:
    period: int = DAY
    epoch: int = 0

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("update period must be positive")

    def ticks(self, until: int) -> list[int]:
        return list(range(self.epoch, until + 1, self.period))

    def on_schedule(self, t: int) -> bool:
        return t >= self.epoch and (t - self.epoch) % self.period == 0


def dynamic_feature_names(descriptors: Sequence[EntityDescriptor]) -> list[str]:
    names = [f"{DYN_PREFIX}overall_fr_{w}_{wt}" for w, wt in _GRID]
    for d in descriptors:
        for stat in ("fr", "woe"):
            names.extend(f"{DYN_PREFIX}{d.name}_{stat}_{w}_{wt}" for w, wt in _GRID)
    return names


@dataclass(frozen=True)
class FeatureFrame:
    t_k: int
    overall: tuple[float, ...]
    entity: Mapping[str, Mapping[str, tuple[float, ...]]]
    fallback: Mapping[str, tuple[float, ...]]
    warm_up: bool = False

    def entity_vector(self, descriptor: str, value: str) -> tuple[float, ...]:
        return self.entity[descriptor].get(value, self.fallback[descriptor])


def warmup_frame(descriptors: Sequence[EntityDescriptor]) -> FeatureFrame:
    zeros = (0.0,) * 8
    return FeatureFrame(-1, (0.0,) * 4, {d.name: {} for d in descriptors},
                        {d.name: zeros for d in descriptors}, warm_up=True)


def compute_feature_frame(t_k: int, store: ProfileStore,
                          descriptors: Sequence[EntityDescriptor] | None = None,
                          alpha: float = 0.5) -> FeatureFrame:
    if store.now < t_k:
        raise ValueError(f"store not caught up: clock {store.now} < t_k {t_k}")
    descriptors = store.descriptors if descriptors is None else tuple(descriptors)
    snaps: dict[str, WindowSnapshot] = {w: store.snapshot(t_k, w) for w in WINDOWS}
    overall = tuple(overall_fr(snaps[w].totals, wt) for w, wt in _GRID)
    entity = {}
    fallback = {}
    for d in descriptors:
        tables = {w: snaps[w].tables[d.name] for w in WINDOWS}
        fallback[d.name] = overall + (0.0,) * 4
        values = sorted(set(tables[SHORT].rows) | set(tables[LONG].rows))
        entity[d.name] = {
            v: tuple(entity_fr(tables[w], v, wt) for w, wt in _GRID)
            + tuple(woe(tables[w], v, wt, alpha) for w, wt in _GRID)
            for v in values
        }
    return FeatureFrame(t_k, overall, entity, fallback,
                        warm_up=snaps[LONG].warm_up)


def build_frames(transactions: Sequence[Transaction], feedback: Sequence[FeedbackEvent],
                 descriptors: Sequence[EntityDescriptor], windows: WindowConfig,
                 schedule: UpdateSchedule, policy: FeedbackPolicy | None = None,
                 alpha: float = 0.5, until: int | None = None,
                 on_tick: Callable[[int, ProfileStore], None] | None = None) -> list[FeatureFrame]:
    """Replay the event log through a store and publish a frame at every tick.

    ``on_tick(t_k, store)`` runs after each frame, while the store is still
    positioned at ``t_k``; the audit dump hooks in here.
    """
    store = ProfileStore(descriptors, windows, policy, epoch=schedule.epoch)
    if until is None:
        until = max((t.time for t in transactions), default=schedule.epoch)
    ticks = schedule.ticks(until)
    frames: list[FeatureFrame] = []
    pos = 0

    def publish_through(t: int) -> None:
        nonlocal pos
        while pos < len(ticks) and ticks[pos] <= t:
            store.advance_to(ticks[pos])
            frames.append(compute_feature_frame(ticks[pos], store, descriptors, alpha))
            if on_tick is not None:
                on_tick(ticks[pos], store)
            pos += 1

    for kind, event in replay(transactions, feedback, clock_callback=publish_through):
        store.ingest(kind, event)
    publish_through(until)
    return frames


@dataclass(frozen=True)
class AssembledTransaction:
    id: str
    time: int
    static: Mapping[str, object]
    dynamic: tuple[float, ...]
    frame_time: int
    names: tuple[str, ...] = field(default=())

    def vector(self) -> list[object]:
        return list(self.static.values()) + list(self.dynamic)


def static_feature_names(transactions: Iterable[Transaction]) -> list[str]:
    keys: set[str] = set()
    for t in transactions:
        keys.update(t.features)
    return ["amount"] + sorted(keys - {"amount"})


def _frame_for(time: int, frames: Sequence[FeatureFrame], frame_times: Sequence[int],
               descriptors) -> FeatureFrame:
    i = bisect.bisect_right(frame_times, time) - 1
    return frames[i] if i >= 0 else warmup_frame(descriptors)


def _dynamic_vector(txn: Transaction, frame: FeatureFrame, descriptors) -> tuple[float, ...]:
    out = list(frame.overall)
    for d in descriptors:
        out.extend(frame.entity_vector(d.name, extract_entity_value(txn, d)))
    return tuple(out)


def assemble(txn: Transaction, frames: Sequence[FeatureFrame],
             descriptors: Sequence[EntityDescriptor],
             static_names: Sequence[str] | None = None) -> AssembledTransaction:
    """Attach the latest frame with ``t_k <= txn.time`` (warm-up fallback if none)."""
    frame_times = [f.t_k for f in frames]
    frame = _frame_for(txn.time, frames, frame_times, descriptors)
    static_names = static_names or static_feature_names([txn])
    static = {n: _static_value(txn, n) for n in static_names}
    names = tuple(static_names) + tuple(dynamic_feature_names(descriptors))
    return AssembledTransaction(txn.id, txn.time, static, _dynamic_vector(txn, frame, descriptors),
                                frame.t_k, names)


def _static_value(txn: Transaction, name: str):
    if name == "amount":
        return txn.amount
    return txn.features.get(name)


def assemble_dataset(transactions: Sequence[Transaction], frames: Sequence[FeatureFrame],
                     descriptors: Sequence[EntityDescriptor],
                     labels: Mapping[str, str] | None = None,
                     warmup_length: int = 0, epoch: int = 0) -> pd.DataFrame:
    """Assembled rows for a whole stream as a DataFrame.

    Columns: ``id, time, label, warm_up`` then the p static and q dynamic
    features. ``label`` is 1 for final fraud, 0 otherwise, and missing when
    no labels are given.
    """
    static_names = static_feature_names(transactions)
    dyn_names = dynamic_feature_names(descriptors)
    frame_times = [f.t_k for f in frames]
    dyn = np.empty((len(transactions), len(dyn_names)), dtype=np.float64)
    static_cols: dict[str, list] = {n: [] for n in static_names}
    for i, txn in enumerate(transactions):
        frame = _frame_for(txn.time, frames, frame_times, descriptors)
        dyn[i] = _dynamic_vector(txn, frame, descriptors)
        for n in static_names:
            static_cols[n].append(_static_value(txn, n))
    data = {
        "id": [t.id for t in transactions],
        "time": np.array([t.time for t in transactions], dtype=np.int64),
        "label": ([1 if labels[t.id] == FRAUD else 0 for t in transactions]
                  if labels is not None else [pd.NA] * len(transactions)),
        "warm_up": [t.time < epoch + warmup_length for t in transactions],
    }
    data.update(static_cols)
    df = pd.DataFrame(data)
    return pd.concat([df, pd.DataFrame(dyn, columns=dyn_names)], axis=1)


def write_frames_csv(path, frames: Sequence[FeatureFrame],
                     descriptors: Sequence[EntityDescriptor]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_k", "entity", "value", "stat", "window", "weighting", "value"])
        for f in frames:
            for (win, wt), v in zip(_GRID, f.overall):
                w.writerow([f.t_k, "__overall__", "", "overall_fr", win, wt, repr(v)])
            for d in descriptors:
                for value, vec in f.entity[d.name].items():
                    for j, stat in enumerate(("fr", "woe")):
                        for (win, wt), v in zip(_GRID, vec[4 * j: 4 * j + 4]):
                            w.writerow([f.t_k, d.name, value, stat, win, wt, repr(v)])


def read_frames_csv(path, descriptors: Sequence[EntityDescriptor], warmup_length: int = 0,
                    epoch: int = 0) -> list[FeatureFrame]:
    """Inverse of :func:`write_frames_csv`; values round-trip bit-exactly."""
    grid_pos = {key: i for i, key in enumerate(_GRID)}
    overall: dict[int, list[float]] = {}
    entity: dict[int, dict[str, dict[str, list[float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for t_k, name, value, stat, win, wt, v in reader:
            t = int(t_k)
            overall.setdefault(t, [0.0] * 4)
            entity.setdefault(t, {d.name: {} for d in descriptors})
            pos = grid_pos[(win, wt)]
            if stat == "overall_fr":
                overall[t][pos] = float(v)
            else:
                vec = entity[t][name].setdefault(value, [0.0] * 8)
                vec[pos + (4 if stat == "woe" else 0)] = float(v)
    frames = []
    for t in sorted(overall):
        ov = tuple(overall[t])
        frames.append(FeatureFrame(
            t, ov, {n: {v: tuple(vec) for v, vec in rows.items()} for n, rows in entity[t].items()},
            {d.name: ov + (0.0,) * 4 for d in descriptors},
            warm_up=t - epoch < warmup_length))
    return frames


def write_assembled_csv(path, df: pd.DataFrame) -> None:
    df.to_csv(path, index=False)


def read_assembled_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip", keep_default_na=False,
                     na_values={"label": [""]})
    df["warm_up"] = df["warm_up"].astype(str).str.lower().eq("true")
    return df


def entity_series(frames: Sequence[FeatureFrame], descriptor: str, value: str,
                  stat_index: int) -> np.ndarray:
    """One component of one entity value's vector across frames (fallback when absent)."""
    return np.array([f.entity_vector(descriptor, value)[stat_index] for f in frames])


FR_SHORT_COUNT = 0
FR_LONG_COUNT = 2
