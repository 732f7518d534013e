import math

import numpy as np
import pandas as pd
import pytest

from conftest import txn
from dynrisk.domain import CHARGEBACK, DAY, EntityDescriptor, FeedbackEvent, FeedbackPolicy
from dynrisk.features import (
    UpdateSchedule,
    assemble,
    assemble_dataset,
    build_frames,
    compute_feature_frame,
    dynamic_feature_names,
    read_assembled_csv,
    read_frames_csv,
    static_feature_names,
    warmup_frame,
    write_assembled_csv,
    write_frames_csv,
)
from dynrisk.profiles import COUNT, DOLLAR, ProfileStore, WindowConfig, entity_fr, overall_fr, rescan_snapshot, woe

PRODUCT = EntityDescriptor("product", ("product",))
COMBO = EntityDescriptor("combo", ("device", "currency"))
WIN = WindowConfig(2 * DAY, 4 * DAY)
GRID = [(2 * DAY, COUNT), (2 * DAY, DOLLAR), (4 * DAY, COUNT), (4 * DAY, DOLLAR)]


def test_feature_count_matches_grid():
    descs = [EntityDescriptor(f"e{i}", ("x",)) for i in range(4)]
    names = dynamic_feature_names(descs)
    assert len(names) == 4 + 8 * 4 == 36
    assert len(set(names)) == 36
    assert names[:4] == ["dyn_overall_fr_short_count", "dyn_overall_fr_short_dollar",
                         "dyn_overall_fr_long_count", "dyn_overall_fr_long_dollar"]
    assert names[4:12] == [f"dyn_e0_{s}_{w}_{wt}" for s in ("fr", "woe")
                           for w in ("short", "long") for wt in ("count", "dollar")]


def test_empty_store_frame_is_fallback():
    s = ProfileStore([PRODUCT], WIN)
    f = compute_feature_frame(0, s)
    assert f.overall == (0.0,) * 4
    assert f.entity["product"] == {}
    assert f.entity_vector("product", "anything") == (0.0,) * 8


def test_store_not_caught_up():
    with pytest.raises(ValueError, match="store not caught up"):
        compute_feature_frame(DAY, ProfileStore([PRODUCT], WIN))


def stream():
    rng = np.random.default_rng(0)
    txns, fb = [], []
    for i in range(400):
        t = int(i * 10 * DAY / 400)
        x = txn(f"t{i:03d}", t, int(rng.integers(1, 1000)),
                product=str(rng.choice(["a", "b", "c"])), device=str(rng.choice(["PC", "M"])),
                currency="USD")
        txns.append(x)
        if rng.random() < 0.2:
            fb.append(FeedbackEvent(x.id, CHARGEBACK, t + int(rng.integers(0, 3 * DAY))))
    fb.sort(key=lambda e: (e.arrival_time, e.transaction_id))
    return txns, fb


def oracle_frame(txns, fb, descs, t_k, alpha=0.5):
    """Frame values recomputed from the raw log with the statistics formulas."""
    scans = {length: rescan_snapshot(txns, fb, descs, FeedbackPolicy(), t_k, length)
             for length in (2 * DAY, 4 * DAY)}
    overall = tuple(overall_fr(scans[L][1], wt) for L, wt in GRID)
    entity = {}
    for d in descs:
        values = set(scans[2 * DAY][0][d.name].rows) | set(scans[4 * DAY][0][d.name].rows)
        entity[d.name] = {
            v: tuple(entity_fr(scans[L][0][d.name], v, wt) for L, wt in GRID)
            + tuple(woe(scans[L][0][d.name], v, wt, alpha) for L, wt in GRID)
            for v in values}
    return overall, entity


def test_frames_match_rescan():
    txns, fb = stream()
    descs = [PRODUCT, COMBO]
    frames = build_frames(txns, fb, descs, WIN, UpdateSchedule(DAY), until=10 * DAY)
    assert [f.t_k for f in frames] == [k * DAY for k in range(11)]
    for f in frames:
        overall, entity = oracle_frame(txns, fb, descs, f.t_k)
        assert f.overall == overall
        assert {n: dict(e) for n, e in f.entity.items()} == entity
        assert f.warm_up == (f.t_k < 4 * DAY)


def test_frame_boundary_and_warmup():
    txns, fb = stream()
    frames = build_frames(txns, fb, [PRODUCT], WIN, UpdateSchedule(DAY, epoch=DAY), until=5 * DAY)
    early = assemble(txn("e", DAY - 1, product="a"), frames, [PRODUCT])
    assert early.frame_time == -1
    assert early.dynamic == warmup_frame([PRODUCT]).overall + (0.0,) * 8
    at = assemble(txn("x", 3 * DAY, product="a"), frames, [PRODUCT])
    just_before = assemble(txn("y", 3 * DAY - 1, product="a"), frames, [PRODUCT])
    assert at.frame_time == 3 * DAY and just_before.frame_time == 2 * DAY


def test_mixed_seen_and_unseen_values():
    txns, fb = stream()
    frames = build_frames(txns, fb, [PRODUCT, COMBO], WIN, UpdateSchedule(DAY), until=10 * DAY)
    f = frames[6]
    probe = txn("p", f.t_k + 5, 321, product="a", device="Tablet", currency="USD")
    out = assemble(probe, frames, [PRODUCT, COMBO], static_names=["amount", "currency",
                                                                    "device", "product"])
    assert out.dynamic[:4] == f.overall
    assert out.dynamic[4:12] == f.entity["product"]["a"]
    assert "Tablet|USD" not in f.entity["combo"]
    assert out.dynamic[12:] == f.overall + (0.0,) * 4
    assert len(out.vector()) == 4 + 4 + 8 * 2
    assert list(out.static.values()) == [321, "USD", "Tablet", "a"]


def test_assemble_dataset_layout_and_determinism():
    txns, fb = stream()
    labels = {t.id: "fraud" if i % 7 == 0 else "legitimate" for i, t in enumerate(txns)}
    frames = build_frames(txns, fb, [PRODUCT], WIN, UpdateSchedule(DAY), until=10 * DAY)
    a = assemble_dataset(txns, frames, [PRODUCT], labels, warmup_length=4 * DAY)
    b = assemble_dataset(txns, build_frames(txns, fb, [PRODUCT], WIN, UpdateSchedule(DAY),
                                            until=10 * DAY), [PRODUCT], labels, 4 * DAY)
    pd.testing.assert_frame_equal(a, b)
    static = static_feature_names(txns)
    assert list(a.columns) == ["id", "time", "label", "warm_up", *static,
                               *dynamic_feature_names([PRODUCT])]
    assert a["warm_up"].tolist() == [t.time < 4 * DAY for t in txns]
    assert a["label"].sum() == sum(v == "fraud" for v in labels.values())
    fr_cols = [c for c in a.columns if "_fr_" in c]
    assert ((a[fr_cols] >= 0) & (a[fr_cols] <= 1)).all().all()
    assert np.isfinite(a[dynamic_feature_names([PRODUCT])].to_numpy()).all()


def test_frames_csv_round_trip(tmp_path):
    txns, fb = stream()
    frames = build_frames(txns, fb, [PRODUCT, COMBO], WIN, UpdateSchedule(DAY), until=10 * DAY)
    write_frames_csv(tmp_path / "f.csv", frames, [PRODUCT, COMBO])
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "t_k,entity,value,stat,window,weighting,value"
    back = read_frames_csv(tmp_path / "f.csv", [PRODUCT, COMBO], warmup_length=4 * DAY)
    assert back == frames


def test_assembled_csv_round_trip(tmp_path):
    txns, fb = stream()
    labels = {t.id: "legitimate" for t in txns}
    frames = build_frames(txns, fb, [PRODUCT], WIN, UpdateSchedule(DAY), until=10 * DAY)
    df = assemble_dataset(txns, frames, [PRODUCT], labels, 4 * DAY)
    write_assembled_csv(tmp_path / "a.csv", df)
    pd.testing.assert_frame_equal(read_assembled_csv(tmp_path / "a.csv"), df)


def test_schedule():
    s = UpdateSchedule(DAY, epoch=DAY)
    assert s.ticks(3 * DAY) == [DAY, 2 * DAY, 3 * DAY]
    assert s.on_schedule(2 * DAY) and not s.on_schedule(2 * DAY + 1) and not s.on_schedule(0)
    with pytest.raises(ValueError):
        UpdateSchedule(0)


def test_woe_component_is_finite_and_signed():
    txns, fb = stream()
    frames = build_frames(txns, fb, [PRODUCT], WIN, UpdateSchedule(DAY), until=10 * DAY)
    for f in frames:
        for vec in f.entity["product"].values():
            assert all(math.isfinite(x) for x in vec)
