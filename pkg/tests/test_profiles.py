import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import txn
from dynrisk.domain import CHARGEBACK, SYSTEM_REJECT, EntityDescriptor, FeedbackEvent, FeedbackPolicy
from dynrisk.errors import InvariantError
from dynrisk.profiles import (
    DOLLAR,
    LONG,
    SHORT,
    Cell,
    EntityProfileTable,
    ProfileStore,
    WindowConfig,
    entity_fr,
    overall_fr,
    rescan_snapshot,
    woe,
    write_snapshot_csv,
)
from dynrisk.simulator import replay

DESC = (EntityDescriptor("product", ("product",)),)
WIN = WindowConfig(10, 20)


def table(**cells):
    return EntityProfileTable({k: Cell(*v) for k, v in sorted(cells.items())})


def store():
    return ProfileStore(DESC, WIN)


def test_window_config_needs_short_below_long():
    with pytest.raises(ValueError):
        WindowConfig(20, 20)
    with pytest.raises(ValueError):
        WindowConfig(0, 5)


def test_ingest_then_flip():
    s = store()
    s.ingest_transaction(txn("a", 0, 100, product="v"))
    s.advance_to(1)
    assert s.snapshot(1, SHORT).tables["product"].get("v") == Cell(0, 1, 0, 100)
    s.ingest_feedback(FeedbackEvent("a", CHARGEBACK, 1))
    s.advance_to(2)
    assert s.snapshot(2, SHORT).tables["product"].get("v") == Cell(1, 0, 100, 0)
    assert s.snapshot(2, LONG).tables["product"].get("v") == Cell(1, 0, 100, 0)


def test_flip_after_leaving_short_window_changes_only_long():
    s = store()
    s.ingest_transaction(txn("a", 0, 100, product="v"))
    s.ingest_feedback(FeedbackEvent("a", CHARGEBACK, 15))
    s.advance_to(16)
    assert s.snapshot(16, SHORT).tables["product"].rows == {}
    assert s.snapshot(16, LONG).tables["product"].get("v") == Cell(1, 0, 100, 0)
    fb = [FeedbackEvent("a", CHARGEBACK, 15)]
    for w, length in ((SHORT, 10), (LONG, 20)):
        tables, _ = rescan_snapshot([txn("a", 0, 100, product="v")], fb, DESC, FeedbackPolicy(),
                                    16, length)
        assert s.snapshot(16, w).tables == tables


def test_duplicate_flip_counts_once():
    s = store()
    s.ingest_transaction(txn("a", 0, 7, product="v"))
    s.ingest_feedback(FeedbackEvent("a", CHARGEBACK, 1))
    s.ingest_feedback(FeedbackEvent("a", SYSTEM_REJECT, 2))
    s.advance_to(3)
    assert s.snapshot(3, LONG).totals == Cell(1, 0, 7, 0)


def test_half_open_boundary():
    s = store()
    s.ingest_transaction(txn("left_edge", 0, 1, product="v"))
    s.ingest_transaction(txn("inside", 5, 2, product="v"))
    s.advance_to(10)
    # [t - h, t): time 0 == t - h is the closed end
    assert s.snapshot(10, SHORT).totals == Cell(0, 2, 0, 3)
    s.ingest_transaction(txn("right_edge", 10, 4, product="v"))
    s.advance_to(11)
    assert s.snapshot(11, SHORT).totals == Cell(0, 2, 0, 6)


def test_transaction_at_t_excluded():
    s = store()
    s.advance_to(10)
    assert s.snapshot(10, SHORT).totals == Cell(0, 0, 0, 0)
    s.ingest_transaction(txn("now", 10, 1, product="v"))
    with pytest.raises(InvariantError):
        s.snapshot(10, SHORT)


def test_empty_window_is_zero():
    s = store()
    snap = s.snapshot(0, LONG)
    assert snap.totals == Cell(0, 0, 0, 0) and snap.warm_up
    assert snap.tables["product"].rows == {}


def test_non_monotonic_clock():
    s = store()
    s.ingest_transaction(txn("a", 5, product="v"))
    with pytest.raises(InvariantError, match="non-monotonic clock"):
        s.ingest_transaction(txn("b", 4, product="v"))


def test_duplicate_id_rejected():
    s = store()
    s.ingest_transaction(txn("a", 1, product="v"))
    with pytest.raises(ValueError, match="duplicate"):
        s.ingest_transaction(txn("a", 2, product="v"))


def test_policy_controls_flips():
    s = ProfileStore(DESC, WIN, FeedbackPolicy(system_reject=False))
    s.ingest_transaction(txn("a", 0, 5, product="v"))
    s.ingest_feedback(FeedbackEvent("a", SYSTEM_REJECT, 0))
    s.advance_to(1)
    assert s.snapshot(1, SHORT).totals == Cell(0, 1, 0, 5)


event_log = st.lists(
    st.tuples(st.integers(0, 60), st.sampled_from("abc"), st.integers(0, 500),
              st.one_of(st.none(), st.integers(0, 30))),
    min_size=1, max_size=40)


@settings(max_examples=60, deadline=None)
@given(event_log, st.booleans())
def test_store_matches_rescan_on_dense_grid(rows, sr_enabled):
    txns = [txn(f"t{i}", t, a, product=v) for i, (t, v, a, _) in enumerate(rows)]
    fb = [FeedbackEvent(f"t{i}", CHARGEBACK if i % 2 else SYSTEM_REJECT, t + d)
          for i, (t, _, _, d) in enumerate(rows) if d is not None]
    policy = FeedbackPolicy(system_reject=sr_enabled)
    s = ProfileStore(DESC, WIN, policy)
    probes = list(range(0, 100))
    snaps = {}

    def clock(t):
        while probes and probes[0] <= t:
            p = probes.pop(0)
            s.advance_to(p)
            snaps[p] = {w: s.snapshot(p, w) for w in (SHORT, LONG)}

    for kind, e in replay(txns, fb, clock_callback=clock):
        s.ingest(kind, e)
    clock(99)
    for p, by_w in snaps.items():
        for w, length in ((SHORT, 10), (LONG, 20)):
            tables, tot = rescan_snapshot(txns, fb, DESC, policy, p, length)
            assert by_w[w].tables == tables
            assert by_w[w].totals == tot


def test_overall_fr_examples():
    assert overall_fr(Cell(3, 7, 0, 0)) == 0.3
    assert overall_fr(Cell(0, 0, 0, 0)) == 0.0
    assert overall_fr(Cell(1, 1, 500, 500), DOLLAR) == 0.5


def test_entity_fr_examples():
    t = table(x=(2, 8, 20, 80), y=(0, 10, 0, 50))
    assert entity_fr(t, "x") == 0.2
    assert entity_fr(t, "y") == 0.0
    assert entity_fr(t, "x", DOLLAR) == 0.2
    assert entity_fr(t, "zzz") == overall_fr(t)


def test_entity_fallback_for_unseen_value():
    t = table(x=(1, 19, 10, 190))
    assert overall_fr(t) == 0.05
    assert entity_fr(t, "unseen") == 0.05


def test_woe_limit_example():
    t = table(x1=(2, 8, 0, 0), x2=(8, 82, 0, 0))
    assert woe(t, "x1", alpha=1e-12) == pytest.approx(math.log(2.25), abs=1e-9)
    assert math.log(2.25) == pytest.approx(0.8109, abs=1e-4)


def test_woe_smoothed_example():
    t = table(x1=(0, 10, 0, 0), x2=(5, 5, 0, 0))
    assert woe(t, "x1", alpha=0.5) == pytest.approx(math.log((0.5 / 6) / (10.5 / 16)), abs=1e-12)
    assert woe(t, "x1", alpha=0.5) == pytest.approx(-2.0637, abs=1e-4)


def test_woe_proportional_row_is_zero():
    t = table(x1=(1, 9, 0, 0), x2=(4, 36, 0, 0))
    assert woe(t, "x1", alpha=1e-12) == pytest.approx(0.0, abs=1e-9)


def test_woe_unseen_and_bad_alpha():
    t = table(x=(1, 1, 1, 1))
    assert woe(t, "nope") == 0.0
    with pytest.raises(ValueError):
        woe(t, "x", alpha=0.0)


def test_dollar_woe_scales_smoothing_by_mean_amount():
    t = table(x1=(0, 10, 0, 1000), x2=(5, 5, 500, 500))
    a = 0.5 * (2000 / 20)
    expected = math.log(((0 + a) / (500 + 2 * a)) / ((1000 + a) / (1500 + 2 * a)))
    assert woe(t, "x1", DOLLAR) == pytest.approx(expected, abs=1e-12)


def test_snapshot_csv(tmp_path):
    s = store()
    s.ingest_transaction(txn("a", 0, 100, product="v"))
    s.advance_to(1)
    write_snapshot_csv(tmp_path / "s.csv", [s.snapshot(1, SHORT), s.snapshot(1, LONG)])
    assert (tmp_path / "s.csv").read_text().splitlines() == [
        "entity,value,window,N1,N0,D1,D0", "product,v,short,0,1,0,100", "product,v,long,0,1,0,100"]
