import pytest

ACCEPTANCE: list[tuple[str, bool, str]] = []

from dynrisk.config import load_config
from dynrisk.domain import DAY, EntityDescriptor, Transaction
from dynrisk.simulator import DelayModel, DriftScript, Segment, default_delays, generate_stream


def small_script(horizon, values=("A", "B", "C", "D"), prior=0.05, attack=None):
    segs = [Segment(0, horizon, prior, attack or {})]
    return DriftScript(tuple(segs), tuple(values), "product", signal_shift=1.0,
                       amount_min=100, amount_max=10000)


def fast_delays(chargeback_days=3):
    d = dict(default_delays())
    from dynrisk.simulator import KindDelay

    d["chargeback"] = KindDelay("uniform", DAY // 2, chargeback_days * DAY, emission=0.9)
    return DelayModel(d)


@pytest.fixture
def product_desc():
    return EntityDescriptor("product", ("product",))


@pytest.fixture
def small_stream():
    horizon = 20 * DAY
    return generate_stream(small_script(horizon), fast_delays(), rate=100, horizon=horizon, seed=7)


@pytest.fixture(scope="session")
def quickstart():
    return load_config("quickstart")


def txn(id, time, amount=100, **features):
    return Transaction(id, time, amount, features)


def record(criterion, ok, detail):
    ACCEPTANCE.append((str(criterion), bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
