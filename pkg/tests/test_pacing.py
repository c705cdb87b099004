import pytest
from hypothesis import given, strategies as st

from cyclescan.pacing import Pacer, RatePlan, line_rate_pps, pace, parse_bandwidth, wire_length


@pytest.mark.parametrize(
    "frame_len, wire, pps",
    [(54, 84, 1_488_095), (58, 84, 1_488_095), (60, 84, 1_488_095), (66, 90, 1_388_888), (74, 98, 1_275_510)],
)
def test_line_rate_gigabit(frame_len, wire, pps):
    assert wire_length(frame_len) == wire
    rate = line_rate_pps(frame_len, 10**9)
    assert rate == pytest.approx(10**9 / (wire * 8))
    assert int(rate) == pps


def test_line_rate_rejects_short_frames():
    with pytest.raises(ValueError):
        line_rate_pps(13, 10**9)


@given(st.integers(14, 1600), st.integers(14, 1600), st.integers(1, 10**11))
def test_line_rate_monotone_and_linear(a, b, bps):
    lo, hi = sorted((a, b))
    assert line_rate_pps(hi, bps) <= line_rate_pps(lo, bps)
    assert line_rate_pps(lo, 3 * bps) == pytest.approx(3 * line_rate_pps(lo, bps))


def test_parse_bandwidth():
    assert parse_bandwidth("1G") == 10**9
    assert parse_bandwidth("250m") == 250 * 10**6
    assert parse_bandwidth("1.5K") == 1500
    assert parse_bandwidth("9000") == 9000
    with pytest.raises(ValueError):
        parse_bandwidth("fast")


def test_rate_plan_from_bandwidth():
    plan = RatePlan.from_bandwidth(10**9, 74)
    assert int(plan.target_pps) == 1_275_510
    assert plan.batch_size == 64
    assert plan.split(4).target_pps == pytest.approx(plan.target_pps / 4)
    with pytest.raises(ValueError):
        RatePlan(100, batch_size=0)


def test_pace_examples():
    assert pace(RatePlan(1000), 1000, 0.0, 0.5) == pytest.approx(0.5)
    assert pace(RatePlan(1000), 100, 0.0, 0.5) == 0.0
    assert pace(RatePlan(0), 10**9, 0.0, 0.0) == 0.0
    assert RatePlan().unlimited


def simulate(rate, seconds, batch):
    """Fake-clock driver: wait the pacing delay, then send one batch."""
    plan = RatePlan(rate, batch_size=batch)
    pacer = Pacer(plan, 0.0)
    now, events = 0.0, []
    while True:
        now += pacer.delay(now)
        if now >= seconds:
            break
        pacer.record(batch)
        events.append((now, pacer.sent))
    return pacer.sent, events


@pytest.mark.parametrize("batch", [1, 16, 64, 256])
def test_simulated_rate_within_one_percent(batch):
    sent, events = simulate(10**4, 10.0, batch)
    assert abs(sent - 10**5) <= 1000
    for t, cumulative in events:
        assert cumulative <= 10**4 * t + batch + 1e-6


def test_schedule_never_ahead_of_rate():
    plan = RatePlan(10_000.0, batch_size=64)
    pacer = Pacer(plan, 0.0)
    for _ in range(2000):
        pacer.record(64)
        assert pacer.next_send_time() * plan.target_pps >= pacer.sent
    for rate in (3.0, 7.0, 1e4, 1488095.2380952382):
        plan = RatePlan(rate)
        for sent in range(0, 5000, 7):
            assert (pace(plan, sent, 0.0, 0.0)) * rate >= sent
