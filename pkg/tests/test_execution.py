from __future__ import annotations

from datetime import date, time, timedelta

import numpy as np
import pytest

from falsify.bars import Bar, RTH, TradingDay
from falsify.execution import (ExecutionError, ExitKind, ExitReason, ExitSpec,
                               FrictionModel, Instrument, MNQ, TradeRecord,
                               aggregate_by_year, serialize_trades, simulate)
from falsify.signals import LONG, SHORT, SignalEvent

CENT = Instrument("TEST", 0.01)


def day_from_closes(closes, d=date(2022, 1, 3), highs=None, lows=None,
                    opens=None):
    grid = RTH.grid(d)
    bars = []
    prev = closes[0]
    for i, c in enumerate(closes):
        o = opens[i] if opens is not None else prev
        hi = highs[i] if highs is not None else max(o, c)
        lo = lows[i] if lows is not None else min(o, c)
        bars.append(Bar(grid[i], float(o), float(hi), float(lo), float(c), 100))
        prev = c
    return TradingDay(d, RTH, tuple(bars), None, len(bars) == len(grid))


def ev(bar_index, direction=LONG, family="ORB_LONG", meta=()):
    return SignalEvent(family, date(2022, 1, 3), bar_index, direction, meta)


def one_trade(closes, event, exit, instrument=MNQ, **day_kwargs):
    res = simulate([event], day_from_closes(closes, **day_kwargs), exit,
                   FrictionModel(), instrument)
    assert len(res.trades) == 1, res.rejections
    return res.trades[0]


# -- entry and horizon exits ----------------------------------------------------

def test_horizon_one_hand_walk():
    closes = [100.0] * 78
    closes[10] = 100.0  # signal bar
    closes[11] = 103.0  # entry bar: opens at 100, closes at 103
    t = one_trade(closes, ev(10), ExitSpec(ExitKind.HORIZON, horizon=1))
    assert t.entry_bar == 11
    assert t.entry_price == 100.0
    assert t.exit_bar == 11
    assert t.exit_price == 103.0
    assert t.gross == 3.0
    assert t.net == 1.0
    assert t.exit_reason == ExitReason.HORIZON


def test_horizon_exit_is_close_of_offset_bar():
    closes = list(np.linspace(100, 120, 78).round(2))
    t = one_trade(closes, ev(10), ExitSpec(ExitKind.HORIZON, horizon=6),
                  instrument=CENT)
    assert t.entry_bar == 11
    assert t.exit_bar == 16  # entry bar + horizon - 1 == signal bar + horizon
    assert t.exit_price == closes[16]


def test_short_direction_sign():
    closes = [100.0] * 78
    closes[11] = 95.0
    t = one_trade(closes, ev(10, SHORT), ExitSpec(ExitKind.HORIZON, horizon=1))
    assert t.gross == 5.0
    assert t.net == 3.0


def test_friction_arithmetic_on_reported_pairs():
    # gross/net pairs under the fixed 2.0-point round trip
    pairs = [(16.52, 14.52), (3.37, 1.37), (1.06, -0.94)]
    for gross, net in pairs:
        closes = [100.0] * 78
        closes[11] = 100.0 + gross
        t = one_trade(closes, ev(10), ExitSpec(ExitKind.HORIZON, horizon=1),
                      instrument=CENT)
        assert t.gross == pytest.approx(gross, abs=1e-9)
        assert t.net == pytest.approx(net, abs=1e-9)


def test_session_end_clipping():
    closes = [100.0] * 78
    closes[-1] = 104.0
    t = one_trade(closes, ev(75), ExitSpec(ExitKind.HORIZON, horizon=10))
    assert t.exit_bar == 77
    assert t.exit_price == 104.0
    assert t.exit_reason == ExitReason.SESSION_END


def test_signal_on_last_bar_rejected():
    closes = [100.0] * 78
    res = simulate([ev(77)], day_from_closes(closes),
                   ExitSpec(ExitKind.HORIZON, horizon=1))
    assert res.trades == ()
    assert len(res.rejections) == 1
    assert "cannot enter" in res.rejections[0].reason


# -- stops ------------------------------------------------------------------------

def test_stop_hand_walk():
    closes = [100.0] * 78
    lows = [c for c in closes]
    lows[15] = 79.0
    closes[15] = 85.0
    t = one_trade(closes, ev(10), ExitSpec(ExitKind.STOP_HORIZON, horizon=15, stop=20.0),
                  lows=lows)
    assert t.exit_price == 80.0
    assert t.gross == -20.0
    assert t.exit_reason == ExitReason.STOP
    assert t.exit_bar == 15


def test_same_bar_stop_beats_favorable_close():
    closes = [100.0] * 78
    closes[11] = 130.0  # entry bar rips higher but also trades 21 lower intrabar
    lows = [c for c in closes]
    lows[11] = 79.0
    t = one_trade(closes, ev(10), ExitSpec(ExitKind.STOP_HORIZON, horizon=15, stop=20.0),
                  lows=lows, highs=[max(c, 130.0) for c in closes])
    assert t.exit_reason == ExitReason.STOP
    assert t.gross == -20.0


def test_stop_never_hit_falls_through_to_horizon():
    closes = [100.0] * 78
    closes[25] = 107.0
    t = one_trade(closes, ev(10), ExitSpec(ExitKind.STOP_HORIZON, horizon=15, stop=20.0))
    assert t.exit_reason == ExitReason.HORIZON
    assert t.exit_bar == 25
    assert t.gross == 7.0


def test_conservative_stop_dominates_favorable_oracle():
    rng = np.random.default_rng(8)
    for trial in range(50):
        closes = list((100 + np.cumsum(rng.normal(0, 4, 78))).round(2))
        lows = [c - abs(rng.normal(0, 3)) for c in closes]
        highs = [c + abs(rng.normal(0, 3)) for c in closes]
        day = day_from_closes(closes, highs=highs, lows=lows)
        spec = ExitSpec(ExitKind.STOP_HORIZON, horizon=10, stop=10.0)
        event = ev(int(rng.integers(0, 60)))
        res = simulate([event], day, spec, FrictionModel(), CENT)
        if not res.trades:
            continue
        t = res.trades[0]
        # favorable oracle: ignore the stop on the exit bar if the close is better
        entry = t.entry_price
        horizon_bar = min(t.entry_bar + 9, 77)
        oracle_exit = max(t.exit_price, day.bars[horizon_bar].close) \
            if t.exit_reason == ExitReason.STOP else t.exit_price
        assert t.gross <= (oracle_exit - entry) + 1e-9


# -- clock exits --------------------------------------------------------------------

def test_clock_exit_at_bar_open():
    closes = list(np.linspace(100, 110, 78).round(2))
    t = one_trade(closes, ev(10), ExitSpec(ExitKind.CLOCK, clock=time(12, 0)),
                  instrument=CENT)
    cb = 30  # bar opening at 12:00
    assert t.exit_bar == cb
    assert t.exit_price == day_from_closes(closes).bars[cb].open
    assert t.exit_reason == ExitReason.CLOCK


def test_clock_already_past_exits_at_session_end():
    closes = [100.0] * 78
    t = one_trade(closes, ev(50), ExitSpec(ExitKind.CLOCK, clock=time(10, 0)))
    assert t.exit_bar == 77
    assert t.exit_reason == ExitReason.SESSION_END


# -- pullback limit entries -----------------------------------------------------------

def limit_ev(bar_index, level):
    return SignalEvent("CONFLUENCE_RTH", date(2022, 1, 3), bar_index, LONG,
                       (("limit_level", level),))


def test_limit_fill_at_level():
    closes = [100.0] * 78
    lows = [c for c in closes]
    lows[14] = 90.0
    closes[23] = 101.0
    t = one_trade(closes, limit_ev(10, 95.0),
                  ExitSpec(ExitKind.PULLBACK_LIMIT, horizon=13), lows=lows)
    assert t.entry_bar == 14
    assert t.entry_price == 95.0
    assert t.exit_bar == 23  # signal bar + horizon
    assert t.exit_price == 101.0


def test_limit_gap_through_fills_at_better_open():
    closes = [100.0] * 78
    opens = [100.0] * 78
    opens[14] = 88.0  # gaps through the 95 level
    lows = [min(o, c) for o, c in zip(opens, closes)]
    highs = [max(o, c) for o, c in zip(opens, closes)]
    t = one_trade(closes, limit_ev(10, 95.0),
                  ExitSpec(ExitKind.PULLBACK_LIMIT, horizon=13),
                  opens=opens, lows=lows, highs=highs)
    assert t.entry_price == 88.0


def test_limit_never_touched_is_rejection_not_trade():
    closes = [100.0] * 78
    res = simulate([limit_ev(10, 95.0)], day_from_closes(closes),
                   ExitSpec(ExitKind.PULLBACK_LIMIT, horizon=13))
    assert res.trades == ()
    assert len(res.rejections) == 1


# -- invariants -----------------------------------------------------------------------

def test_friction_linearity_exact():
    rng = np.random.default_rng(5)
    closes = list((100 + np.cumsum(rng.normal(0, 2, 78))).round(2))
    day = day_from_closes(closes)
    events = [ev(int(i), LONG if i % 2 else SHORT) for i in range(5, 70, 7)]
    res = simulate(events, day, ExitSpec(ExitKind.HORIZON, horizon=3),
                   FrictionModel(), CENT)
    total_gross = sum(t.gross_ticks for t in res.trades)
    total_net = sum(t.net_ticks for t in res.trades)
    assert total_net == total_gross - len(res.trades) * CENT.to_ticks(2.0)


def test_entry_price_independent_of_signal_bar():
    closes = [100.0] * 78
    base = one_trade(closes, ev(10), ExitSpec(ExitKind.HORIZON, horizon=3))
    mutated = list(closes)
    mutated[10] = 140.0  # mutate the signal bar only
    highs = [max(c, 141.0) if i == 10 else None for i, c in enumerate(mutated)]
    day = day_from_closes(mutated)
    bars = list(day.bars)
    b = bars[10]
    bars[10] = Bar(b.ts, b.open, 141.0, b.low, b.close, b.volume)
    bars[11] = Bar(bars[11].ts, 100.0, max(100.0, bars[11].high), min(100.0, bars[11].low),
                   bars[11].close, bars[11].volume)
    day = TradingDay(day.date, day.session, tuple(bars), None, True)
    res = simulate([ev(10)], day, ExitSpec(ExitKind.HORIZON, horizon=3))
    assert res.trades[0].entry_price == base.entry_price


def test_entry_price_tracks_next_bar_open():
    closes = [100.0] * 78
    opens = [100.0] * 78
    opens[11] = 102.5
    highs = [max(o, c) for o, c in zip(opens, closes)]
    lows = [min(o, c) for o, c in zip(opens, closes)]
    t = one_trade(closes, ev(10), ExitSpec(ExitKind.HORIZON, horizon=3),
                  opens=opens, highs=highs, lows=lows)
    assert t.entry_price == 102.5


def test_exit_never_precedes_entry():
    rng = np.random.default_rng(13)
    for trial in range(20):
        closes = list((100 + np.cumsum(rng.normal(0, 3, 78))).round(2))
        day = day_from_closes(closes)
        events = [ev(int(b)) for b in rng.integers(0, 77, size=6)]
        for spec in (ExitSpec(ExitKind.HORIZON, horizon=1),
                     ExitSpec(ExitKind.STOP_HORIZON, horizon=8, stop=5.0),
                     ExitSpec(ExitKind.CLOCK, clock=time(14, 0))):
            for t in simulate(events, day, spec, FrictionModel(), CENT).trades:
                assert t.exit_bar >= t.entry_bar


def test_exit_spec_validation():
    with pytest.raises(ExecutionError):
        ExitSpec(ExitKind.HORIZON, horizon=0)
    with pytest.raises(ExecutionError):
        ExitSpec(ExitKind.STOP_HORIZON, horizon=5)
    with pytest.raises(ExecutionError):
        ExitSpec(ExitKind.STOP_HORIZON, horizon=5, stop=-1.0)
    with pytest.raises(ExecutionError):
        ExitSpec(ExitKind.CLOCK)
    with pytest.raises(ExecutionError):
        FrictionModel(-0.5)


# -- aggregation and serialization ----------------------------------------------------

def make_trade(d, net=1.0):
    ticks = MNQ.to_ticks(net)
    return TradeRecord("ORB_LONG", d, LONG, 1, 2, 100.0, 100.0 + net,
                       ticks + 8, ticks, ExitReason.HORIZON, 0.25)


def test_aggregate_by_year_empty():
    assert aggregate_by_year([]) == {}


def test_aggregate_by_year_partitions():
    trades = ([make_trade(date(2022, 3, 1))] * 2
              + [make_trade(date(2023, 3, 1))] * 3
              + [make_trade(date(2024, 3, 1))])
    out = aggregate_by_year(trades)
    assert {y: len(v) for y, v in out.items()} == {2022: 2, 2023: 3, 2024: 1}


def test_aggregate_partition_sizes_sum():
    rng = np.random.default_rng(1)
    trades = [make_trade(date(2022 + int(rng.integers(0, 4)), 1, 3))
              for _ in range(200)]
    out = aggregate_by_year(trades)
    assert sum(len(v) for v in out.values()) == len(trades)


def test_serialize_trades_header_and_rows():
    text = serialize_trades([make_trade(date(2022, 3, 1), net=2.5)])
    lines = text.splitlines()
    assert lines[0].startswith("family,date,direction")
    assert lines[1].split(",")[0] == "ORB_LONG"
    assert lines[1].split(",")[8] == "2.50"
