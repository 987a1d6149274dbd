"""Synthetic OHLCV generators with known null / edge / regime properties.

Days are generated from per-day derived RNG streams so generation order
never changes the output. Intrabar extremes come from 5 latent sub-steps
per bar so stop-touch logic is exercised. All prices land on the tick
grid by construction.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Optional, Sequence

import numpy as np

from .bars import Bar, SessionSpec, TradingDay, RTH, group_days
from .signals import LONG, SHORT, SignalEvent

logger = logging.getLogger(__name__)

SUBSTEPS = 5


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class DriftSpec:
    magnitude: float
    horizon: int
    events_per_day: int = 1


@dataclass(frozen=True)
class RegimeSpec:
    """Hidden-state chain parameters; one entry per regime."""

    transition: tuple[tuple[float, ...], ...]
    means: tuple[float, ...]          # per-bar drift, points
    vols: tuple[float, ...]           # per-bar std, points
    volume_mults: tuple[float, ...]   # multiplier on base volume

    def __post_init__(self) -> None:
        for row in self.transition:
            if abs(sum(row) - 1.0) > 1e-9:
                raise SynthError("transition matrix rows must sum to 1")


@dataclass(frozen=True)
class SynthSpec:
    n_days: int
    session: SessionSpec = RTH
    vol_per_bar: float = 10.0
    seed: int = 0
    start_date: date = date(2022, 1, 3)
    base_price: float = 15000.0
    tick_size: float = 0.25
    volume_base: float = 1000.0
    volume_sigma: float = 0.5
    gap_sigma: float = 0.0  # overnight move std, points; RTH only
    drift: Optional[DriftSpec] = None
    regimes: Optional[RegimeSpec] = None

    def __post_init__(self) -> None:
        if self.vol_per_bar <= 0:
            raise SynthError("vol_per_bar must be positive")


def _weekdays(start: date, n: int) -> list[date]:
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def _quantize(x: np.ndarray, tick: float) -> np.ndarray:
    return np.round(x / tick) * tick


def _day_bars(session: SessionSpec, day: date, open_price: float, steps: np.ndarray,
              volumes: np.ndarray, tick: float) -> tuple[list[Bar], float]:
    """Build one day's bars from per-substep increments; returns (bars, close)."""
    nbars = session.nominal_bar_count
    levels = open_price + np.cumsum(steps.reshape(-1))
    levels = _quantize(levels, tick).reshape(nbars, SUBSTEPS)
    grid = session.grid(day)
    first_open = round(open_price / tick) * tick
    opens = np.concatenate(([first_open], levels[:-1, -1]))
    closes = levels[:, -1]
    highs = np.maximum(opens, levels.max(axis=1))
    lows = np.minimum(opens, levels.min(axis=1))
    bars = [Bar(grid[i], opens[i], highs[i], lows[i], closes[i], int(volumes[i]))
            for i in range(nbars)]
    return bars, float(closes[-1])


def _volumes(rng: np.random.Generator, n: int, base: float, sigma: float,
             mults: Optional[np.ndarray] = None) -> np.ndarray:
    v = base * rng.lognormal(0.0, sigma, size=n)
    if mults is not None:
        v = v * mults
    return np.maximum(np.round(v), 1.0)


def gen_null_days(spec: SynthSpec) -> list[TradingDay]:
    """Driftless additive random-walk days, deterministic per seed."""
    if spec.drift is not None:
        raise SynthError("null generator takes a drift-free spec")
    sess = spec.session
    nbars = sess.nominal_bar_count
    dates = _weekdays(spec.start_date, spec.n_days)
    step_sigma = spec.vol_per_bar / math.sqrt(SUBSTEPS)

    all_bars: list[Bar] = []
    price = spec.base_price
    for di, d in enumerate(dates):
        rng = np.random.default_rng([spec.seed, di])
        if spec.gap_sigma > 0 and di > 0:
            price += rng.normal(0.0, spec.gap_sigma)
        steps = rng.normal(0.0, step_sigma, size=(nbars, SUBSTEPS))
        vols = _volumes(rng, nbars, spec.volume_base, spec.volume_sigma)
        bars, price = _day_bars(sess, d, price, steps, vols, spec.tick_size)
        all_bars.extend(bars)
    return group_days(all_bars, sess)


def plant_drift(days: Sequence[TradingDay], events: Sequence[SignalEvent],
                magnitude: float, horizon: int,
                tick_size: float = 0.25) -> list[TradingDay]:
    """Overlay per-event drift so the ``horizon`` bars after each event bar
    carry total expected move ``magnitude`` in the event direction.

    Offsets persist to the end of the day (no artificial snap-back), and
    the open of the bar after the event bar is untouched, so next-bar-open
    entries capture exactly the planted move.
    """
    by_day: dict[date, list[SignalEvent]] = {}
    for ev in events:
        by_day.setdefault(ev.day, []).append(ev)

    out: list[TradingDay] = []
    for day in days:
        evs = by_day.get(day.date)
        if not evs:
            out.append(day)
            continue
        n = len(day.bars)
        off_open = np.zeros(n)
        off_close = np.zeros(n)
        step_base = magnitude / horizon
        for ev in evs:
            sign = 1.0 if ev.direction == LONG else -1.0
            p = ev.bar_index
            for j in range(1, horizon + 1):
                if p + j >= n:
                    break
                off_open[p + j] += sign * step_base * (j - 1)
                off_close[p + j] += sign * step_base * j
            for i in range(p + horizon + 1, n):
                off_open[i] += sign * magnitude
                off_close[i] += sign * magnitude
        bars = []
        for i, b in enumerate(day.bars):
            o = b.open + off_open[i]
            c = b.close + off_close[i]
            hi = max(b.high + max(off_open[i], off_close[i]), o, c)
            lo = min(b.low + min(off_open[i], off_close[i]), o, c)
            q = lambda x: round(x / tick_size) * tick_size
            bars.append(Bar(b.ts, q(o), max(q(hi), q(o), q(c)),
                            min(q(lo), q(o), q(c)), q(c), b.volume))
        out.append(TradingDay(day.date, day.session, tuple(bars),
                              day.prior_rth_close, day.complete))
    return _relink_rth(out)


def _relink_rth(days: list[TradingDay]) -> list[TradingDay]:
    """Recompute prior_rth_close links after bar mutation."""
    if not days or days[0].session.name != "RTH":
        return days
    out = []
    prior = None
    for d in days:
        out.append(TradingDay(d.date, d.session, d.bars, prior, d.complete))
        prior = d.bars[-1].close if d.complete else None
    return out


def gen_edge_days(spec: SynthSpec) -> tuple[list[TradingDay], list[SignalEvent]]:
    """Null days plus randomly placed planted drift events (ground truth returned)."""
    if spec.drift is None:
        raise SynthError("edge generator requires a drift spec")
    drift = spec.drift
    base = SynthSpec(n_days=spec.n_days, session=spec.session,
                     vol_per_bar=spec.vol_per_bar, seed=spec.seed,
                     start_date=spec.start_date, base_price=spec.base_price,
                     tick_size=spec.tick_size, volume_base=spec.volume_base,
                     volume_sigma=spec.volume_sigma)
    days = gen_null_days(base)
    nbars = spec.session.nominal_bar_count

    events: list[SignalEvent] = []
    skipped = 0
    for di, day in enumerate(days):
        rng = np.random.default_rng([spec.seed, di, 1])
        for slot in range(drift.events_per_day):
            bi = int(rng.integers(6, nbars - 1))
            if bi + drift.horizon > nbars - 1:
                skipped += 1
                continue
            direction = LONG if rng.integers(0, 2) == 1 else SHORT
            events.append(SignalEvent("PLANTED", day.date, bi, direction))
    if skipped:
        logger.warning("skipped %d plantings with insufficient session remainder", skipped)
    days = plant_drift(days, events, drift.magnitude, drift.horizon, spec.tick_size)
    return days, events


def gen_regime_days(spec: SynthSpec) -> tuple[list[TradingDay], list[np.ndarray]]:
    """Hidden-regime days; returns (days, per-day true label arrays)."""
    if spec.regimes is None:
        raise SynthError("regime generator requires a regime spec")
    reg = spec.regimes
    k = len(reg.means)
    trans = np.array(reg.transition)
    sess = spec.session
    nbars = sess.nominal_bar_count
    dates = _weekdays(spec.start_date, spec.n_days)

    all_bars: list[Bar] = []
    labels: list[np.ndarray] = []
    price = spec.base_price
    for di, d in enumerate(dates):
        rng = np.random.default_rng([spec.seed, di])
        if spec.gap_sigma > 0 and di > 0:
            price += rng.normal(0.0, spec.gap_sigma)
        state = int(rng.integers(0, k))
        day_labels = np.empty(nbars, dtype=int)
        steps = np.empty((nbars, SUBSTEPS))
        mults = np.empty(nbars)
        for i in range(nbars):
            day_labels[i] = state
            mu = reg.means[state] / SUBSTEPS
            sd = reg.vols[state] / math.sqrt(SUBSTEPS)
            steps[i] = rng.normal(mu, sd, size=SUBSTEPS)
            mults[i] = reg.volume_mults[state]
            state = int(rng.choice(k, p=trans[state]))
        vols = _volumes(rng, nbars, spec.volume_base, spec.volume_sigma, mults)
        bars, price = _day_bars(sess, d, price, steps, vols, spec.tick_size)
        all_bars.extend(bars)
        labels.append(day_labels)
    return group_days(all_bars, sess), labels


def gen_event_calendar(days: Sequence[TradingDay], seed: int = 0,
                       rate: float = 0.15) -> list["EconEvent"]:
    """Random high-impact USD events (14:00 ET FOMC-style) on ~rate of days."""
    from .bars import EconEvent, EventKind

    rng = np.random.default_rng([seed, 7])
    events = []
    for day in days:
        if rng.random() < rate:
            ts = datetime.combine(day.date, datetime.min.time()).replace(hour=14)
            events.append(EconEvent(ts, EventKind.FOMC, "HIGH", "USD"))
    return events

