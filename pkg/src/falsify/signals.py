"""Signal family detectors.

Every detector is a pure function of a completed day (plus any state
fitted on strictly earlier data) and emits events at bar close. An event
is only emitted when a next bar exists to enter on, so bar_index is
always at most len(bars) - 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, time, datetime, timedelta
from typing import Optional, Sequence

import numpy as np

from .bars import Bar, DayPrimitives, EconEvent, TradingDay
from .features import OuFit, RollingSpec, Statistic, ou_zscore, rolling_stat

LONG = "LONG"
SHORT = "SHORT"

FAMILIES = (
    "ORB_LONG", "ORB_SHORT", "ORB_PULLBACK",
    "ASIA_EXPANSION",
    "LIQUIDITY_GRAB_FADE", "LIQUIDITY_GRAB_CONT",
    "GAP_FILL_FADE", "GAP_CONT_SHORT",
    "VOL_SPIKE", "VOL_DRYUP",
    "VVG_REVERSAL", "VVG_CONTINUATION",
    "EVENT_DRIFT", "OU_REVERSION",
    "CONFLUENCE_RTH", "LONDON_B",
)


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class SignalEvent:
    family: str
    day: date
    bar_index: int
    direction: str
    meta: tuple[tuple[str, float], ...] = ()

    def meta_value(self, key: str, default: float | None = None) -> float | None:
        for k, v in self.meta:
            if k == key:
                return v
        return default


def _meta(**kv: float) -> tuple[tuple[str, float], ...]:
    return tuple(sorted((k, float(v)) for k, v in kv.items()))


def _last_entryable(day: TradingDay) -> int:
    """Highest bar index whose signal can still be entered next bar."""
    return len(day.bars) - 2


def orb_signals(day: TradingDay, prims: DayPrimitives, variant: str = "IMMEDIATE",
                pullback_offset: float = 5.0, stop: float = 20.0) -> list[SignalEvent]:
    """Opening range breakout, immediate or pullback entry.

    A breakout is a bar *close* beyond the range of bars 0..5; at most
    one long and one short event per day.
    """
    if variant not in ("IMMEDIATE", "PULLBACK"):
        raise SignalError(f"unknown ORB variant {variant!r}")
    bars = day.bars
    last = _last_entryable(day)
    or_hi, or_lo = prims.opening_range_high, prims.opening_range_low

    break_long: Optional[int] = None
    break_short: Optional[int] = None
    for i in range(6, len(bars)):
        if break_long is None and bars[i].close > or_hi:
            break_long = i
        if break_short is None and bars[i].close < or_lo:
            break_short = i
        if break_long is not None and break_short is not None:
            break

    events: list[SignalEvent] = []
    if variant == "IMMEDIATE":
        if break_long is not None and break_long <= last:
            events.append(SignalEvent("ORB_LONG", day.date, break_long, LONG,
                                      _meta(level=or_hi)))
        if break_short is not None and break_short <= last:
            events.append(SignalEvent("ORB_SHORT", day.date, break_short, SHORT,
                                      _meta(level=or_lo)))
        events.sort(key=lambda e: (e.bar_index, e.direction))
        return events

    for brk, level, direction in ((break_long, or_hi, LONG), (break_short, or_lo, SHORT)):
        if brk is None:
            continue
        for i in range(brk + 1, last + 1):
            near = (bars[i].low <= level + pullback_offset) if direction == LONG \
                else (bars[i].high >= level - pullback_offset)
            if near:
                events.append(SignalEvent("ORB_PULLBACK", day.date, i, direction,
                                          _meta(level=level, stop=stop, armed_at=brk)))
                break
    events.sort(key=lambda e: (e.bar_index, e.direction))
    return events


def asia_expansion_signals(day: TradingDay, multiple: float,
                           window: int = 20) -> list[SignalEvent]:
    """Expansion bar: range above a multiple of the rolling mean range.

    Direction follows the expansion bar's close-vs-open; dojis emit nothing.
    """
    bars = day.bars
    mean_range = rolling_stat(bars, RollingSpec(window, Statistic.MEAN_RANGE))
    events = []
    for i in range(min(len(bars), _last_entryable(day) + 1)):
        mr = mean_range[i]
        if not np.isfinite(mr) or mr <= 0:
            continue
        if bars[i].range > multiple * mr and bars[i].body != 0:
            direction = LONG if bars[i].body > 0 else SHORT
            events.append(SignalEvent("ASIA_EXPANSION", day.date, i, direction,
                                      _meta(multiple=multiple, bar_range=bars[i].range,
                                            mean_range=mr)))
    return events


def liquidity_grab_signals(day: TradingDay, lookback: Optional[int] = None,
                           mode: str = "FADE", min_history: int = 6) -> list[SignalEvent]:
    """Pierce of a recent extreme with a close back inside the range.

    ``lookback=None`` uses the running session extreme over all prior
    bars (requires ``min_history`` bars of history); an integer uses a
    fixed prior-bar window.
    """
    if mode not in ("FADE", "CONTINUATION"):
        raise SignalError(f"unknown liquidity grab mode {mode!r}")
    family = "LIQUIDITY_GRAB_FADE" if mode == "FADE" else "LIQUIDITY_GRAB_CONT"
    bars = day.bars
    events = []
    start = min_history if lookback is None else lookback
    highs = np.array([b.high for b in bars])
    lows = np.array([b.low for b in bars])
    run_hi = np.maximum.accumulate(highs)
    run_lo = np.minimum.accumulate(lows)
    for i in range(start, _last_entryable(day) + 1):
        if lookback is None:
            prior_hi, prior_lo = run_hi[i - 1], run_lo[i - 1]
        else:
            prior_hi = highs[i - lookback:i].max()
            prior_lo = lows[i - lookback:i].min()
        b = bars[i]
        if b.high > prior_hi and b.close < prior_hi:
            direction = SHORT if mode == "FADE" else LONG
            events.append(SignalEvent(family, day.date, i, direction,
                                      _meta(side=+1, pierced=prior_hi)))
        if b.low < prior_lo and b.close > prior_lo:
            direction = LONG if mode == "FADE" else SHORT
            events.append(SignalEvent(family, day.date, i, direction,
                                      _meta(side=-1, pierced=prior_lo)))
    return events


def _entry_time_bar(day: TradingDay, entry_time: time) -> int:
    """Signal bar for a wall-clock entry: the bar closing at entry_time.

    A session-open entry maps to bar 0 (signal at its close, fill at the
    next bar open, the earliest fill the execution contract allows).
    """
    sess = day.session
    if entry_time == sess.start:
        return 0
    anchor = datetime.combine(day.date, sess.start)
    target = datetime.combine(day.date, entry_time)
    if sess.wraps_midnight and entry_time < sess.start:
        target += timedelta(days=1)
    minutes = (target - anchor).total_seconds() / 60
    idx = minutes / sess.bar_minutes - 1
    if idx != int(idx) or not (0 <= idx < sess.nominal_bar_count):
        raise SignalError(f"entry time {entry_time} outside {sess.name} session grid")
    return int(idx)


def gap_signals(day: TradingDay, prims: DayPrimitives, variant: str,
                entry_time: time = time(9, 30), kalman_v: float = 0.0,
                kalman_threshold: float = 2.5, min_gap: float = 5.0) -> list[SignalEvent]:
    """Overnight-gap strategies: fade toward the fill, or filtered continuation short."""
    if variant not in ("FILL_FADE", "CONT_SHORT"):
        raise SignalError(f"unknown gap variant {variant!r}")
    gap = prims.overnight_gap
    if gap is None:
        raise SignalError(f"day {day.date}: overnight gap undefined (no prior RTH close)")
    last = _last_entryable(day)

    if variant == "FILL_FADE":
        idx = _entry_time_bar(day, entry_time)
        if gap == 0 or abs(gap) < min_gap or idx > last:
            return []
        direction = SHORT if gap > 0 else LONG
        return [SignalEvent("GAP_FILL_FADE", day.date, idx, direction,
                            _meta(gap=gap))]

    if gap < 0 and abs(kalman_v) > kalman_threshold and last >= 0:
        return [SignalEvent("GAP_CONT_SHORT", day.date, 0, SHORT,
                            _meta(gap=gap, kalman_v=kalman_v))]
    return []


def volume_ratio_series(day: TradingDay, window: int = 20) -> np.ndarray:
    """Per-bar volume over the rolling prior-window mean volume; NaN on warm-up."""
    vmean = rolling_stat(day.bars, RollingSpec(window, Statistic.VOLUME_MEAN))
    v = np.array([float(b.volume) for b in day.bars])
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = v / vmean
    ratio[~np.isfinite(ratio)] = np.nan
    return ratio


def volume_ratio_cutoffs(days: Sequence[TradingDay], window: int = 20) -> tuple[float, float]:
    """(bottom-decile, top-decile) cutoffs of the volume ratio on a training set."""
    ratios = np.concatenate([volume_ratio_series(d, window) for d in days]) if days else np.array([])
    ratios = ratios[np.isfinite(ratios)]
    if len(ratios) == 0:
        return (0.0, float("inf"))
    return (float(np.quantile(ratios, 0.10)), float(np.quantile(ratios, 0.90)))


def volume_signature_signals(day: TradingDay, kind: str, spike_cutoff: float,
                             dryup_cutoff: float, window: int = 20) -> list[SignalEvent]:
    """Volume spike momentum (with the bar) or dry-up exhaustion (against it).

    Decile cutoffs are frozen on the training window and passed in.
    """
    if kind not in ("SPIKE", "DRYUP"):
        raise SignalError(f"unknown volume signature kind {kind!r}")
    family = "VOL_SPIKE" if kind == "SPIKE" else "VOL_DRYUP"
    ratio = volume_ratio_series(day, window)
    events = []
    for i in range(min(len(day.bars), _last_entryable(day) + 1)):
        r = ratio[i]
        if not np.isfinite(r):
            continue
        body = day.bars[i].body
        if body == 0:
            continue
        bar_dir = LONG if body > 0 else SHORT
        if kind == "SPIKE" and r > spike_cutoff:
            events.append(SignalEvent(family, day.date, i, bar_dir, _meta(ratio=r)))
        elif kind == "DRYUP" and r < dryup_cutoff:
            direction = SHORT if bar_dir == LONG else LONG
            events.append(SignalEvent(family, day.date, i, direction, _meta(ratio=r)))
    return events


@dataclass(frozen=True)
class VvgBoundaries:
    """Upper-tercile boundaries of the three VVG day metrics."""

    abs_first30: float
    abs_gap: float
    vol_deviation: float


def vvg_metrics(days: Sequence[TradingDay],
                prims: Sequence[DayPrimitives],
                baseline_days: int = 20) -> np.ndarray:
    """Per-day (|first30 return|, |gap|, first-bar volume deviation); NaN where undefined."""
    n = len(days)
    out = np.full((n, 3), np.nan)
    vols = np.array([float(p.first_bar_volume) for p in prims])
    for i in range(n):
        out[i, 0] = abs(prims[i].first30_return)
        if prims[i].overnight_gap is not None:
            out[i, 1] = abs(prims[i].overnight_gap)
        if i >= baseline_days:
            baseline = vols[i - baseline_days:i].mean()
            out[i, 2] = abs(vols[i] - baseline)
    return out


def vvg_boundaries(metrics: np.ndarray) -> VvgBoundaries:
    """Tercile boundaries from a training metric matrix."""
    cuts = []
    for j in range(3):
        col = metrics[:, j]
        col = col[np.isfinite(col)]
        cuts.append(float(np.quantile(col, 2.0 / 3.0)) if len(col) else float("inf"))
    return VvgBoundaries(*cuts)


def vvg_classify(metrics: np.ndarray, boundaries: VvgBoundaries) -> np.ndarray:
    """Day flags: all three metrics strictly above their tercile boundary."""
    b = np.array([boundaries.abs_first30, boundaries.abs_gap, boundaries.vol_deviation])
    with np.errstate(invalid="ignore"):
        ok = metrics > b
    return np.all(ok & np.isfinite(metrics), axis=1)


def vvg_strategy_signals(day: TradingDay, flagged: bool, mode: str,
                         prims: DayPrimitives,
                         entry_bars: Sequence[int] = (6,)) -> list[SignalEvent]:
    """Directional strategies on VVG classifier-positive days."""
    if mode not in ("REVERSAL", "CONTINUATION", "CLOSE_FADE"):
        raise SignalError(f"unknown VVG mode {mode!r}")
    if not flagged:
        return []
    bars = day.bars
    last = _last_entryable(day)
    family = "VVG_CONTINUATION" if mode == "CONTINUATION" else "VVG_REVERSAL"

    if mode == "CLOSE_FADE":
        idx = _entry_time_bar(day, time(15, 30)) if day.session.name == "RTH" else None
        if idx is None or idx > last:
            return []
        move = bars[idx].close - bars[0].open
        if move == 0:
            return []
        direction = SHORT if move > 0 else LONG
        return [SignalEvent("VVG_REVERSAL", day.date, idx, direction,
                            _meta(day_move=move, close_fade=1))]

    f30 = prims.first30_return
    if f30 == 0:
        return []
    base_dir = LONG if f30 > 0 else SHORT
    if mode == "REVERSAL":
        base_dir = SHORT if base_dir == LONG else LONG
    events = []
    for idx in entry_bars:
        if 6 <= idx <= last:
            events.append(SignalEvent(family, day.date, idx, base_dir,
                                      _meta(first30=f30)))
    return events


def event_drift_signals(day: TradingDay, events: Sequence[EconEvent],
                        start_bar_offset: int = 6, horizon: int = 6) -> list[SignalEvent]:
    """Post-release drift measured only from bar +offset, never the spike bars.

    The offset floor of 6 guards against contaminating the measurement
    with the release spike itself (bars 1-5).
    """
    if start_bar_offset < 6:
        raise SignalError("start_bar_offset must be >= 6 (release spike contamination)")
    bars = day.bars
    sess = day.session
    last = _last_entryable(day)
    out = []
    for ev in events:
        if sess.session_date(ev.ts) != day.date or not sess.contains(ev.ts.time()):
            continue
        r = sess.bar_index(ev.ts)
        if r + 5 >= len(bars):
            continue
        move = bars[r + 5].close - bars[r].close
        if move == 0:
            continue
        sig = r + start_bar_offset
        if sig > last:
            continue
        direction = LONG if move > 0 else SHORT
        out.append(SignalEvent("EVENT_DRIFT", day.date, sig, direction,
                               _meta(release_bar=r, spike_move=move, horizon=horizon)))
    return out


def ou_reversion_signals(day: TradingDay, fit: OuFit, threshold: float,
                         rearm_level: float = 0.5) -> list[SignalEvent]:
    """OU z-score threshold entries with a re-arm band against stacking."""
    if fit.half_life is None:
        return []
    closes = [b.close for b in day.bars]
    z = ou_zscore(closes, fit)
    events = []
    armed = True
    for i in range(min(len(closes), _last_entryable(day) + 1)):
        if not armed and abs(z[i]) < rearm_level:
            armed = True
        if armed and z[i] <= -threshold:
            events.append(SignalEvent("OU_REVERSION", day.date, i, LONG,
                                      _meta(z=z[i], threshold=threshold)))
            armed = False
        elif armed and z[i] >= threshold:
            events.append(SignalEvent("OU_REVERSION", day.date, i, SHORT,
                                      _meta(z=z[i], threshold=threshold)))
            armed = False
    return events


def confluence_rth_signals(day: TradingDay, labels: Sequence[int],
                           trans_prob: Sequence[float], vol_z: Sequence[float],
                           atr: Sequence[float], atr_baseline: float,
                           trans_threshold: float = 0.15,
                           vz_threshold: float = 0.5,
                           pullback_points: float = 25.0,
                           exit_horizon: int = 13) -> list[SignalEvent]:
    """Regime-1 bars with elevated transition-to-2 probability and volume z.

    All three conditions are strict inequalities. Meta carries the
    ATR-scaled pullback limit level and the bar-13 exit horizon.
    """
    bars = day.bars
    n = len(bars)
    if not (len(labels) == len(trans_prob) == len(vol_z) == len(atr) == n):
        raise SignalError("aligned per-bar series required")
    events = []
    for i in range(min(n, _last_entryable(day) + 1)):
        tp, vz = trans_prob[i], vol_z[i]
        if labels[i] != 1 or not np.isfinite(tp) or not np.isfinite(vz):
            continue
        if tp > trans_threshold and vz > vz_threshold:
            scale = atr[i] / atr_baseline if np.isfinite(atr[i]) and atr_baseline > 0 else 1.0
            level = bars[i].close - pullback_points * scale
            events.append(SignalEvent("CONFLUENCE_RTH", day.date, i, LONG,
                                      _meta(limit_level=level, exit_horizon=exit_horizon,
                                            trans_prob=tp, vol_z=vz)))
    return events


def london_b_signals(day: TradingDay, labels: Sequence[int],
                     exit_bars: int = 4) -> list[SignalEvent]:
    """Clean Regime 0 -> Regime 2 transition with no Regime 1 contamination.

    Exit is ``exit_bars`` 15-minute bars later or session end (08:30 ET),
    whichever comes first; the execution layer clips at session end.
    """
    n = len(day.bars)
    if len(labels) != n:
        raise SignalError("labels must align with bars")
    events = []
    for t in range(1, min(n, _last_entryable(day) + 1)):
        if labels[t] != 2 or labels[t - 1] != 0:
            continue
        prior_two = labels[max(0, t - 2):t]
        if 1 in prior_two:
            continue
        events.append(SignalEvent("LONDON_B", day.date, t, LONG,
                                  _meta(horizon=exit_bars)))
    return events
