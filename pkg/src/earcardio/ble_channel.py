"""Lossy one-sample-per-packet BLE stream and receiver-side gap recovery."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import CorruptTraceError, MustBeCleanError
from .signal_core import ImuSeries, round_half_up

TAU = 0.24
NOMINAL_INTERVAL_MS = 40


def fail_safe(loss_rate: float, tau: float = TAU) -> bool:
    """Strictly above tau: a window at exactly tau is still processed."""
    return loss_rate > tau


@dataclass(frozen=True)
class BurstModel:
    """Gilbert-Elliott bad state that drops every packet while it lasts."""

    enter_p: float
    len_mean: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.enter_p <= 1.0:
            raise ValueError("burst enter probability must be in [0, 1]")
        if self.len_mean < 1.0:
            raise ValueError("burst_len_mean must be >= 1")

    @property
    def exit_p(self) -> float:
        return 1.0 / self.len_mean

    @property
    def stationary_bad(self) -> float:
        return self.enter_p / (self.enter_p + self.exit_p) if self.enter_p > 0 else 0.0


@dataclass(frozen=True)
class LossScenario:
    tag: str
    iid_loss_p: float
    burst: BurstModel | None = None

    def __post_init__(self):
        if not 0.0 <= self.iid_loss_p <= 1.0:
            raise ValueError("iid_loss_p must be in [0, 1]")

    @property
    def expected_loss(self) -> float:
        bad = self.burst.stationary_bad if self.burst else 0.0
        return 1.0 - (1.0 - self.iid_loss_p) * (1.0 - bad)


# Calibration knobs: totals roughly music 5 %, anc 12 %, trans 15 %, near 2 %, far 36 %.
SCENARIOS = {
    "music": LossScenario("music", 0.05),
    "anc": LossScenario("anc", 0.08, BurstModel(0.015, 3.0)),
    "trans": LossScenario("trans", 0.10, BurstModel(0.02, 3.0)),
    "near_5m": LossScenario("near_5m", 0.02),
    "far_15m_wall": LossScenario("far_15m_wall", 0.32, BurstModel(0.02, 3.0)),
    "lossless": LossScenario("custom", 0.0),
}


def scenario_from_dict(d) -> LossScenario:
    if isinstance(d, str):
        try:
            return SCENARIOS[d]
        except KeyError:
            raise ValueError(f"unknown scenario {d!r}") from None
    burst = d.get("burst")
    return LossScenario(d.get("tag", "custom"), float(d["iid_loss_p"]),
                        BurstModel(**burst) if burst else None)


@dataclass(frozen=True)
class PacketTrace:
    """Received packets. ``session_*`` bound the stream when the receiver knows them."""

    timestamps: np.ndarray
    samples: np.ndarray
    nominal_interval_ms: int = NOMINAL_INTERVAL_MS
    session_start_ms: int | None = None
    session_end_ms: int | None = None
    drop_record: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2:
            samples = samples.reshape(len(ts), -1)
        if samples.shape[0] != len(ts):
            raise CorruptTraceError("one sample row per timestamp required")
        if np.any(np.diff(ts) <= 0):
            raise CorruptTraceError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.timestamps)

    @property
    def packets(self) -> list:
        return [(int(t), s.copy()) for t, s in zip(self.timestamps, self.samples)]


@dataclass(frozen=True)
class LossReport:
    loss_rate: float
    gap_histogram: dict
    fail_safe_triggered: bool
    n_expected: int
    n_received: int

    @classmethod
    def from_mask(cls, mask, gap_histogram=None, tau: float = TAU) -> "LossReport":
        mask = np.asarray(mask, dtype=bool)
        n = mask.size
        received = int(mask.sum())
        loss = (n - received) / n if n else 1.0
        if gap_histogram is None:
            gap_histogram = dict(sorted(Counter(np.diff(np.flatnonzero(mask)).tolist()).items()))
        return cls(loss, gap_histogram, fail_safe(loss, tau), n, received)

    def to_dict(self) -> dict:
        return {"loss_rate": self.loss_rate, "fail_safe_triggered": self.fail_safe_triggered,
                "n_expected": self.n_expected, "n_received": self.n_received,
                "gap_histogram": {str(k): v for k, v in self.gap_histogram.items()}}


def simulate_drops(n: int, scenario: LossScenario, rng: np.random.Generator) -> np.ndarray:
    """Boolean drop record: iid losses OR'd with Gilbert-Elliott bursts."""
    drops = rng.random(n) < scenario.iid_loss_p
    if scenario.burst is not None and scenario.burst.enter_p > 0:
        u = rng.random(n)
        bad = np.zeros(n, dtype=bool)
        state = False
        enter, leave = scenario.burst.enter_p, scenario.burst.exit_p
        for i in range(n):
            state = (u[i] >= leave) if state else (u[i] < enter)
            bad[i] = state
        drops |= bad
    return drops


def transmit(series: ImuSeries, scenario: LossScenario, seed: int) -> PacketTrace:
    if not series.is_complete:
        raise MustBeCleanError("transmit expects a gap-free series")
    interval = 1000.0 / series.nominal_rate_hz
    if interval != int(interval):
        raise ValueError(f"{series.nominal_rate_hz} Hz does not give an integer-ms packet interval")
    rng = np.random.default_rng(seed)
    drops = simulate_drops(len(series), scenario, rng)
    times = series.times_ms()
    keep = ~drops
    drops.setflags(write=False)
    return PacketTrace(times[keep], series.values[keep], int(interval),
                       session_start_ms=int(times[0]) if len(times) else None,
                       session_end_ms=int(times[-1]) if len(times) else None,
                       drop_record=drops)


def extract_missing_pattern(trace: PacketTrace, tau: float = TAU) -> tuple[ImuSeries, LossReport]:
    """Rebuild the slot grid from timestamps and summarise the losses."""
    interval = trace.nominal_interval_ms
    ts = trace.timestamps
    start = trace.session_start_ms if trace.session_start_ms is not None else (int(ts[0]) if len(ts) else None)
    end = trace.session_end_ms if trace.session_end_ms is not None else (int(ts[-1]) if len(ts) else None)
    if start is None or end is None:
        raise CorruptTraceError("empty trace without session bounds")
    offsets = ts - start
    bad = np.flatnonzero(offsets % interval != 0)
    if bad.size:
        raise CorruptTraceError(
            f"timestamp {int(ts[bad[0]])} is not a multiple of {interval} ms from {start}")
    if (end - start) % interval:
        raise CorruptTraceError("session end is off the slot grid")
    if len(ts) and (ts[0] < start or ts[-1] > end):
        raise CorruptTraceError("packets outside the session bounds")
    n = (end - start) // interval + 1
    idx = offsets // interval
    values = np.zeros((n, trace.samples.shape[1] if trace.samples.ndim == 2 else 6))
    mask = np.zeros(n, dtype=bool)
    values[idx] = trace.samples
    mask[idx] = True
    hist = dict(sorted(Counter((np.diff(ts) // interval).tolist()).items()))
    series = ImuSeries(values, mask, 1000.0 / interval, start)
    return series, LossReport.from_mask(mask, hist, tau)


@dataclass(frozen=True)
class ReplayWindow:
    index: int
    start_slot: int
    series: ImuSeries
    report: LossReport

    @property
    def discard(self) -> bool:
        return self.report.fail_safe_triggered


def window_starts(n_slots: int, rate_hz: float, window_s: float, hop_s: float) -> list[int]:
    total_s = n_slots / rate_hz
    if total_s + 1e-9 < window_s:
        return []
    count = int(math.floor((total_s - window_s) / hop_s + 1e-9)) + 1
    return [round_half_up(k * hop_s * rate_hz) for k in range(count)]


def replay_windows(trace: PacketTrace, window_s: float = 5.0, hop_s: float = 2.5,
                   tau: float = TAU) -> Iterator[ReplayWindow]:
    """Sliding windows with per-window loss reports; lazily evaluated."""
    if window_s < 1.0 or hop_s <= 0 or hop_s > window_s:
        raise ValueError("need window_s >= 1 and 0 < hop_s <= window_s")
    series, _ = extract_missing_pattern(trace, tau)
    rate = series.nominal_rate_hz
    length = round_half_up(window_s * rate)
    for k, s in enumerate(window_starts(len(series), rate, window_s, hop_s)):
        w = series.window(s, length)
        yield ReplayWindow(k, s, w, LossReport.from_mask(w.mask, tau=tau))
