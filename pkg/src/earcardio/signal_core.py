"""Uniformly slotted IMU series, gap filling, resampling and beat picking.

Every stage of the pipeline passes :class:`ImuSeries` around. Missing samples
are represented by an explicit boolean mask rather than NaN so the mask can be
handed to the neural models as its own channel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal

from .errors import MustInterpolateFirstError, TraceParseError, UninterpolatableSeriesError

CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")
CSV_HEADER = ("t_ms",) + CHANNELS
ACCEL = slice(0, 3)
GYRO = slice(3, 6)

# sanity bounds for parsed traces: +-16 g and +-2000 dps full scale
MAX_ACCEL = 16 * 9.80665
MAX_GYRO = 2000.0

RESAMPLE_HALF_TAPS = 16
REFRACTORY_MS = 300.0


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def slot_time_ms(start_ms: int, i: int, rate_hz: float) -> int:
    return start_ms + round_half_up(i * 1000.0 / rate_hz)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ImuSample:
    t_ms: int
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]

    def __post_init__(self):
        if self.t_ms < 0:
            raise ValueError("t_ms must be non-negative")
        if not np.all(np.isfinite(self.accel + self.gyro)):
            raise ValueError("IMU sample contains non-finite values")

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.accel + self.gyro, dtype=float)


@dataclass(frozen=True)
class MissingMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool).copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return len(self.bits)

    @property
    def loss_rate(self) -> float:
        if len(self.bits) == 0:
            return 1.0
        return 1.0 - float(np.mean(self.bits))


@dataclass(frozen=True)
class ImuSeries:
    """Uniform slot grid of multi-channel samples with a presence mask.

    ``values`` has shape (n_slots, n_channels). Rows of absent slots are kept
    at zero and carry no information; ``mask`` is the source of truth.
    """

    values: np.ndarray
    mask: np.ndarray
    nominal_rate_hz: float = 25.0
    start_ms: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2 or mask.shape != (values.shape[0],):
            raise ValueError(f"mask shape {mask.shape} does not match values {values.shape}")
        if self.nominal_rate_hz <= 0:
            raise ValueError("nominal_rate_hz must be positive")
        values = np.where(mask[:, None], values, 0.0)
        if not np.all(np.isfinite(values)):
            raise ValueError("present slots must be finite")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "start_ms", int(self.start_ms))

    @classmethod
    def from_array(cls, values, rate_hz: float = 25.0, start_ms: int = 0) -> "ImuSeries":
        values = np.asarray(values, dtype=float)
        return cls(values, np.ones(values.shape[0], dtype=bool), rate_hz, start_ms)

    @classmethod
    def from_slots(cls, slots, rate_hz: float = 25.0, start_ms: int = 0, n_channels: int = 6):
        mask = np.array([s is not None for s in slots], dtype=bool)
        values = np.zeros((len(slots), n_channels))
        for i, s in enumerate(slots):
            if s is not None:
                values[i] = s
        return cls(values, mask, rate_hz, start_ms)

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def slots(self) -> list:
        return [row.copy() if m else None for row, m in zip(self.values, self.mask)]

    @property
    def missing_mask(self) -> MissingMask:
        return MissingMask(self.mask)

    @property
    def loss_rate(self) -> float:
        return self.missing_mask.loss_rate

    @property
    def is_complete(self) -> bool:
        return bool(self.mask.all())

    @property
    def duration_s(self) -> float:
        return len(self) / self.nominal_rate_hz

    def times_ms(self) -> np.ndarray:
        return np.array([slot_time_ms(self.start_ms, i, self.nominal_rate_hz) for i in range(len(self))],
                        dtype=np.int64)

    def slot_of(self, t_ms: int) -> int:
        return round_half_up((t_ms - self.start_ms) * self.nominal_rate_hz / 1000.0)

    def window(self, start: int, length: int) -> "ImuSeries":
        """Slots [start, start+length); slots beyond the end are reported missing."""
        stop = start + length
        vals = np.zeros((length, self.n_channels))
        mask = np.zeros(length, dtype=bool)
        lo, hi = max(start, 0), min(stop, len(self))
        if hi > lo:
            vals[lo - start:hi - start] = self.values[lo:hi]
            mask[lo - start:hi - start] = self.mask[lo:hi]
        return ImuSeries(vals, mask, self.nominal_rate_hz,
                         slot_time_ms(self.start_ms, start, self.nominal_rate_hz))

    def with_values(self, values) -> "ImuSeries":
        return ImuSeries(values, self.mask, self.nominal_rate_hz, self.start_ms)

    def __add__(self, other: "ImuSeries") -> "ImuSeries":
        return ImuSeries(self.values + other.values, self.mask & other.mask,
                         self.nominal_rate_hz, self.start_ms)

    def __eq__(self, other):
        if not isinstance(other, ImuSeries):
            return NotImplemented
        return (self.nominal_rate_hz == other.nominal_rate_hz and self.start_ms == other.start_ms
                and np.array_equal(self.mask, other.mask) and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class BeatSegmentation:
    peak_indices: np.ndarray
    rate_hz: float
    window_pre_ms: float = 300.0
    window_post_ms: float = 500.0

    def __post_init__(self):
        idx = np.asarray(self.peak_indices, dtype=np.int64).copy()
        idx.setflags(write=False)
        object.__setattr__(self, "peak_indices", idx)

    def __len__(self):
        return len(self.peak_indices)

    @property
    def peak_times_ms(self) -> np.ndarray:
        return self.peak_indices * 1000.0 / self.rate_hz

    @property
    def ibi_ms(self) -> np.ndarray:
        return np.diff(self.peak_times_ms)


def linear_interpolate(series: ImuSeries) -> ImuSeries:
    """Fill missing slots per channel from the nearest present neighbours.

    Leading and trailing gaps hold the nearest present value.
    """
    present = np.flatnonzero(series.mask)
    if present.size < 2:
        raise UninterpolatableSeriesError(
            f"need at least 2 present slots to interpolate, got {present.size}")
    if present.size == len(series):
        return series
    missing = np.flatnonzero(~series.mask)
    values = np.array(series.values)
    for c in range(series.n_channels):
        values[missing, c] = np.interp(missing, present, series.values[present, c])
    return ImuSeries(values, np.ones(len(series), dtype=bool), series.nominal_rate_hz, series.start_ms)


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


def resample_array(x: np.ndarray, rate_in: float, rate_out: float,
                   half_taps: int = RESAMPLE_HALF_TAPS) -> np.ndarray:
    """Hann-windowed sinc interpolation along axis 0.

    Weights are renormalised per output sample, so constants pass through
    exactly. Boundaries use mirror extension.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n = x.shape[0]
    m = round_half_up(n / rate_in * rate_out)
    cutoff = min(1.0, rate_out / rate_in)
    half_width = half_taps / cutoff
    u = np.arange(m) * (rate_in / rate_out)
    base = np.floor(u).astype(np.int64)
    offsets = np.arange(-int(np.ceil(half_width)) + 1, int(np.ceil(half_width)) + 1)
    taps = base[:, None] + offsets[None, :]
    d = u[:, None] - taps
    w = cutoff * np.sinc(cutoff * d) * 0.5 * (1.0 + np.cos(np.pi * np.clip(d / half_width, -1, 1)))
    w[np.abs(d) >= half_width] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    out = np.einsum("mk,mkc->mc", w, x[_reflect(taps, n)])
    return out[:, 0] if squeeze else out


def resample(series: ImuSeries, target_rate_hz: float) -> ImuSeries:
    if not series.is_complete:
        raise MustInterpolateFirstError("resample requires a gap-free series; interpolate first")
    out = resample_array(series.values, series.nominal_rate_hz, target_rate_hz)
    return ImuSeries.from_array(out, target_rate_hz, series.start_ms)


def bandpass(x: np.ndarray, rate_hz: float, low_hz: float = 1.0, high_hz: float = 10.0,
             order: int = 2) -> np.ndarray:
    """Zero-phase Butterworth bandpass along axis 0."""
    high_hz = min(high_hz, 0.45 * rate_hz)
    sos = signal.butter(order, [low_hz, high_hz], btype="band", fs=rate_hz, output="sos")
    return signal.sosfiltfilt(sos, x, axis=0)


def beat_envelope(x: np.ndarray, rate_hz: float) -> np.ndarray:
    return np.abs(bandpass(np.asarray(x, dtype=float), rate_hz))


def segment_beats(x, rate_hz: float, min_bpm: float = 40.0, max_bpm: float = 200.0) -> BeatSegmentation:
    """Pick one anchor per beat from the 1-10 Hz envelope.

    Candidates are local envelope maxima above half the rolling 3 s 90th
    percentile; peaks closer than the refractory period 60000/max_bpm ms are
    resolved in favour of the taller one.
    """
    x = np.asarray(x, dtype=float).ravel()
    refractory_ms = 60000.0 / max_bpm
    distance = max(1, int(math.ceil(refractory_ms * rate_hz / 1000.0 - 1e-9)))
    empty = BeatSegmentation(np.empty(0, dtype=np.int64), rate_hz)
    if x.size < 16 or not np.any(x):
        return empty
    env = beat_envelope(x - x.mean(), rate_hz)
    if env.max() <= 0:
        return empty
    size = max(3, int(round(3.0 * rate_hz)))
    thr = 0.5 * ndimage.percentile_filter(env, 90, size=size, mode="nearest")
    peaks, _ = signal.find_peaks(env, height=thr, distance=distance)
    if peaks.size >= 2:
        med = float(np.median(np.diff(peaks))) * 1000.0 / rate_hz
        pre, post = 0.4 * med, 0.6 * med
    else:
        pre, post = 0.4 * refractory_ms, 0.6 * 60000.0 / min_bpm
    return BeatSegmentation(peaks, rate_hz, pre, post)


def refine_peaks(x: np.ndarray, peaks, radius: int) -> np.ndarray:
    """Move each peak to the largest |x| within +-radius samples."""
    x = np.asarray(x, dtype=float)
    out = []
    for p in np.asarray(peaks, dtype=np.int64):
        lo, hi = max(0, p - radius), min(x.size, p + radius + 1)
        out.append(lo + int(np.argmax(np.abs(x[lo:hi]))))
    return np.unique(np.asarray(out, dtype=np.int64))


def dominant_period_s(x: np.ndarray, rate_hz: float, lo_s: float = 0.3, hi_s: float = 1.5) -> float | None:
    """Beat period from the envelope autocorrelation; prefers the fundamental over its double."""
    env = beat_envelope(np.asarray(x, dtype=float), rate_hz)
    env = env - env.mean()
    denom = float(np.dot(env, env))
    lo, hi = int(lo_s * rate_hz), min(int(hi_s * rate_hz), env.size // 2)
    if denom <= 0 or hi <= lo:
        return None
    lags = np.arange(lo, hi + 1)
    ac = np.array([np.dot(env[:-k], env[k:]) / denom for k in lags])
    best = int(np.argmax(ac))
    half = int(np.argmin(np.abs(lags - lags[best] / 2)))
    if abs(lags[half] - lags[best] / 2) <= 1 and ac[half] >= 0.8 * ac[best]:
        best = half
    return float(lags[best]) / rate_hz


def detect_beats(x, rate_hz: float) -> np.ndarray:
    """Beat peak indices from a single-channel waveform.

    The refractory distance adapts to 60 % of the dominant period so that
    secondary complexes within a beat are not counted as beats.
    """
    period = dominant_period_s(x, rate_hz)
    max_bpm = 200.0 if period is None else min(200.0, 60.0 / (0.6 * period))
    seg = segment_beats(x, rate_hz, max_bpm=max_bpm)
    peaks = refine_peaks(x, seg.peak_indices, max(1, int(round(0.06 * rate_hz))))
    return peaks


# --- CSV interchange -----------------------------------------------------

def write_trace_csv(series: ImuSeries, path) -> None:
    """One row per present slot; gaps are absent rows."""
    times = series.times_ms()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t, row, m in zip(times, series.values, series.mask):
            if m:
                w.writerow([int(t)] + [repr(float(v)) for v in row])


def _parse_rows(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceParseError("empty file", row=1) from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise TraceParseError(f"expected header {','.join(CSV_HEADER)}", row=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise TraceParseError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", row=lineno)
            try:
                t = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise TraceParseError(f"malformed field ({exc})", row=lineno) from None
            if t < 0:
                raise TraceParseError("negative timestamp", row=lineno)
            if not all(math.isfinite(v) for v in vals):
                raise TraceParseError("non-finite value", row=lineno)
            if any(abs(v) > MAX_ACCEL for v in vals[:3]) or any(abs(v) > MAX_GYRO for v in vals[3:]):
                raise TraceParseError("value outside sensor full-scale range", row=lineno)
            if rows and t <= rows[-1][1]:
                raise TraceParseError(f"timestamp {t} not after previous {rows[-1][1]}", row=lineno)
            rows.append((lineno, t, vals))
    return rows


def read_trace_csv(path, nominal_rate_hz: float | None = None, start_ms: int | None = None,
                   n_slots: int | None = None) -> ImuSeries:
    """Parse a received-trace CSV onto a slot grid.

    The rate is inferred from the smallest timestamp step when not given.
    Absent timestamps become missing slots.
    """
    rows = _parse_rows(path)
    if not rows:
        raise TraceParseError("trace has no samples")
    times = np.array([r[1] for r in rows])
    if nominal_rate_hz is None:
        if len(times) < 2:
            raise TraceParseError("cannot infer rate from a single sample")
        nominal_rate_hz = 1000.0 / float(np.min(np.diff(times)))
    if start_ms is None:
        start_ms = int(times[0])
    idx = []
    for lineno, t, _ in rows:
        i = round_half_up((t - start_ms) * nominal_rate_hz / 1000.0)
        if i < 0 or slot_time_ms(start_ms, i, nominal_rate_hz) != t:
            raise TraceParseError(f"timestamp {t} is off the {nominal_rate_hz:g} Hz slot grid", row=lineno)
        idx.append(i)
    n = idx[-1] + 1 if n_slots is None else n_slots
    values = np.zeros((n, 6))
    mask = np.zeros(n, dtype=bool)
    for i, (_, _, vals) in zip(idx, rows):
        if i < n:
            values[i] = vals
            mask[i] = True
    return ImuSeries(values, mask, nominal_rate_hz, start_ms)


def write_scg_csv(samples, rate_hz: float, path, start_ms: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t_ms", "scg"))
        for i, v in enumerate(np.asarray(samples, dtype=float)):
            w.writerow([slot_time_ms(start_ms, i, rate_hz), repr(float(v))])


def read_scg_csv(path) -> tuple[np.ndarray, np.ndarray]:
    t, v = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                t.append(int(row[0]))
                v.append(float(row[1]))
    return np.array(t, dtype=np.int64), np.array(v)
