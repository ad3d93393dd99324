"""Band-limited motion artifacts and additive mixing with clean BCG."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, InvalidBandError, TraceParseError
from .signal_core import ACCEL, GYRO, ImuSeries, read_trace_csv

MOTION_TAGS = ("speak", "saccade", "type", "nod", "shake", "walk", "custom")
STRONG_MOTIONS = ("nod", "shake", "walk")
# tag -> (band_hz, default intensity ratio vs clean BCG RMS)
MOTION_DEFAULTS = {
    "speak": ((0.1, 2.0), 1.0),
    "saccade": ((0.1, 1.5), 0.5),
    "type": ((0.2, 2.0), 0.7),
    "nod": ((0.3, 6.0), 30.0),
    "shake": ((0.3, 8.0), 50.0),
    "walk": ((0.3, 10.0), 40.0),
}
PERIODIC_POWER_FRACTION = 0.7
GAIT_RANGE_HZ = (0.5, 2.5)


@dataclass(frozen=True)
class MotionKind:
    tag: str
    band_hz: tuple
    intensity_ratio: float

    def __post_init__(self):
        if self.tag not in MOTION_TAGS:
            raise InvalidBandError(f"unknown motion tag {self.tag!r}")
        lo, hi = self.band_hz
        if not (0.0 < lo < hi <= 12.5):
            raise InvalidBandError(f"band {self.band_hz} must satisfy 0 < lo < hi <= 12.5 Hz")
        if not self.intensity_ratio > 0:
            raise InvalidBandError("intensity_ratio must be positive")
        if self.tag in STRONG_MOTIONS and self.intensity_ratio < 10:
            raise InvalidBandError(f"{self.tag} motions must be at least 10x the BCG RMS")

    @classmethod
    def default(cls, tag: str, intensity_ratio: float | None = None) -> "MotionKind":
        band, ratio = MOTION_DEFAULTS[tag]
        return cls(tag, band, ratio if intensity_ratio is None else intensity_ratio)


@dataclass(frozen=True)
class MixedTrace:
    observed: ImuSeries
    clean: ImuSeries
    motion: ImuSeries


def group_rms(values: np.ndarray) -> tuple[float, float]:
    v = np.asarray(values)
    return float(np.sqrt(np.mean(v[:, ACCEL] ** 2))), float(np.sqrt(np.mean(v[:, GYRO] ** 2)))


@functools.lru_cache(maxsize=1)
def default_reference_rms() -> tuple[float, float]:
    """Accel/gyro RMS of the default synthetic subject, noise excluded."""
    from .bcg_synth import SubjectProfile, synth_subject

    _, truth = synth_subject(0, 60.0, SubjectProfile())
    return group_rms(truth.clean_series.values)


def _band_noise(rng, n, rate_hz, band):
    spec = np.fft.rfft(rng.standard_normal((n, 6)), axis=0)
    f = np.fft.rfftfreq(n, 1.0 / rate_hz)
    spec[(f < band[0]) | (f > band[1])] = 0.0
    return np.fft.irfft(spec, n, axis=0)


def _periodic(rng, n, rate_hz, band):
    duration = n / rate_hz
    lo = max(GAIT_RANGE_HZ[0], band[0])
    hi = min(GAIT_RANGE_HZ[1], band[1])
    f0 = rng.uniform(lo, hi)
    # snap to an FFT bin so the tone does not leak out of band
    k0 = int(np.clip(round(f0 * duration), np.ceil(lo * duration), np.floor(hi * duration)))
    f0 = max(k0, 1) / duration
    t = np.arange(n) / rate_hz
    out = np.zeros((n, 6))
    for h, amp in ((1, 1.0), (2, 0.5), (3, 0.25)):
        if band[0] <= h * f0 <= band[1]:
            phase = rng.uniform(0, 2 * np.pi, 6)
            out += amp * np.sin(2 * np.pi * h * f0 * t[:, None] + phase[None, :])
    return out


def synth_motion(kind: MotionKind, duration_s: float, seed: int, reference_rms=None,
                 rate_hz: float = 25.0) -> ImuSeries:
    """Filtered-noise motion (plus a gait-like periodic part for nod/shake/walk).

    Accel and gyro groups are scaled separately so each group's RMS equals
    ``intensity_ratio`` times the matching entry of ``reference_rms``.
    """
    if duration_s < 1.0:
        raise ValueError("duration_s must be at least 1 s")
    lo, hi = kind.band_hz
    if hi > rate_hz / 2:
        raise InvalidBandError(f"band {kind.band_hz} exceeds Nyquist at {rate_hz} Hz")
    n = int(round(duration_s * rate_hz))
    df = rate_hz / n
    if np.floor(hi / df) < np.ceil(lo / df):
        raise InvalidBandError(f"band {kind.band_hz} contains no frequency bin for {duration_s} s")
    rng = np.random.default_rng(seed)
    noise = _band_noise(rng, n, rate_hz, kind.band_hz)
    noise /= np.sqrt(np.mean(noise ** 2, axis=0, keepdims=True)) + 1e-300
    if kind.tag in STRONG_MOTIONS and hi >= GAIT_RANGE_HZ[0] and lo <= GAIT_RANGE_HZ[1]:
        per = _periodic(rng, n, rate_hz, kind.band_hz)
        per /= np.sqrt(np.mean(per ** 2, axis=0, keepdims=True)) + 1e-300
        motion = (np.sqrt(PERIODIC_POWER_FRACTION) * per
                  + np.sqrt(1 - PERIODIC_POWER_FRACTION) * noise)
    else:
        motion = noise
    # axes couple to head motion unequally
    motion = motion * rng.uniform(0.2, 1.0, 6)[None, :]
    ref = default_reference_rms() if reference_rms is None else tuple(reference_rms)
    for group, r in zip((ACCEL, GYRO), ref):
        cur = np.sqrt(np.mean(motion[:, group] ** 2))
        motion[:, group] *= kind.intensity_ratio * r / cur
    return ImuSeries.from_array(motion, rate_hz)


def mix(clean: ImuSeries, motion: ImuSeries) -> MixedTrace:
    if len(clean) != len(motion) or clean.nominal_rate_hz != motion.nominal_rate_hz \
            or clean.n_channels != motion.n_channels:
        raise AlignmentError(
            f"cannot mix {len(clean)} slots @ {clean.nominal_rate_hz} Hz with "
            f"{len(motion)} slots @ {motion.nominal_rate_hz} Hz")
    if not (clean.is_complete and motion.is_complete):
        raise AlignmentError("mix requires gap-free series")
    observed = ImuSeries.from_array(clean.values + motion.values, clean.nominal_rate_hz, clean.start_ms)
    return MixedTrace(observed, clean, motion)


def ingest_external_motion(path, rate_hz: float | None = None) -> ImuSeries:
    """Load an externally simulated motion trace; it must be gap-free."""
    series = read_trace_csv(path, nominal_rate_hz=rate_hz)
    if not series.is_complete:
        first_gap = int(np.flatnonzero(~series.mask)[0])
        # data row after the gap, counting the header as row 1
        row = int(np.sum(series.mask[:first_gap])) + 2
        raise TraceParseError(f"gap before slot {first_gap}; motion traces must be gap-free", row=row)
    return series
