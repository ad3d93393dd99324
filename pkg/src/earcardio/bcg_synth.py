"""Parametric in-ear BCG generator with paired SCG ground truth.

The per-beat force comes from the aortic pressure-gradient model

    F(t) = S_d (P1(t) - P2(t)) - S_a (P0(t) - P1(t))

with raised-cosine pressure waves. Each beat superimposes shifted, signed
copies of F at the H/I/J/K/L offsets of a :class:`BeatTemplate`; the scalar
source is projected onto the six IMU axes by a unit mixing vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ProfileValidationError
from .signal_core import ACCEL, GYRO, ImuSeries, resample_array

REFERENCE_RATE_HZ = 100.0
OBSERVATION_RATE_HZ = 25.0
MIN_IBI_MS = 60000.0 / 220.0
MAX_IBI_MS = 60000.0 / 30.0

DEFAULT_ACCEL_PEAK = 0.005  # m/s^2
DEFAULT_GYRO_PEAK = 0.03  # dps
# Per-channel white noise, calibrated so the strongest accel/gyro channel sits
# near 38 dB / 19 dB peak SNR (see empirical_peak_snr_db).
DEFAULT_ACCEL_NOISE = 1.6e-5
DEFAULT_GYRO_NOISE = 9e-4


@dataclass(frozen=True)
class PressureWave:
    """Raised-cosine pressure pulse; timing in fractions of the beat period."""

    amplitude_mmhg: float
    onset_frac: float
    width_frac: float

    def __call__(self, t_ms, period_ms: float):
        x = (np.asarray(t_ms, dtype=float) - self.onset_frac * period_ms) / (self.width_frac * period_ms)
        inside = (x >= 0.0) & (x <= 1.0)
        return np.where(inside, self.amplitude_mmhg * 0.5 * (1.0 - np.cos(2.0 * np.pi * x)), 0.0)


@dataclass(frozen=True)
class AortaParams:
    S_d: float = 3.0
    S_a: float = 5.0
    P0_wave: PressureWave = PressureWave(40.0, 0.0, 0.0933)
    P1_wave: PressureWave = PressureWave(40.0, 0.0292, 0.0933)
    P2_wave: PressureWave = PressureWave(40.0, 0.0583, 0.0933)

    @property
    def waves(self):
        return (self.P0_wave, self.P1_wave, self.P2_wave)


@dataclass(frozen=True)
class BeatTemplate:
    peak_times: tuple = (0.0, 60.0, 120.0, 185.0, 255.0)  # H, I, J, K, L (ms)
    peak_amps: tuple = (0.3, -0.6, 1.0, -0.7, 0.35)


def _default_mixing():
    m = np.array([0.15, 0.6, 0.45, 0.35, 0.5, 0.2])
    return tuple(m / np.linalg.norm(m))


@dataclass(frozen=True)
class SubjectProfile:
    hr_mean_bpm: float = 70.0
    hr_std_bpm: float = 2.0
    aorta: AortaParams = AortaParams()
    template: BeatTemplate = BeatTemplate()
    mixing: tuple = field(default_factory=_default_mixing)
    accel_peak_amp: float = DEFAULT_ACCEL_PEAK
    gyro_peak_amp: float = DEFAULT_GYRO_PEAK
    noise_floor: tuple = (DEFAULT_ACCEL_NOISE,) * 3 + (DEFAULT_GYRO_NOISE,) * 3

    @property
    def period_ms(self) -> float:
        return 60000.0 / self.hr_mean_bpm

    def kernel_duration_ms(self) -> float:
        period = self.period_ms
        waves = self.aorta.waves
        start = min(w.onset_frac for w in waves)
        stop = max(w.onset_frac + w.width_frac for w in waves)
        return (stop - start) * period

    def validate(self) -> "SubjectProfile":
        problems = []
        mixing = np.asarray(self.mixing, dtype=float)
        if mixing.shape != (6,) or not np.all(np.isfinite(mixing)):
            problems.append("mixing must be a finite 6-vector")
        else:
            if abs(np.linalg.norm(mixing) - 1.0) > 1e-9:
                problems.append("mixing must have unit L2 norm")
            if not np.any(mixing[ACCEL]) or not np.any(mixing[GYRO]):
                problems.append("mixing needs a nonzero accel and a nonzero gyro entry")
        if not 30.0 <= self.hr_mean_bpm <= 220.0:
            problems.append(f"hr_mean_bpm {self.hr_mean_bpm} outside [30, 220]")
        if self.hr_std_bpm < 0:
            problems.append("hr_std_bpm must be >= 0")
        if self.aorta.S_d <= 0 or self.aorta.S_a <= 0:
            problems.append("aortic cross-sections must be positive")
        for w in self.aorta.waves:
            if not (math.isfinite(w.amplitude_mmhg) and w.width_frac > 0 and w.onset_frac >= 0
                    and w.onset_frac + w.width_frac <= 1.0):
                problems.append(f"pressure wave {w} is not a single-beat template")
        times, amps = np.asarray(self.template.peak_times), np.asarray(self.template.peak_amps)
        if times.shape != (5,) or amps.shape != (5,):
            problems.append("template needs exactly five peaks (H, I, J, K, L)")
        else:
            if not np.all(np.diff(times) > 0):
                problems.append("template peaks must satisfy H < I < J < K < L")
            if np.argmax(np.abs(amps)) != 2 or np.sum(np.abs(amps) == np.abs(amps[2])) != 1:
                problems.append("J must be the unique largest-magnitude peak")
        if 1000.0 / self.kernel_duration_ms() <= 3.0:
            problems.append("peak widths imply content at or below 3 Hz")
        if self.accel_peak_amp <= 0 or self.gyro_peak_amp <= 0:
            problems.append("peak amplitudes must be positive")
        noise = np.asarray(self.noise_floor, dtype=float)
        if noise.shape != (6,) or np.any(noise < 0):
            problems.append("noise_floor must be six non-negative standard deviations")
        if problems:
            raise ProfileValidationError("; ".join(problems))
        return self


@dataclass(frozen=True)
class GroundTruth:
    beat_onsets_ms: tuple
    ibi_ms: tuple
    anchor_offset_ms: float
    clean_series: ImuSeries
    scg_ref: np.ndarray

    @property
    def anchors_ms(self) -> np.ndarray:
        """Time of the dominant (J) deflection of every beat."""
        return np.asarray(self.beat_onsets_ms, dtype=float) + self.anchor_offset_ms


def bcg_force(profile: SubjectProfile, t):
    """Aortic pressure-gradient force at time(s) ``t`` (ms) within one beat."""
    a = profile.aorta
    period = profile.period_ms
    p0, p1, p2 = (w(t, period) for w in a.waves)
    return a.S_d * (p1 - p2) - a.S_a * (p0 - p1)


def beat_waveform(profile: SubjectProfile, t) -> np.ndarray:
    """Force kernel convolved with the signed H/I/J/K/L impulse train."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for tau, amp in zip(profile.template.peak_times, profile.template.peak_amps):
        out += amp * bcg_force(profile, t - tau)
    return out


def anchor_offset_ms(profile: SubjectProfile) -> float:
    span = profile.template.peak_times[-1] + profile.period_ms
    t = np.arange(0.0, span, 0.5)
    return float(t[np.argmax(np.abs(beat_waveform(profile, t)))])


def scg_beat(t_rel_ms) -> np.ndarray:
    """AO-dominant SCG complex centred on the BCG anchor (t_rel = 0)."""
    t = np.asarray(t_rel_ms, dtype=float)

    def g(mu, sigma):
        return np.exp(-0.5 * ((t - mu) / sigma) ** 2)

    return (-0.35 * g(-35.0, 10.0) + 1.0 * g(0.0, 12.0) - 0.45 * g(35.0, 12.0)
            + 0.3 * g(300.0, 15.0) - 0.15 * g(330.0, 15.0))


def beat_schedule(rng: np.random.Generator, duration_ms: float, profile: SubjectProfile) -> np.ndarray:
    mean_ibi = 60000.0 / profile.hr_mean_bpm
    # delta method: sd(60000/HR) ~= 60000/HR^2 * sd(HR)
    sd_ibi = 60000.0 / profile.hr_mean_bpm ** 2 * profile.hr_std_bpm
    onsets = [int(rng.integers(0, int(mean_ibi)))]
    while True:
        ibi = mean_ibi + sd_ibi * rng.standard_normal() if sd_ibi > 0 else mean_ibi
        ibi = int(round(min(max(ibi, MIN_IBI_MS), MAX_IBI_MS)))
        nxt = onsets[-1] + ibi
        if nxt >= duration_ms:
            break
        onsets.append(nxt)
    return np.asarray(onsets, dtype=np.int64)


def render_source(profile: SubjectProfile, onsets_ms, n: int, rate_hz: float) -> np.ndarray:
    t = np.arange(n) * 1000.0 / rate_hz
    span = profile.template.peak_times[-1] + profile.kernel_duration_ms() + profile.period_ms
    src = np.zeros(n)
    for on in onsets_ms:
        lo = max(0, int(on * rate_hz / 1000.0))
        hi = min(n, int((on + span) * rate_hz / 1000.0) + 2)
        src[lo:hi] += beat_waveform(profile, t[lo:hi] - on)
    return src


def render_scg(anchors_ms, n: int, rate_hz: float) -> np.ndarray:
    t = np.arange(n) * 1000.0 / rate_hz
    out = np.zeros(n)
    for a in anchors_ms:
        lo = max(0, int((a - 150.0) * rate_hz / 1000.0))
        hi = min(n, int((a + 450.0) * rate_hz / 1000.0) + 1)
        out[lo:hi] += scg_beat(t[lo:hi] - a)
    return out


def synth_subject(seed: int, duration_s: float, profile: SubjectProfile | None = None):
    """Render one subject; returns the 25 Hz observation and its ground truth."""
    profile = (profile or SubjectProfile()).validate()
    if duration_s < 10.0:
        raise ValueError("duration_s must be at least 10 s")
    rng = np.random.default_rng(seed)
    duration_ms = duration_s * 1000.0
    onsets = beat_schedule(rng, duration_ms, profile)
    n_ref = int(round(duration_s * REFERENCE_RATE_HZ))
    src = render_source(profile, onsets, n_ref, REFERENCE_RATE_HZ)
    clean = src[:, None] * np.asarray(profile.mixing)[None, :]
    for group, peak in ((ACCEL, profile.accel_peak_amp), (GYRO, profile.gyro_peak_amp)):
        m = np.max(np.abs(clean[:, group]))
        if m > 0:
            clean[:, group] *= peak / m
    clean_series = ImuSeries.from_array(clean, REFERENCE_RATE_HZ)
    obs = resample_array(clean, REFERENCE_RATE_HZ, OBSERVATION_RATE_HZ)
    obs = obs + rng.standard_normal(obs.shape) * np.asarray(profile.noise_floor)[None, :]
    offset = anchor_offset_ms(profile)
    scg = render_scg(onsets + offset, n_ref, REFERENCE_RATE_HZ)
    truth = GroundTruth(
        beat_onsets_ms=tuple(int(x) for x in onsets),
        ibi_ms=tuple(int(x) for x in np.diff(onsets)),
        anchor_offset_ms=offset,
        clean_series=clean_series,
        scg_ref=scg,
    )
    return ImuSeries.from_array(obs, OBSERVATION_RATE_HZ), truth


def sample_population(n: int, seed: int, hr_range=(55.0, 95.0)) -> list[SubjectProfile]:
    """Randomised subjects: mixing uniform on the sphere, HR means in ``hr_range`` BPM."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    base = SubjectProfile()
    out = []
    for _ in range(n):
        mixing = rng.standard_normal(6)
        mixing /= np.linalg.norm(mixing)
        gaps = np.diff(base.template.peak_times) * rng.uniform(0.85, 1.15, 4)
        times = (0.0,) + tuple(float(x) for x in np.cumsum(gaps))
        amps = np.asarray(base.template.peak_amps) * rng.uniform(0.85, 1.15, 5)
        amps[2] = base.template.peak_amps[2]
        aorta = replace(base.aorta, S_d=base.aorta.S_d * rng.uniform(0.8, 1.2),
                        S_a=base.aorta.S_a * rng.uniform(0.8, 1.2))
        profile = replace(
            base,
            hr_mean_bpm=float(rng.uniform(*hr_range)),
            hr_std_bpm=float(rng.uniform(1.0, 4.0)),
            aorta=aorta,
            template=BeatTemplate(times, tuple(float(a) for a in amps)),
            mixing=tuple(float(x) for x in mixing),
        )
        out.append(profile.validate())
    return out


def empirical_peak_snr_db(observed: np.ndarray, clean: np.ndarray) -> float:
    """Peak signal amplitude over peak noise amplitude, in dB.

    Both arrays are single channels on the same grid; noise is their difference.
    """
    noise = np.asarray(observed) - np.asarray(clean)
    return 20.0 * math.log10(np.max(np.abs(clean)) / np.max(np.abs(noise)))


def profile_to_dict(profile: SubjectProfile) -> dict:
    a = profile.aorta

    def wave(w):
        return {"amplitude_mmhg": w.amplitude_mmhg, "onset_frac": w.onset_frac, "width_frac": w.width_frac}

    return {
        "hr_mean_bpm": profile.hr_mean_bpm,
        "hr_std_bpm": profile.hr_std_bpm,
        "aorta": {"S_d": a.S_d, "S_a": a.S_a, "P0_wave": wave(a.P0_wave), "P1_wave": wave(a.P1_wave),
                  "P2_wave": wave(a.P2_wave)},
        "template": {"peak_times": list(profile.template.peak_times),
                     "peak_amps": list(profile.template.peak_amps)},
        "mixing": list(profile.mixing),
        "accel_peak_amp": profile.accel_peak_amp,
        "gyro_peak_amp": profile.gyro_peak_amp,
        "noise_floor": list(profile.noise_floor),
    }


def profile_from_dict(d: dict) -> SubjectProfile:
    a = d["aorta"]
    aorta = AortaParams(a["S_d"], a["S_a"], PressureWave(**a["P0_wave"]), PressureWave(**a["P1_wave"]),
                        PressureWave(**a["P2_wave"]))
    return SubjectProfile(
        hr_mean_bpm=d["hr_mean_bpm"], hr_std_bpm=d["hr_std_bpm"], aorta=aorta,
        template=BeatTemplate(tuple(d["template"]["peak_times"]), tuple(d["template"]["peak_amps"])),
        mixing=tuple(d["mixing"]), accel_peak_amp=d["accel_peak_amp"], gyro_peak_amp=d["gyro_peak_amp"],
        noise_floor=tuple(d["noise_floor"]),
    ).validate()
