"""Evaluation metrics: bandpass SNR, cosine similarity, SOI, MPE, HR/IBI.

Welch settings are fixed (2 s Hann segments, 50 % overlap, mean detrend) and
recorded in every :class:`MetricReport`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from .errors import InsufficientBeatsError, UndefinedMetricError
from .signal_core import detect_beats

WELCH_SEGMENT_S = 2.0
WELCH_OVERLAP = 0.5
WELCH_WINDOW = "hann"
SNR_BAND = (1.0, 10.0)
SOI_BAND = (1.0, 50.0)


@dataclass(frozen=True)
class PsdEstimate:
    freqs_hz: np.ndarray
    power: np.ndarray
    segment_len: int
    overlap: int
    window: str = WELCH_WINDOW

    def band(self, lo: float, hi: float) -> np.ndarray:
        return (self.freqs_hz >= lo) & (self.freqs_hz <= hi)


def welch_params(n: int, rate_hz: float) -> tuple[int, int]:
    nperseg = min(n, int(round(WELCH_SEGMENT_S * rate_hz)))
    return nperseg, int(nperseg * WELCH_OVERLAP)


def welch_psd(x, rate_hz: float) -> PsdEstimate:
    x = np.asarray(x, dtype=float).ravel()
    nperseg, noverlap = welch_params(x.size, rate_hz)
    f, p = signal.welch(x, fs=rate_hz, window=WELCH_WINDOW, nperseg=nperseg, noverlap=noverlap,
                        detrend="constant", scaling="density")
    return PsdEstimate(f, p, nperseg, noverlap)


def bandpass_snr_db(sig, noise_floor, rate_hz: float, band=SNR_BAND) -> float:
    """10 log10 of mean in-band PSD of ``sig`` over that of ``noise_floor``."""
    ps, pn = welch_psd(sig, rate_hz), welch_psd(noise_floor, rate_hz)
    p_noise = float(np.mean(pn.power[pn.band(*band)]))
    if not p_noise > 0:
        raise UndefinedMetricError("noise floor has zero in-band power; SNR undefined")
    p_sig = float(np.mean(ps.power[ps.band(*band)]))
    if not p_sig > 0:
        raise UndefinedMetricError("signal has zero in-band power; SNR undefined")
    return 10.0 * np.log10(p_sig / p_noise)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedMetricError("cosine similarity undefined for a zero-norm input")
    return float(np.dot(a, b) / (na * nb))


def soi_band(rate_hz: float, band=SOI_BAND) -> tuple[tuple[float, float], bool]:
    hi = min(band[1], rate_hz / 2.0)
    return (band[0], hi), hi < band[1]


def soi(recovered, truth, rate_hz: float, band=SOI_BAND) -> float:
    """Spectral overlap: sum of min(PSD_e, PSD_t) over sum of PSD_t in band.

    The upper band edge is clamped to Nyquist.
    """
    (lo, hi), _ = soi_band(rate_hz, band)
    pe, pt = welch_psd(recovered, rate_hz), welch_psd(truth, rate_hz)
    sel = pt.band(lo, hi)
    denom = float(np.sum(pt.power[sel]))
    if not denom > 0:
        raise UndefinedMetricError("truth has zero power in the SOI band")
    return float(np.sum(np.minimum(pe.power[sel], pt.power[sel])) / denom)


def mpe(estimates, truths) -> float:
    """Mean absolute percentage error."""
    e = np.asarray(estimates, dtype=float).ravel()
    t = np.asarray(truths, dtype=float).ravel()
    if e.shape != t.shape or e.size == 0:
        raise ValueError("mpe needs equal, nonzero-length inputs")
    if np.any(t == 0):
        raise UndefinedMetricError("mpe undefined for a zero truth value")
    return float(np.mean(np.abs((e - t) / t)) * 100.0)


def hr_ibi_from_peaks(peak_indices, rate_hz: float) -> tuple[float, np.ndarray]:
    peaks = np.asarray(peak_indices, dtype=float)
    if peaks.size < 2:
        raise InsufficientBeatsError(f"need >= 2 beats, got {peaks.size}")
    ibi = np.diff(peaks) * 1000.0 / rate_hz
    return 60000.0 / float(np.mean(ibi)), ibi


def hr_ibi_from_waveform(w, rate_hz: float | None = None) -> tuple[float, np.ndarray]:
    """HR (from mean IBI) and IBI list in ms.

    ``w`` is either an object with ``samples``/``rate_hz``/``beat_annotations``
    or a plain array, in which case ``rate_hz`` is required.
    """
    if hasattr(w, "samples"):
        rate_hz = w.rate_hz
        peaks = w.beat_annotations
        if peaks is None:
            peaks = detect_beats(w.samples, rate_hz)
    else:
        if rate_hz is None:
            raise ValueError("rate_hz is required for a bare array")
        peaks = detect_beats(w, rate_hz)
    return hr_ibi_from_peaks(peaks, rate_hz)


@dataclass
class MetricReport:
    similarity: float | None = None
    soi: float | None = None
    mpe_hr_pct: float | None = None
    mpe_ibi_pct: float | None = None
    snr_db: list = field(default_factory=list)
    soi_band_hz: tuple | None = None
    soi_band_clamped: bool = False
    welch: dict = field(default_factory=lambda: {
        "segment_s": WELCH_SEGMENT_S, "overlap": WELCH_OVERLAP, "window": WELCH_WINDOW,
        "detrend": "constant"})

    def __post_init__(self):
        if self.soi is not None and self.soi < 0:
            raise ValueError("soi must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["soi_band_hz"] is not None:
            d["soi_band_hz"] = list(d["soi_band_hz"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
