"""Per-window processing chain and its evaluation against ground truth.

Stages: received window -> linear interpolation -> SWT cardiac band ->
enhancement (ensemble or neural) -> SCG reconstruction. Which stages run is
chosen by the variant tag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ble_channel import ReplayWindow, simulate_drops, LossScenario
from .errors import DataError, UndefinedMetricError
from .metrics import cosine_similarity, soi, soi_band
from .neural.enhance import EnhancerInput, anchor_beats, denoiser_forward, ensemble_refine, rank_channels
from .neural.reconstruct import OUTPUT_RATE_HZ, UPSAMPLE, reconstructor_forward
from .signal_core import ImuSeries, detect_beats, linear_interpolate
from .swt import swt_denoise_array

VARIANTS = ("interp-only", "swt+interp", "swt+ensemble", "swt+neural", "full")
NEURAL_VARIANTS = ("swt+neural", "full")
SCALE_EPS = 1e-12
MATCH_TOL_MS = 150.0
MAX_LAG_SAMPLES = 10


def check_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise ValueError(f"unknown pipeline variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return variant


def channel_scale(values: np.ndarray, mask=None) -> np.ndarray:
    """Per-channel std over present samples; values are (channels, T)."""
    v = values if mask is None else values[:, np.asarray(mask, dtype=bool)]
    return np.maximum(v.std(axis=1), SCALE_EPS)


@dataclass
class Models:
    denoiser: object = None
    reconstructor: object = None


@dataclass
class WindowOutput:
    """Stage outputs for one window; arrays are (channels, T) at 25 Hz."""

    mask: np.ndarray
    taps: dict = field(default_factory=dict)
    bcg: np.ndarray | None = None
    scg: np.ndarray | None = None
    degraded: bool = False


def process_window(series: ImuSeries, variant: str, models: Models | None = None) -> WindowOutput:
    """Run one received 125-slot window through ``variant``."""
    check_variant(variant)
    models = models or Models()
    if variant in NEURAL_VARIANTS and models.denoiser is None:
        raise DataError(f"variant {variant} needs a trained denoiser")
    if variant == "full" and models.reconstructor is None:
        raise DataError("variant full needs a trained reconstructor")
    mask = np.array(series.mask)
    interp = linear_interpolate(series).values.T.copy()
    out = WindowOutput(mask, {"interp": interp})
    if variant == "interp-only":
        out.bcg = interp
    else:
        _enhance(out, interp, mask, variant, models)
    out.taps["bcg"] = out.bcg
    if out.scg is not None:
        out.taps["scg"] = out.scg
    return out


def _enhance(out: WindowOutput, interp: np.ndarray, mask: np.ndarray, variant: str, models: Models) -> None:
    band = swt_denoise_array(interp.T).T
    out.taps["swt"] = band
    if variant == "swt+interp":
        out.bcg = band
    elif variant == "swt+ensemble":
        refined, degraded = ensemble_refine(EnhancerInput(band, mask), anchor_beats(band))
        out.bcg, out.degraded = refined, degraded
    else:
        scale = channel_scale(band, mask)
        y = denoiser_forward(models.denoiser, EnhancerInput(band / scale[:, None], mask))
        out.taps["denoised_normalized"] = y
        out.bcg = y * scale[:, None]
        if variant == "full":
            r_in = y / channel_scale(y)[:, None]
            out.scg = reconstructor_forward(models.reconstructor, r_in, annotate=False).samples


# --- beat timing -------------------------------------------------------------

def detect_beats_ms(x: np.ndarray, rate_hz: float) -> np.ndarray:
    """Beat times (ms from window start) from a single-channel waveform."""
    return detect_beats(x, rate_hz) * 1000.0 / rate_hz


def bcg_beats_ms(bcg: np.ndarray, rate_hz: float = 25.0) -> np.ndarray:
    best = int(rank_channels(bcg, rate_hz)[0])
    return detect_beats_ms(bcg[best], rate_hz)


def match_beats(detected_ms, true_ms, tol_ms: float = MATCH_TOL_MS) -> np.ndarray:
    """Index into ``true_ms`` for each detected beat, -1 when nothing is within tol."""
    detected_ms = np.asarray(detected_ms, dtype=float)
    true_ms = np.asarray(true_ms, dtype=float)
    out = np.full(detected_ms.size, -1, dtype=np.int64)
    if true_ms.size == 0:
        return out
    for i, d in enumerate(detected_ms):
        j = int(np.argmin(np.abs(true_ms - d)))
        if abs(true_ms[j] - d) <= tol_ms:
            out[i] = j
    return out


def ibi_pairs(detected_ms, true_ms, tol_ms: float = MATCH_TOL_MS) -> list:
    """(estimated, true) IBI pairs for consecutive detections matched to consecutive true beats."""
    detected_ms = np.asarray(detected_ms, dtype=float)
    true_ms = np.asarray(true_ms, dtype=float)
    m = match_beats(detected_ms, true_ms, tol_ms)
    pairs = []
    for i in range(len(m) - 1):
        if m[i] >= 0 and m[i + 1] == m[i] + 1:
            pairs.append((float(detected_ms[i + 1] - detected_ms[i]),
                          float(true_ms[m[i + 1]] - true_ms[m[i]])))
    return pairs


def anchor_train(indices, n: int, sigma: float = 2.0) -> np.ndarray:
    """Sum of unit Gaussians at (possibly fractional) sample indices."""
    t = np.arange(n, dtype=float)[:, None]
    idx = np.asarray(indices, dtype=float).reshape(1, -1)
    return np.exp(-0.5 * ((t - idx) / sigma) ** 2).sum(axis=1)


def anchor_lag(out_peaks, ref_anchors, n: int, max_lag: int = MAX_LAG_SAMPLES) -> int | None:
    """Lag (samples) maximising the cross-correlation of two smoothed anchor trains.

    Positive means the output anchors are late. None when either side is empty.
    """
    if len(out_peaks) == 0 or len(ref_anchors) == 0:
        return None
    a = anchor_train(out_peaks, n)
    b = anchor_train(ref_anchors, n)
    best, best_val = 0, -np.inf
    # search outward from zero so ties resolve to the smallest |lag|
    for lag in sorted(range(-max_lag, max_lag + 1), key=lambda k: (abs(k), k)):
        v = float(np.dot(a[lag:], b[:n - lag])) if lag >= 0 else float(np.dot(a[:n + lag], b[-lag:]))
        if v > best_val * (1 + 1e-12):
            best, best_val = lag, v
    return best


# --- per-window evaluation ----------------------------------------------------

@dataclass
class Truth:
    """Ground truth aligned to one window."""

    clean: np.ndarray  # (6, T) at 25 Hz
    anchors_ms: np.ndarray  # relative to window start
    scg: np.ndarray | None = None  # (4T,) at 100 Hz


def window_truth(clean: ImuSeries, anchors_ms, scg, start_slot: int, length: int) -> Truth:
    rate = clean.nominal_rate_hz
    t0 = start_slot * 1000.0 / rate
    dur = length * 1000.0 / rate
    anchors = np.asarray(anchors_ms, dtype=float) - t0
    anchors = anchors[(anchors >= 0) & (anchors < dur)]
    c = clean.window(start_slot, length).values.T.copy()
    s = None
    if scg is not None:
        lo = start_slot * UPSAMPLE
        s = np.zeros(length * UPSAMPLE)
        chunk = np.asarray(scg, dtype=float)[lo:lo + length * UPSAMPLE]
        s[:chunk.size] = chunk
    return Truth(c, anchors, s)


def _safe(fn, *args):
    try:
        v = fn(*args)
    except (UndefinedMetricError, ValueError):
        return None
    return float(v) if np.isfinite(v) else None


def mean_channel_cosine(a: np.ndarray, b: np.ndarray) -> float | None:
    vals = [_safe(cosine_similarity, x, y) for x, y in zip(a, b)]
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def hr_from_times(times_ms) -> float | None:
    t = np.asarray(times_ms, dtype=float)
    if t.size < 2:
        return None
    return 60000.0 / float(np.mean(np.diff(t)))


def evaluate_window(rw: ReplayWindow, variant: str, truth: Truth, models: Models | None = None,
                    keep_taps: bool = False) -> dict:
    """Metric record for one replay window (JSON-ready)."""
    rec = {
        "window": rw.index,
        "start_slot": rw.start_slot,
        "variant": variant,
        "loss_rate": rw.report.loss_rate,
        "discard": rw.discard,
    }
    if rw.discard:
        return rec
    try:
        out = process_window(rw.series, variant, models)
    except DataError as exc:
        if variant in NEURAL_VARIANTS and "needs a trained" in str(exc):
            raise
        rec.update(discard=True, error=str(exc))
        return rec
    rec["degraded"] = out.degraded
    rec["bcg_similarity"] = mean_channel_cosine(out.bcg, truth.clean)
    if out.scg is not None:
        rec["scg_similarity"] = _safe(cosine_similarity, out.scg, truth.scg)
        rec["soi"] = _safe(soi, out.scg, truth.scg, OUTPUT_RATE_HZ)
        beats = detect_beats_ms(out.scg, OUTPUT_RATE_HZ)
        # input anchors scaled 4x onto the output grid
        ref = truth.anchors_ms * OUTPUT_RATE_HZ / 1000.0
        rec["anchor_lag"] = anchor_lag(beats * OUTPUT_RATE_HZ / 1000.0, ref, out.scg.size)
    else:
        best = int(rank_channels(truth.clean)[0])
        rec["soi"] = _safe(soi, out.bcg[best], truth.clean[best], rw.series.nominal_rate_hz)
        beats = bcg_beats_ms(out.bcg, rw.series.nominal_rate_hz)
    band, clamped = soi_band(OUTPUT_RATE_HZ if out.scg is not None else rw.series.nominal_rate_hz)
    rec["soi_band_hz"] = list(band)
    rec["soi_band_clamped"] = clamped
    rec["hr_est"] = hr_from_times(beats)
    rec["hr_true"] = hr_from_times(truth.anchors_ms)
    rec["ibi_pairs"] = [list(p) for p in ibi_pairs(beats, truth.anchors_ms)]
    rec["n_beats"] = int(len(beats))
    rec["n_true_beats"] = int(len(truth.anchors_ms))
    if keep_taps:
        rec["_taps"] = out.taps
    return rec


# --- training windows ---------------------------------------------------------

def training_starts(n_slots: int, length: int, hop: int) -> range:
    return range(0, n_slots - length + 1, hop)


def denoiser_windows(mixed: ImuSeries, clean: ImuSeries, rng: np.random.Generator, hop: int = 25,
                     length: int = 125, loss_range=(0.0, 0.5), burst_len: float = 3.0) -> list:
    """(EnhancerInput, target) pairs in per-window normalised units.

    Each window gets a fresh random missing pattern whose loss rate is drawn
    uniformly from ``loss_range`` (half iid, half bursty).
    """
    from .ble_channel import BurstModel

    out = []
    for s in training_starts(len(mixed), length, hop):
        p = float(rng.uniform(*loss_range))
        if rng.random() < 0.5:
            scen = LossScenario("train", p)
        else:
            # bursts of mean length burst_len with the same stationary loss
            enter = p / (burst_len * max(1e-9, 1.0 - p))
            scen = LossScenario("train", 0.0, BurstModel(min(1.0, enter), burst_len))
        drops = simulate_drops(length, scen, rng)
        if drops.sum() > length - 2:
            drops[:] = False
        w = mixed.window(s, length)
        w = ImuSeries(w.values, ~drops, w.nominal_rate_hz, w.start_ms)
        interp = linear_interpolate(w).values.T
        band = swt_denoise_array(interp.T).T
        scale = channel_scale(band, ~drops)
        target = clean.window(s, length).values.T / scale[:, None]
        out.append((EnhancerInput(band / scale[:, None], ~drops), target))
    return out


def reconstructor_pairs(bcg_windows, scg: np.ndarray, anchors_ms, starts, length: int = 125,
                        rate_hz: float = 25.0) -> list:
    """(normalised 6xT input, 4T SCG target, target peak indices) triples."""
    out = []
    for w, s in zip(bcg_windows, starts):
        w = np.asarray(w, dtype=float)
        x = w / channel_scale(w)[:, None]
        lo = s * UPSAMPLE
        target = np.asarray(scg[lo:lo + UPSAMPLE * length], dtype=float)
        if target.size < UPSAMPLE * length:
            continue
        t0 = s * 1000.0 / rate_hz
        rel = (np.asarray(anchors_ms, dtype=float) - t0) * OUTPUT_RATE_HZ / 1000.0
        peaks = np.round(rel[(rel >= 0) & (rel < UPSAMPLE * length - 0.5)]).astype(np.int64)
        out.append((x, target, peaks))
    return out


def flip_channel_signs(pairs: list, rng: np.random.Generator) -> list:
    """Random per-channel sign flips on reconstructor inputs, targets unchanged.

    Mixing vectors are symmetric under per-axis sign changes, so a flipped
    window is an equally valid training example. Without this the model can
    tie beat timing to a subject's channel sign pattern instead of morphology.
    """
    return [(x * rng.choice([-1.0, 1.0], size=(x.shape[0], 1)), t, p) for x, t, p in pairs]


def summarize(records: list, keys=("bcg_similarity", "scg_similarity", "soi")) -> dict:
    """Aggregate non-discarded windows; discards are counted, never silently dropped."""
    n = len(records)
    kept = [r for r in records if not r.get("discard")]
    out = {"n_windows": n, "n_discarded": n - len(kept), "discard_rate": (n - len(kept)) / n if n else 0.0}
    for k in keys:
        vals = np.array([r[k] for r in kept if r.get(k) is not None], dtype=float)
        if vals.size:
            out[k] = {"mean": float(vals.mean()), "median": float(np.median(vals)),
                      "p10": float(np.percentile(vals, 10)), "n": int(vals.size)}
    return out


