import numpy as np
import pytest
from hypothesis import given, strategies as st

from earcardio.ble_channel import SCENARIOS, LossReport, ReplayWindow, replay_windows, transmit
from earcardio.bcg_synth import synth_subject
from earcardio.errors import DataError
from earcardio.pipeline import (VARIANTS, anchor_lag, anchor_train, check_variant, evaluate_window, flip_channel_signs,
                                ibi_pairs,
                                match_beats, process_window, summarize, window_truth)
from earcardio.signal_core import ImuSeries


@pytest.fixture(scope="module")
def subject():
    obs, truth = synth_subject(17, 30.0)
    return obs, truth


def clean_at_25(truth):
    from earcardio.signal_core import resample
    return resample(truth.clean_series, 25.0)


# --- beat matching -----------------------------------------------------------

def test_match_beats():
    m = match_beats([100, 900, 2500], [110, 1000, 2000], tol_ms=150)
    np.testing.assert_array_equal(m, [0, 1, -1])
    assert match_beats([1.0], []).tolist() == [-1]


def test_ibi_pairs_consecutive_only():
    true = [0, 1000, 2000, 3000]
    assert ibi_pairs([10, 1000, 3010], true) == [(990.0, 1000.0)]
    assert ibi_pairs([0, 1010, 2000], true) == [(1010.0, 1000.0), (990.0, 1000.0)]


def test_anchor_lag_examples():
    ref = np.array([50.0, 150.0, 250.0])
    assert anchor_lag(ref, ref, 300) == 0
    assert anchor_lag(ref + 3, ref, 300) == 3
    assert anchor_lag(ref - 2, ref, 300) == -2
    assert anchor_lag([], ref, 300) is None


@given(st.integers(-8, 8), st.floats(-0.4, 0.4))
def test_anchor_lag_recovers_shift(shift, jitter):
    ref = np.array([60.0, 145.0, 233.0, 320.0, 410.0])
    assert anchor_lag(ref + shift + jitter, ref, 500) == shift


def test_anchor_train_peak():
    t = anchor_train([10.0], 30)
    assert int(np.argmax(t)) == 10 and t[10] == pytest.approx(1.0)


# --- window processing -------------------------------------------------------

def test_check_variant():
    for v in VARIANTS:
        assert check_variant(v) == v
    with pytest.raises(ValueError):
        check_variant("magic")


def test_neural_variants_need_models(subject):
    obs, _ = subject
    w = obs.window(0, 125)
    for v in ("swt+neural", "full"):
        with pytest.raises(DataError, match="needs a trained"):
            process_window(w, v)


def test_lossless_interp_only_is_identity():
    obs, truth = synth_subject(3, 30.0)
    trace = transmit(obs, SCENARIOS["lossless"], 0)
    for rw in replay_windows(trace):
        out = process_window(rw.series, "interp-only")
        ref = obs.window(rw.start_slot, 125).values.T
        np.testing.assert_array_equal(out.taps["interp"], ref)
        for ch in range(6):
            a, b = out.taps["interp"][ch], ref[ch]
            assert np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("variant", ["swt+interp", "swt+ensemble"])
def test_deterministic_variants_shapes(subject, variant):
    obs, _ = subject
    trace = transmit(obs, SCENARIOS["anc"], 1)
    rw = next(w for w in replay_windows(trace) if not w.discard)
    out = process_window(rw.series, variant)
    assert out.bcg.shape == (6, 125) and set(out.taps) >= {"interp", "swt", "bcg"}
    assert out.scg is None


def test_evaluate_window_records(subject):
    obs, truth = subject
    clean = clean_at_25(truth)
    trace = transmit(obs, SCENARIOS["anc"], 2)
    rw = next(w for w in replay_windows(trace) if not w.discard)
    t = window_truth(clean, truth.anchors_ms, truth.scg_ref, rw.start_slot, 125)
    rec = evaluate_window(rw, "swt+interp", t)
    assert rec["variant"] == "swt+interp" and not rec["discard"]
    assert -1 <= rec["bcg_similarity"] <= 1
    assert rec["soi_band_hz"] == [1.0, 12.5] and rec["soi_band_clamped"]
    assert rec["n_true_beats"] == len(t.anchors_ms)
    assert abs(rec["hr_est"] - rec["hr_true"]) / rec["hr_true"] < 0.1


def test_discarded_window_record():
    series = ImuSeries(np.zeros((125, 6)), np.r_[np.ones(90), np.zeros(35)].astype(bool))
    rw = ReplayWindow(0, 0, series, LossReport.from_mask(series.mask))
    t = window_truth(ImuSeries.from_array(np.zeros((125, 6))), [], None, 0, 125)
    rec = evaluate_window(rw, "full", t)
    assert rec["discard"] and "bcg_similarity" not in rec


def test_window_truth_alignment(subject):
    _, truth = subject
    clean = clean_at_25(truth)
    t = window_truth(clean, truth.anchors_ms, truth.scg_ref, 50, 125)
    assert np.all((t.anchors_ms >= 0) & (t.anchors_ms < 5000))
    np.testing.assert_array_equal(t.scg, truth.scg_ref[200:700])
    np.testing.assert_array_equal(t.clean, clean.values[50:175].T)


def test_summarize_counts_discards():
    recs = [{"discard": True}, {"discard": False, "bcg_similarity": 0.5}, {"discard": False, "bcg_similarity": 0.7}]
    s = summarize(recs)
    assert s["n_windows"] == 3 and s["n_discarded"] == 1
    assert s["discard_rate"] == pytest.approx(1 / 3)
    assert s["bcg_similarity"]["n"] == 2 and s["bcg_similarity"]["mean"] == pytest.approx(0.6)
    assert summarize([])["discard_rate"] == 0.0


def test_flip_channel_signs():
    rng = np.random.default_rng(0)
    pairs = [(rng.normal(size=(6, 125)), rng.normal(size=500), np.array([10, 90])) for _ in range(20)]
    flipped = flip_channel_signs(pairs, np.random.default_rng(1))
    again = flip_channel_signs(pairs, np.random.default_rng(1))
    signs = []
    for (x, t, p), (fx, ft, fp), (gx, _, _) in zip(pairs, flipped, again):
        np.testing.assert_array_equal(np.abs(fx), np.abs(x))
        assert ft is t and fp is p
        np.testing.assert_array_equal(fx, gx)
        signs.append(np.sign(fx[:, 0] * x[:, 0]))
    signs = np.concatenate(signs)
    assert set(signs) == {-1.0, 1.0}


@pytest.mark.slow
def test_trained_denoiser_beats_interpolation(acceptance_run):
    variants = acceptance_run["summary"]["scenarios"]["anc"]["variants"]
    neural = variants["swt+neural"]["bcg_similarity"]["mean"]
    assert neural > variants["interp-only"]["bcg_similarity"]["mean"]
    assert neural > variants["swt+interp"]["bcg_similarity"]["mean"]
