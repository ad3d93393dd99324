import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from earcardio.bcg_synth import SubjectProfile, synth_subject
from earcardio.errors import MustInterpolateFirstError, TraceParseError, UninterpolatableSeriesError
from earcardio.signal_core import (ImuSample, ImuSeries, MissingMask, linear_interpolate, read_trace_csv,
                                   resample, resample_array, round_half_up, segment_beats, slot_time_ms,
                                   write_trace_csv)


def series_from(values, mask):
    return ImuSeries(np.asarray(values, dtype=float), np.asarray(mask, dtype=bool))


def test_slot_times_round_half_up():
    assert round_half_up(2.5) == 3
    assert round_half_up(-0.5) == 0
    s = ImuSeries.from_array(np.zeros((4, 6)), rate_hz=25.0, start_ms=1000)
    assert list(s.times_ms()) == [1000, 1040, 1080, 1120]
    # 3 Hz gives 333.33.. ms slots
    assert slot_time_ms(0, 1, 3.0) == 333
    assert slot_time_ms(0, 2, 3.0) == 667


def test_sample_rejects_bad_values():
    with pytest.raises(ValueError):
        ImuSample(-1, (0, 0, 0), (0, 0, 0))
    with pytest.raises(ValueError):
        ImuSample(0, (0, np.nan, 0), (0, 0, 0))


def test_mask_loss_rate():
    m = MissingMask(np.array([1, 0, 1, 1], dtype=bool))
    assert m.loss_rate == pytest.approx(0.25)


def test_series_is_read_only():
    s = ImuSeries.from_array(np.ones((3, 6)))
    with pytest.raises(ValueError):
        s.values[0, 0] = 2.0


def test_interpolate_midpoint():
    s = series_from([[0.0] * 6, [0.0] * 6, [2.0] * 6], [1, 0, 1])
    out = linear_interpolate(s)
    assert out.is_complete
    np.testing.assert_array_equal(out.values[1], np.ones(6))


def test_interpolate_two_missing():
    vals = np.zeros((4, 6))
    vals[3] = 3.0
    out = linear_interpolate(series_from(vals, [1, 0, 0, 1]))
    np.testing.assert_allclose(out.values[1:3, 0], [1.0, 2.0], atol=1e-15)


def test_interpolate_complete_is_identity():
    s = ImuSeries.from_array(np.arange(30.0).reshape(5, 6))
    assert linear_interpolate(s) == s


def test_interpolate_edges_hold_nearest():
    vals = np.zeros((5, 6))
    vals[1], vals[3] = 4.0, 8.0
    out = linear_interpolate(series_from(vals, [0, 1, 0, 1, 0]))
    np.testing.assert_array_equal(out.values[:, 2], [4.0, 4.0, 6.0, 8.0, 8.0])


def test_interpolate_needs_two_present():
    with pytest.raises(UninterpolatableSeriesError):
        linear_interpolate(series_from(np.zeros((4, 6)), [0, 1, 0, 0]))


@st.composite
def masked_series(draw):
    n = draw(st.integers(2, 60))
    values = draw(arrays(np.float64, (n, 6), elements=st.floats(-50, 50)))
    mask = np.array(draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    idx = draw(st.lists(st.integers(0, n - 1), min_size=2, max_size=2, unique=True))
    mask[idx] = True
    return series_from(values, mask)


@given(masked_series())
def test_interpolate_keeps_present_and_is_idempotent(s):
    out = linear_interpolate(s)
    assert out.mask.all()
    np.testing.assert_array_equal(out.values[s.mask], s.values[s.mask])
    assert linear_interpolate(out) == out


@given(masked_series())
def test_mask_matches_slot_presence(s):
    slots = s.slots
    assert [x is not None for x in slots] == list(s.mask)
    assert s.missing_mask.loss_rate == pytest.approx(1 - s.mask.mean())


def test_resample_constant():
    s = ImuSeries.from_array(np.full((125, 6), 5.0))
    out = resample(s, 100.0)
    assert len(out) == 500
    np.testing.assert_allclose(out.values, 5.0, atol=1e-12)


def test_resample_sine_amplitude():
    t = np.arange(125) / 25.0
    x = np.sin(2 * np.pi * 2.0 * t)
    y = resample_array(x[:, None], 25.0, 100.0)[:, 0]
    assert y.size == 500
    # 2 Hz sits exactly on bin 10 of both 5 s spectra
    a_in = np.abs(np.fft.rfft(x))[10] / (x.size / 2)
    a_out = np.abs(np.fft.rfft(y))[10] / (y.size / 2)
    assert abs(a_out / a_in - 1) < 0.01


@given(arrays(np.float64, (40, 6), elements=st.floats(-1e3, 1e3)))
def test_resample_identity_rate(values):
    s = ImuSeries.from_array(values)
    np.testing.assert_allclose(resample(s, 25.0).values, values, atol=1e-12, rtol=0)


def test_resample_requires_complete():
    s = series_from(np.zeros((4, 6)), [1, 0, 1, 1])
    with pytest.raises(MustInterpolateFirstError):
        resample(s, 100.0)


def pulse_train(bpm, seconds, rate):
    n = int(seconds * rate)
    x = np.zeros(n)
    t = np.arange(n) / rate
    for k in np.arange(0.5, seconds, 60.0 / bpm):
        x += np.exp(-0.5 * ((t - k) / 0.03) ** 2)
    return x


def test_segment_pulse_train():
    x = pulse_train(60, 10, 25.0)
    seg = segment_beats(x, 25.0)
    assert len(seg.peak_indices) == 10
    np.testing.assert_allclose(np.diff(seg.peak_indices), 25, atol=1)


def test_segment_zero_signal_is_empty():
    assert len(segment_beats(np.zeros(250), 25.0).peak_indices) == 0


def test_segment_synthetic_bcg_median_ibi():
    profile = SubjectProfile(hr_mean_bpm=75.0)
    obs, truth = synth_subject(5, 60.0, profile)
    seg = segment_beats(obs.values[:, 1], 25.0)
    assert abs(np.median(seg.ibi_ms) - 800.0) <= 40.0
    assert abs(np.median(seg.ibi_ms) - np.median(truth.ibi_ms)) <= 40.0


@given(arrays(np.float64, st.integers(10, 300), elements=st.floats(-10, 10)))
def test_segment_refractory_and_order(x):
    seg = segment_beats(x, 25.0)
    p = np.asarray(seg.peak_indices)
    assert np.all(np.diff(p) > 0)
    assert np.all(np.diff(p) * 40 >= 300)


def test_csv_round_trip(tmp_path, rng):
    vals = rng.normal(size=(20, 6))
    mask = rng.random(20) > 0.3
    mask[[0, -1]] = True
    s = ImuSeries(vals, mask, 25.0, 0)
    path = tmp_path / "t.csv"
    write_trace_csv(s, path)
    back = read_trace_csv(path, nominal_rate_hz=25.0, start_ms=0, n_slots=20)
    assert back == s
    assert path.read_text().splitlines()[0] == "t_ms,ax,ay,az,gx,gy,gz"
    assert len(path.read_text().splitlines()) == 1 + mask.sum()


@pytest.mark.parametrize("body,row", [
    ("0,1,2,3,4,5,6\n40,1,2,3,4,5\n", 3),
    ("0,1,2,3,4,5,6\n0,1,2,3,4,5,6\n", 3),
    ("0,1,2,3,4,5,6\n40,1,x,3,4,5,6\n", 3),
    ("0,1,2,3,4,5,6\n40,1,2,3,4,5,9999\n", 3),
])
def test_csv_errors_name_row(tmp_path, body, row):
    p = tmp_path / "bad.csv"
    p.write_text("t_ms,ax,ay,az,gx,gy,gz\n" + body)
    with pytest.raises(TraceParseError) as info:
        read_trace_csv(p)
    assert info.value.row == row
