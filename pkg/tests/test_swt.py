import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from earcardio.bcg_synth import SubjectProfile, synth_subject
from earcardio.errors import DecompositionLengthError, MustInterpolateFirstError
from earcardio.metrics import bandpass_snr_db, cosine_similarity
from earcardio.motion_synth import MotionKind, group_rms, mix, synth_motion
from earcardio.signal_core import ImuSeries, resample_array
from earcardio.swt import (dump_coefficients_csv, filter_pair, iswt, min_length, swt_cardiac_reconstruct,
                           swt_decompose, swt_denoise_array, swt_denoise_series)

FS = 25.0
signals = arrays(np.float64, st.integers(96, 300), elements=st.floats(-100, 100))


def tone(freq, n=500, fs=FS, phase=0.3):
    return np.sin(2 * np.pi * freq * np.arange(n) / fs + phase)


def gain_db(freq):
    x = tone(freq)
    y = swt_cardiac_reconstruct(swt_decompose(x))
    # steady-state gain away from the boundaries
    core = slice(100, 400)
    return 10 * np.log10(np.sum(y[core] ** 2) / np.sum(x[core] ** 2))


def equivalent_filter(level, wavelet="db2"):
    h, g = filter_pair(wavelet)
    out = np.array([1.0])
    for j in range(level):
        f = g if j == level - 1 else h
        up = np.zeros((f.size - 1) * 2 ** j + 1)
        up[:: 2 ** j] = f
        out = np.convolve(out, up)
    return out


def test_min_length():
    assert min_length(5) == 96
    with pytest.raises(DecompositionLengthError):
        swt_decompose(np.zeros(95))
    swt_decompose(np.zeros(96))


def test_level_bounds():
    with pytest.raises(ValueError):
        swt_decompose(np.zeros(500), N=7)
    with pytest.raises(ValueError):
        swt_decompose(np.zeros(500), N=5, J=5)


def test_coefficient_lengths():
    dec = swt_decompose(np.random.default_rng(0).normal(size=125))
    assert all(w.shape == (125,) for w in dec.levels) and dec.approx.shape == (125,)
    assert dec.cutoff_hz == 3.125


def test_constant_lives_in_approximation():
    dec = swt_decompose(np.full(125, 3.7))
    assert max(np.abs(w).max() for w in dec.levels) <= 1e-10
    # MODWT approximation of a constant is the constant (filters sum to 1)
    np.testing.assert_allclose(dec.approx, 3.7, atol=1e-10)


@pytest.mark.parametrize("level", [1, 2, 3, 4, 5])
def test_impulse_gives_equivalent_filter(level):
    n, p = 128, 7
    x = np.zeros(n)
    x[p] = 1.0
    dec = swt_decompose(x, mode="periodic")
    f = equivalent_filter(level)
    expected = np.zeros(n)
    for k, c in enumerate(f):
        expected[(p + k) % n] += c
    np.testing.assert_allclose(dec.levels[level - 1], expected, atol=1e-14)


@given(signals, st.sampled_from(["symmetric", "periodic"]))
def test_perfect_reconstruction(x, mode):
    dec = swt_decompose(x, mode=mode)
    scale = max(np.abs(x).max(), 1e-300)
    assert np.abs(iswt(dec) - x).max() <= 1e-9 * scale


@given(signals)
def test_energy_conserved_periodic(x):
    dec = swt_decompose(x, mode="periodic")
    assert dec.energy() == pytest.approx(float(np.sum(x ** 2)), rel=1e-9, abs=1e-12)


@given(signals)
def test_components_sum_to_signal(x):
    dec = swt_decompose(x)
    total = sum(dec.component(i) for i in range(1, dec.N + 2))
    np.testing.assert_allclose(total, x, atol=1e-9 * max(1.0, np.abs(x).max()))


@given(arrays(np.float64, 128, elements=st.floats(-10, 10)), st.integers(1, 127))
def test_shift_covariance(x, k):
    a = swt_decompose(x, mode="periodic")
    b = swt_decompose(np.roll(x, k), mode="periodic")
    for wa, wb in zip(a.levels, b.levels):
        np.testing.assert_allclose(np.roll(wa, k), wb, atol=1e-9)


@given(signals, st.floats(-5, 5), st.floats(-5, 5))
def test_denoise_linear(x, a, b):
    y = x[::-1].copy()
    lhs = swt_denoise_array((a * x + b * y)[:, None])
    rhs = a * swt_denoise_array(x[:, None]) + b * swt_denoise_array(y[:, None])
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * max(1.0, np.abs(x).max()))


def test_slow_tone_rejected():
    x = tone(0.5, 125)
    y = swt_cardiac_reconstruct(swt_decompose(x))
    assert np.sum(y ** 2) <= 0.05 * np.sum(x ** 2)


def test_cardiac_tone_retained():
    x = tone(5.0, 125)
    y = swt_cardiac_reconstruct(swt_decompose(x))
    assert np.sum(y ** 2) >= 0.8 * np.sum(x ** 2)


def test_zero_in_zero_out():
    assert not np.any(swt_cardiac_reconstruct(swt_decompose(np.zeros(125))))
    s = ImuSeries.from_array(np.zeros((125, 6)))
    assert not np.any(swt_denoise_series(s).values)


@pytest.mark.parametrize("freq", [0.25, 0.5, 1.0, 1.5, 2.0])
def test_tone_sweep_low_attenuated(freq):
    assert gain_db(freq) <= -13.0


@pytest.mark.parametrize("freq", [5.0, 6.0, 7.0, 8.0, 9.0, 10.0])
def test_tone_sweep_band_passed(freq):
    assert gain_db(freq) >= -2.0


def test_series_needs_complete():
    s = ImuSeries(np.zeros((125, 6)), np.r_[np.ones(60), 0, np.ones(64)].astype(bool))
    with pytest.raises(MustInterpolateFirstError):
        swt_denoise_series(s)


def test_clean_bcg_matches_highpass(default_subject):
    obs, truth = default_subject
    clean = resample_array(truth.clean_series.values, 100.0, FS)
    out = swt_denoise_array(clean)
    f = np.fft.rfftfreq(clean.shape[0], 1 / FS)
    spec = np.fft.rfft(clean, axis=0)
    spec[f < 3.125] = 0
    hp = np.fft.irfft(spec, clean.shape[0], axis=0)
    for c in range(6):
        assert cosine_similarity(out[:, c], hp[:, c]) >= 0.95


def test_speak_motion_snr_gain():
    obs, truth = synth_subject(21, 60.0, SubjectProfile())
    clean = obs.values
    motion = synth_motion(MotionKind.default("speak"), 60.0, 5, reference_rms=group_rms(truth.clean_series.values))
    mixed = mix(obs, motion).observed.values
    out = swt_denoise_array(mixed)
    c = 1
    before = bandpass_snr_db(clean[:, c], mixed[:, c] - clean[:, c], FS)
    after = bandpass_snr_db(clean[:, c], out[:, c] - clean[:, c], FS)
    assert after - before >= 5.0


def test_dump_csv(tmp_path):
    dec = swt_decompose(np.random.default_rng(1).normal(size=125))
    p = tmp_path / "c.csv"
    dump_coefficients_csv(dec, p)
    data = np.loadtxt(p, delimiter=",", skiprows=1)
    assert data.shape == (125, 6)
    np.testing.assert_array_equal(data[:, 0], dec.levels[0])
