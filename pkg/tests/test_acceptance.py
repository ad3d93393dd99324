"""End-to-end acceptance criteria; each test prints one PASS/FAIL line."""

import time

import numpy as np
import pytest
import torch

from conftest import record_criterion
from earcardio import cli, reference
from earcardio.ble_channel import (SCENARIOS, BurstModel, LossReport, LossScenario, extract_missing_pattern, fail_safe,
                                   transmit)
from earcardio.config import parse_config
from earcardio.metrics import bandpass_snr_db, cosine_similarity, mpe, soi
from earcardio.neural.common import gradient_check
from earcardio.neural.enhance import DenoiserConfig, DenoiserModel, mse_loss
from earcardio.neural.reconstruct import ReconstructorConfig, ReconstructorModel, RegionWeights, weighted_loss
from earcardio.signal_core import ImuSeries
from earcardio.swt import iswt, swt_cardiac_reconstruct, swt_decompose


def check(number, ok, detail):
    record_criterion(number, bool(ok), detail)
    assert ok, detail


def test_1_swt_perfect_reconstruction():
    rng = np.random.default_rng(1)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        x = rng.normal(size=125) * rng.uniform(1e-3, 1e3)
        y = iswt(swt_decompose(x))
        worst = max(worst, float(np.max(np.abs(y - x)) / np.max(np.abs(x))))
    elapsed = time.perf_counter() - t0
    check(1, worst <= 1e-9 and elapsed < 5.0, f"max relative error {worst:.2e}, {elapsed:.2f} s for 1000 signals")


def fft_gain_db(freq, n=500, fs=25.0):
    # tones periodic in the window, so the periodic transform has no edge effect
    x = np.sin(2 * np.pi * freq * np.arange(n) / fs + 0.4)
    y = swt_cardiac_reconstruct(swt_decompose(x, mode="periodic"))
    k = int(round(freq * n / fs))
    return 20 * np.log10(abs(np.fft.rfft(y)[k]) / abs(np.fft.rfft(x)[k]))


def test_2_swt_band_separation():
    low = [fft_gain_db(f) for f in np.arange(0.1, 2.0001, 0.05)]
    band = [fft_gain_db(f) for f in np.arange(5.0, 10.0001, 0.25)]
    ok = max(low) <= -13.0 and min(band) >= -2.0
    check(2, ok, f"worst low-band gain {max(low):.1f} dB (need <= -13), worst 5-10 Hz gain {min(band):.2f} dB "
                 f"(need >= -2)")


def test_3_channel_bookkeeping():
    rng = np.random.default_rng(3)
    scenarios = [*SCENARIOS.values(), LossScenario("burst", 0.0, BurstModel(0.05, 6.0))]
    mismatches = 0
    for seed in range(200):
        n = int(rng.integers(10, 600))
        series = ImuSeries.from_array(rng.normal(size=(n, 6)))
        trace = transmit(series, scenarios[seed % len(scenarios)], seed)
        rebuilt, report = extract_missing_pattern(trace)
        exact = np.array_equal(rebuilt.mask, ~trace.drop_record)
        exact &= report.loss_rate == trace.drop_record.sum() / n
        exact &= np.array_equal(rebuilt.values[rebuilt.mask], series.values[~trace.drop_record])
        mismatches += not exact
    mask = np.ones(10000, bool)
    mask[:2400] = False
    r24 = LossReport.from_mask(mask)
    mask[2400] = False
    r2401 = LossReport.from_mask(mask)
    boundary = (not fail_safe(0.24)) and fail_safe(0.2401)
    boundary &= (not r24.fail_safe_triggered) and r2401.fail_safe_triggered
    check(3, mismatches == 0 and boundary,
          f"{mismatches} mask/loss mismatches over 200 seeded transmits; boundary 0.24 -> "
          f"{r24.fail_safe_triggered}, 0.2401 -> {r2401.fail_safe_triggered}")


def test_4_metric_oracles():
    rng = np.random.default_rng(4)
    worst = {"cosine": 0.0, "soi": 0.0, "mpe": 0.0, "snr": 0.0}
    for _ in range(1000):
        rate = float(rng.choice([10.0, 12.5, 25.0]))
        n = int(rng.integers(int(2 * rate), int(5 * rate)))
        a, b = rng.normal(size=n), rng.normal(size=n)
        worst["cosine"] = max(worst["cosine"], abs(cosine_similarity(a, b) - reference.naive_cosine(a, b)))
        worst["soi"] = max(worst["soi"], abs(soi(a, b, rate) - reference.naive_soi(a, b, rate)))
        worst["snr"] = max(worst["snr"], abs(bandpass_snr_db(a, b, rate) - reference.naive_bandpass_snr_db(a, b, rate)))
        t = rng.uniform(300, 2000, size=int(rng.integers(1, 30)))
        e = t + rng.normal(scale=50, size=t.size)
        worst["mpe"] = max(worst["mpe"], abs(mpe(e, t) - reference.naive_mpe(e, t)))
    x = rng.normal(size=500)
    exact = soi(x, x, 25.0) == 1.0 and mpe(x + 10, x + 10) == 0.0
    ok = max(worst.values()) <= 1e-9 and exact
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    check(4, ok, f"max deviation from direct-loop oracles: {detail}; SOI(x,x)=1 and MPE(x,x)=0 exact: {exact}")


def layer_kind(model, name):
    module = model.get_submodule(name.rsplit(".", 1)[0])
    return type(module).__name__


def test_5_gradient_correctness():
    rng = np.random.default_rng(5)
    torch.manual_seed(5)
    results = {}
    den = DenoiserModel(DenoiserConfig(attention_heads=1, embed=4, widths=(4, 4), bottleneck=4, kernel=3)).double()
    x = torch.as_tensor(rng.normal(size=(2, 6, 16)))
    m = torch.as_tensor((rng.random((2, 1, 16)) > 0.3).astype(float))
    t = torch.as_tensor(rng.normal(size=(2, 6, 16)))
    for name, err in gradient_check(den, lambda mod: mse_loss(mod, x, m, t), group_depth=9).items():
        results[f"denoiser.{name}"] = err
    rec = ReconstructorModel(ReconstructorConfig(d_model=4, heads=1, layers=1, ff=4, kernel=3, up_channels=4)).double()
    xr = torch.as_tensor(rng.normal(size=(2, 6, 12)))
    tr = torch.as_tensor(rng.normal(size=(2, 1, 48)))
    w = torch.as_tensor(RegionWeights().vector(48, [10, 30]))[None].repeat(2, 1)
    for name, err in gradient_check(rec, lambda mod: weighted_loss(mod, xr, tr, w), group_depth=9).items():
        results[f"reconstructor.{name}"] = err
    kinds = {}
    for name, err in results.items():
        model = den if name.startswith("denoiser.") else rec
        pname = name.split(".", 1)[1]
        kind = "Parameter" if "." not in pname else layer_kind(model, pname)
        kinds[kind] = max(kinds.get(kind, 0.0), err)
    required = {"MultiheadAttention", "Conv1d", "ConvTranspose1d", "Linear", "LayerNorm"}
    ok = den.n_parameters <= 1000 and rec.n_parameters <= 1000 and required <= set(kinds) and max(kinds.values()) < 1e-3
    detail = ", ".join(f"{k} {v:.1e}" for k, v in sorted(kinds.items()))
    check(5, ok, f"max relative gradient error per layer type: {detail}")


@pytest.mark.slow
def test_6_end_to_end_accuracy(acceptance_run):
    block = acceptance_run["summary"]["scenarios"]["anc"]
    full, base = block["variants"]["full"], block["variants"]["interp-only"]
    hr = full["mpe_hr_pct"]["median_over_subjects"]
    ibi = full["mpe_ibi_pct"]["median_over_subjects"]
    gain = full["bcg_similarity"]["mean"] - base["bcg_similarity"]["mean"]
    minutes = acceptance_run["train_s"] / 60
    loss = block["channel"]["expected_loss"]
    ok = hr is not None and ibi is not None and hr < 5.0 and ibi < 5.0 and gain >= 0.1 and minutes <= 30
    check(6, ok, f"anc (~{loss:.0%} loss): HR MPE {hr:.2f} %, IBI MPE {ibi:.2f} % (median over subjects), "
                 f"similarity {full['bcg_similarity']['mean']:.3f} vs interp-only "
                 f"{base['bcg_similarity']['mean']:.3f} (gain {gain:+.3f}), trained in {minutes:.1f} min")


@pytest.mark.slow
def test_7_timing_fidelity(acceptance_run):
    full = acceptance_run["summary"]["scenarios"]["anc"]["variants"]["full"]
    frac = full.get("timing_within_1_sample", 0.0)
    n = full["n_windows"] - full["n_discarded"]
    check(7, frac >= 0.9, f"{frac:.1%} of {n} held-out windows within 1 output sample (need >= 90 %)")


@pytest.mark.slow
def test_8_fail_safe_at_scale(acceptance_run):
    block = acceptance_run["summary"]["scenarios"]["far_15m_wall"]
    ok, worst = True, 1.0
    for variant, b in block["variants"].items():
        worst = min(worst, b["discard_rate"])
        kept = b["n_windows"] - b["n_discarded"]
        counted = b.get("bcg_similarity", {}).get("n", 0)
        ok &= b["discard_rate"] >= 0.95 and counted <= kept
    check(8, ok, f"far_15m_wall discard rate {worst:.1%} (need >= 95 %), discards excluded from aggregates")


TINY = {
    "seed": 11,
    "population": {"n_subjects": 2, "duration_s": 20},
    "scenarios": ["anc"],
    "pipeline": {"variants": ["interp-only", "swt+ensemble", "full"]},
    "training": {
        "population": {"n_subjects": 3, "duration_s": 60, "seed_offset": 1},
        "folds": 3,
        "denoiser": {"epochs": 1, "arch": {"widths": [8, 8], "bottleneck": 8, "embed": 4}},
        "reconstructor": {"epochs": 1, "arch": {"d_model": 8, "ff": 16, "up_channels": 4, "layers": 1}},
    },
}


def run_tiny(out):
    cfg = parse_config({**TINY, "output_dir": str(out)}, env={})
    cli.cmd_synth(cfg)
    cli.cmd_train(cfg, "all", fold=1)
    cli.cmd_train(cfg, "all")
    cli.cmd_run(cfg)
    cli.cmd_report(cfg.out_path("results"))
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def test_9_determinism(tmp_path):
    a, b = run_tiny(tmp_path / "a"), run_tiny(tmp_path / "b")
    kinds = ("manifest.json", ".json", "report.csv", "report.txt", "results.jsonl", "summary.json", ".csv")
    diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    covered = [k for k in a if k.endswith(kinds)]
    has_all = any(k.endswith("manifest.json") for k in a) and any(k.endswith("report.csv") for k in a) \
        and any("models/" in k and k.endswith(".json") for k in a)
    check(9, not diff and has_all, f"{len(covered)} output files compared byte for byte, {len(diff)} differ"
                                   + (f": {diff[:3]}" if diff else ""))
