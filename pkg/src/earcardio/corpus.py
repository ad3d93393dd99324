"""On-disk synthetic corpus: clean/motion/mixed CSVs, ground-truth sidecars, manifest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bcg_synth import profile_to_dict, sample_population, synth_subject
from .errors import DataError
from .motion_synth import group_rms, mix, synth_motion
from .signal_core import ImuSeries, read_scg_csv, read_trace_csv, write_scg_csv, write_trace_csv

MANIFEST = "manifest.json"
CORPUS_FORMAT = "earcardio.corpus"


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


@dataclass
class Subject:
    """One corpus entry loaded back into memory."""

    id: str
    clean: ImuSeries
    motion: ImuSeries
    mixed: ImuSeries
    anchors_ms: np.ndarray
    beat_onsets_ms: np.ndarray
    scg: np.ndarray
    scg_rate_hz: float
    truth: dict


def subject_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])


def synth_corpus(out_dir, seed: int, n_subjects: int, duration_s: float, motion_kinds,
                 hr_range=(55.0, 95.0), config_hash: str = "") -> dict:
    """Write ``n_subjects`` quadruples and a manifest; returns the manifest dict.

    ``motion_kinds`` is a list of :class:`MotionKind`, assigned round-robin;
    an empty list gives motion-free traces.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    profiles = sample_population(n_subjects, seed, hr_range)
    entries = []
    for i, profile in enumerate(profiles):
        sid = f"s{i:03d}"
        s_seed = subject_seed(seed, i)
        obs, truth = synth_subject(s_seed, duration_s, profile)
        kind = motion_kinds[i % len(motion_kinds)] if motion_kinds else None
        if kind is None:
            motion = ImuSeries.from_array(np.zeros_like(obs.values), obs.nominal_rate_hz)
        else:
            # motion intensity relative to this subject's own BCG
            ref = group_rms(truth.clean_series.values)
            motion = synth_motion(kind, len(obs) / obs.nominal_rate_hz, s_seed + 1, reference_rms=ref)
        mixed = mix(obs, motion)
        files = {k: f"{sid}_{k}.csv" for k in ("clean", "motion", "mixed", "scg")}
        write_trace_csv(mixed.clean, out / files["clean"])
        write_trace_csv(mixed.motion, out / files["motion"])
        write_trace_csv(mixed.observed, out / files["mixed"])
        write_scg_csv(truth.scg_ref, truth.clean_series.nominal_rate_hz, out / files["scg"])
        sidecar = {
            "subject": sid,
            "seed": s_seed,
            "rate_hz": obs.nominal_rate_hz,
            "scg_rate_hz": truth.clean_series.nominal_rate_hz,
            "beat_onsets_ms": list(truth.beat_onsets_ms),
            "ibi_ms": list(truth.ibi_ms),
            "anchor_offset_ms": truth.anchor_offset_ms,
            "motion": None if kind is None else {"tag": kind.tag, "band_hz": list(kind.band_hz),
                                                 "intensity_ratio": kind.intensity_ratio},
            "profile": profile_to_dict(profile),
            "scg": files["scg"],
        }
        truth_file = f"{sid}_truth.json"
        (out / truth_file).write_text(dumps(sidecar))
        entries.append({"id": sid, "clean": files["clean"], "motion": files["motion"],
                        "mixed": files["mixed"], "ground_truth": truth_file})
    manifest = {
        "format": CORPUS_FORMAT,
        "version": 1,
        "code_version": __version__,
        "config_hash": config_hash,
        "seed": seed,
        "duration_s": duration_s,
        "entries": entries,
    }
    (out / MANIFEST).write_text(dumps(manifest))
    return manifest


def read_manifest(corpus_dir) -> dict:
    path = Path(corpus_dir) / MANIFEST
    if not path.exists():
        raise DataError(f"no {MANIFEST} in {corpus_dir}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != CORPUS_FORMAT:
        raise DataError(f"{path} is not a corpus manifest")
    return manifest


def load_subject(corpus_dir, entry: dict) -> Subject:
    d = Path(corpus_dir)
    truth = json.loads((d / entry["ground_truth"]).read_text())
    rate = truth["rate_hz"]
    clean = read_trace_csv(d / entry["clean"], nominal_rate_hz=rate, start_ms=0)
    motion = read_trace_csv(d / entry["motion"], nominal_rate_hz=rate, start_ms=0)
    mixed = read_trace_csv(d / entry["mixed"], nominal_rate_hz=rate, start_ms=0)
    _, scg = read_scg_csv(d / truth["scg"])
    onsets = np.asarray(truth["beat_onsets_ms"], dtype=float)
    return Subject(entry["id"], clean, motion, mixed, onsets + truth["anchor_offset_ms"], onsets, scg,
                   truth["scg_rate_hz"], truth)


def load_corpus(corpus_dir) -> list[Subject]:
    manifest = read_manifest(corpus_dir)
    return [load_subject(corpus_dir, e) for e in manifest["entries"]]
