"""Command line entry point: ``earcardio {synth,train,run,report} CONFIG``.

Exit codes: 0 success, 2 config error, 3 data error, 4 training failure.
Outputs go under the config's ``output_dir`` (overridable with the
EARCARDIO_OUTPUT_DIR environment variable):

    corpus/{train,eval}/   synthetic quadruples + manifest
    models/[fold_k/]       checkpoints + loss-curve CSVs
    results/               per-window JSONL, summary JSON, report tables
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .ble_channel import replay_windows, transmit
from .config import ExperimentConfig, load_config, scenario_dict
from .corpus import dumps, load_corpus, read_manifest, synth_corpus
from .errors import ConfigError, DataError, EarCardioError, TrainingFailureError
from .metrics import mpe
from .neural.common import TrainConfig, finite_or_raise, read_checkpoint, save_checkpoint
from .neural.enhance import (DenoiserConfig, as_batch, denoiser_forward, load_denoiser, mse_loss,
                             train_denoiser)
from .neural.reconstruct import (ReconstructorConfig, corpus_tensors, load_reconstructor, train_reconstructor,
                                 weighted_loss)
from .pipeline import (NEURAL_VARIANTS, Models, denoiser_windows, evaluate_window, flip_channel_signs,
                       reconstructor_pairs, summarize, training_starts, window_truth)

RESULTS_FILE = "results.jsonl"
SUMMARY_FILE = "summary.json"


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def corpus_dir(cfg: ExperimentConfig, split: str) -> Path:
    return cfg.out_path("corpus", split)


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output_dir: cannot create {path}: {exc.strerror}", field="output_dir") from None
    return path


# --- synth --------------------------------------------------------------------

def cmd_synth(cfg: ExperimentConfig, splits=("eval", "train")) -> dict:
    """Write the evaluation and training corpora; returns split -> manifest."""
    out = {}
    for split in splits:
        pop = cfg.population if split == "eval" else cfg.training.population
        d = _mkdir(corpus_dir(cfg, split))
        seed = derive_seed(cfg.seed, 0 if split == "eval" else 1, pop.seed_offset)
        try:
            out[split] = synth_corpus(d, seed, pop.n_subjects, pop.duration_s, cfg.motion, pop.hr_range, cfg.hash)
        except OSError as exc:
            raise ConfigError(f"output_dir: cannot write corpus: {exc}", field="output_dir") from None
    return out


# --- train --------------------------------------------------------------------

def fold_assignment(ids, k: int, seed: int) -> list[list[str]]:
    """Subject-disjoint folds, deterministic in ``seed``."""
    ids = sorted(ids)
    if not 1 <= k <= len(ids):
        raise DataError(f"cannot split {len(ids)} subjects into {k} folds")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return [sorted(ids[i] for i in part) for part in np.array_split(perm, k)]


def _hop_slots(cfg: ExperimentConfig, rate_hz: float) -> int:
    return max(1, int(round(cfg.training.window_hop_s * rate_hz)))


def _denoiser_corpus(cfg, subjects, indices):
    corpus = []
    for s, i in zip(subjects, indices):
        rng = np.random.default_rng(derive_seed(cfg.seed, 2, i))
        corpus += denoiser_windows(s.mixed, s.clean, rng, _hop_slots(cfg, s.mixed.nominal_rate_hz),
                                   loss_range=cfg.training.loss_range)
    return corpus


def _reconstructor_corpus(cfg, subjects, indices, denoiser):
    pairs = []
    for s, i in zip(subjects, indices):
        starts = list(training_starts(len(s.clean), 125, _hop_slots(cfg, s.clean.nominal_rate_hz)))
        clean = [s.clean.window(st, 125).values.T for st in starts]
        subject_pairs = reconstructor_pairs(clean, s.scg, s.anchors_ms, starts)
        if denoiser is not None:
            windows = _denoiser_corpus(cfg, [s], [i])
            ys = denoiser_forward(denoiser, [w[0] for w in windows])
            subject_pairs += reconstructor_pairs(list(ys), s.scg, s.anchors_ms, starts)
        if cfg.training.sign_flip:
            subject_pairs = flip_channel_signs(subject_pairs, np.random.default_rng(derive_seed(cfg.seed, 7, i)))
        pairs += subject_pairs
    return pairs


def _write_loss_csv(path: Path, train, val) -> None:
    finite_or_raise(train, "training loss")
    finite_or_raise(val, "validation loss")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss"])
    for e, loss in enumerate(train):
        w.writerow([e, repr(float(loss)), repr(float(val[e])) if e < len(val) else ""])
    path.write_text(buf.getvalue())


def _split(cfg, subjects, fold):
    ids = [s.id for s in subjects]
    if fold is None:
        return list(range(len(subjects))), []
    folds = fold_assignment(ids, cfg.training.folds, derive_seed(cfg.seed, 4))
    if not 0 <= fold < len(folds):
        raise ConfigError(f"fold {fold} out of range for {len(folds)} folds", field="training.folds")
    held = set(folds[fold])
    return [i for i, s in enumerate(subjects) if s.id not in held], [i for i, s in enumerate(subjects) if s.id in held]


def models_dir(cfg: ExperimentConfig, fold=None, base=None) -> Path:
    base = Path(base) if base else cfg.out_path("models")
    return base if fold is None else base / f"fold_{fold}"


def cmd_train(cfg: ExperimentConfig, stage: str = "all", fold: int | None = None, corpus=None,
              models=None) -> dict:
    """Train ``stage`` (denoiser, reconstructor or all); returns stage -> checkpoint path."""
    if stage not in ("denoiser", "reconstructor", "all"):
        raise ConfigError(f"unknown stage {stage!r}", field="stage")
    src = Path(corpus) if corpus else corpus_dir(cfg, "train")
    subjects = load_corpus(src)
    train_idx, val_idx = _split(cfg, subjects, fold)
    tr = [subjects[i] for i in train_idx]
    va = [subjects[i] for i in val_idx]
    out = _mkdir(models_dir(cfg, fold, models))
    meta = {"config_hash": cfg.hash, "code_version": __version__, "fold": fold,
            "train_subjects": [s.id for s in tr], "held_out_subjects": [s.id for s in va]}
    written = {}
    if stage in ("denoiser", "all"):
        spec = cfg.training.denoiser
        tcfg = TrainConfig(**{**spec.train.__dict__, "seed": derive_seed(cfg.seed, 5, spec.train.seed) % 2**31})
        corpus_tr = _denoiser_corpus(cfg, tr, train_idx)
        val_hist = []
        if va:
            val_corpus = _denoiser_corpus(cfg, va, val_idx)

            def on_epoch(epoch, model):
                x, m = as_batch(model, [c[0] for c in val_corpus])
                t = x.new_tensor(np.stack([c[1] for c in val_corpus]))
                model.eval()
                with torch.no_grad():
                    val_hist.append(float(mse_loss(model, x, m, t)))
        else:
            on_epoch = None
        trained = train_denoiser(corpus_tr, tcfg, DenoiserConfig.from_dict(spec.arch), on_epoch=on_epoch)
        trained.extra.update(meta, n_windows=len(corpus_tr))
        _write_loss_csv(out / "denoiser_loss.csv", trained.history, val_hist)
        save_checkpoint(out / "denoiser.json", trained.checkpoint())
        written["denoiser"] = out / "denoiser.json"
    if stage in ("reconstructor", "all"):
        spec = cfg.training.reconstructor
        tcfg = TrainConfig(**{**spec.train.__dict__, "seed": derive_seed(cfg.seed, 6, spec.train.seed) % 2**31})
        denoiser = None
        if cfg.training.reconstructor_on_denoised:
            denoiser = _load_model(out / "denoiser.json", load_denoiser, "denoiser", fold)
        corpus_tr = _reconstructor_corpus(cfg, tr, train_idx, denoiser)
        val_hist = []
        on_epoch = None
        if va:
            val_pairs = _reconstructor_corpus(cfg, va, val_idx, denoiser)

            def on_epoch(epoch, model):
                x, t, w = corpus_tensors(model, val_pairs, cfg.training.region_weights)
                model.eval()
                with torch.no_grad():
                    val_hist.append(float(weighted_loss(model, x, t, w)))
        trained = train_reconstructor(corpus_tr, tcfg, ReconstructorConfig.from_dict(spec.arch),
                                      cfg.training.region_weights, on_epoch=on_epoch)
        trained.extra.update(meta, n_windows=len(corpus_tr),
                             trained_on_denoised=cfg.training.reconstructor_on_denoised,
                             sign_flip=cfg.training.sign_flip)
        _write_loss_csv(out / "reconstructor_loss.csv", trained.history, val_hist)
        save_checkpoint(out / "reconstructor.json", trained.checkpoint())
        written["reconstructor"] = out / "reconstructor.json"
    return written


def _load_model(path: Path, loader, stage: str, fold=None):
    if not path.exists():
        fold_arg = "" if fold is None else f" --fold {fold}"
        raise DataError(f"missing checkpoint {path}; create it with `earcardio train CONFIG --stage {stage}{fold_arg}`")
    try:
        return loader(read_checkpoint(path))
    except (ValueError, KeyError) as exc:
        raise DataError(f"unreadable checkpoint {path}: {exc}") from None


# --- run ----------------------------------------------------------------------

def _subject_mpe(records) -> tuple[float | None, float | None]:
    hr = [(r["hr_est"], r["hr_true"]) for r in records if r.get("hr_est") and r.get("hr_true")]
    ibi = [p for r in records for p in r.get("ibi_pairs", [])]
    mh = mpe([a for a, _ in hr], [b for _, b in hr]) if hr else None
    mi = mpe([a for a, _ in ibi], [b for _, b in ibi]) if ibi else None
    return mh, mi


def _summary_block(records: list) -> dict:
    block = summarize(records)
    kept = [r for r in records if not r.get("discard")]
    by_subject = defaultdict(list)
    for r in kept:
        by_subject[r["subject"]].append(r)
    per = {sid: _subject_mpe(rs) for sid, rs in sorted(by_subject.items())}
    for k, idx in (("mpe_hr_pct", 0), ("mpe_ibi_pct", 1)):
        vals = {sid: v[idx] for sid, v in per.items() if v[idx] is not None}
        arr = np.array(list(vals.values()), dtype=float)
        block[k] = {"median_over_subjects": float(np.median(arr)) if arr.size else None,
                    "mean_over_subjects": float(np.mean(arr)) if arr.size else None,
                    "per_subject": vals}
    lags = [r["anchor_lag"] for r in kept if "anchor_lag" in r]
    if lags:
        # windows without detectable anchors count as failures
        block["timing_within_1_sample"] = float(np.mean([lag is not None and abs(lag) <= 1 for lag in lags]))
    return block


def cmd_run(cfg: ExperimentConfig, corpus=None, models=None, dump_taps: bool = False) -> dict:
    """Evaluate every configured variant and scenario; returns the summary dict."""
    src = Path(corpus) if corpus else corpus_dir(cfg, "eval")
    manifest = read_manifest(src)
    subjects = load_corpus(src)
    need = set(cfg.pipeline.variants) & set(NEURAL_VARIANTS)
    mdl = Models()
    mdir = models_dir(cfg, None, models)
    if need:
        mdl.denoiser = _load_model(mdir / "denoiser.json", load_denoiser, "denoiser")
    if "full" in need:
        mdl.reconstructor = _load_model(mdir / "reconstructor.json", load_reconstructor, "reconstructor")
    out = _mkdir(cfg.out_path("results"))
    prov = {"config_hash": cfg.hash, "code_version": __version__}
    lines, taps = [], []
    summary = {**prov, "corpus_config_hash": manifest.get("config_hash"),
               "window_policy": {"window_s": cfg.pipeline.window_s, "hop_s": cfg.pipeline.hop_s,
                                 "note": "evaluation window and hop are assumed defaults"},
               "tau": cfg.pipeline.tau, "scenarios": {}}
    for si, scen in enumerate(cfg.scenarios):
        windows = []
        for i, s in enumerate(subjects):
            trace = transmit(s.mixed, scen, derive_seed(cfg.seed, 3, si, i))
            windows.append(list(replay_windows(trace, cfg.pipeline.window_s, cfg.pipeline.hop_s, cfg.pipeline.tau)))
        block = {"channel": scenario_dict(scen), "variants": {}}
        for variant in cfg.pipeline.variants:
            recs = []
            for s, sw in zip(subjects, windows):
                for rw in sw:
                    truth = window_truth(s.clean, s.anchors_ms, s.scg, rw.start_slot, len(rw.series))
                    rec = evaluate_window(rw, variant, truth, mdl, keep_taps=dump_taps)
                    tap = rec.pop("_taps", None)
                    rec = {"scenario": scen.tag, "subject": s.id, **rec, **prov}
                    recs.append(rec)
                    if tap:
                        taps.append({"scenario": scen.tag, "variant": variant, "subject": s.id,
                                     "window": rw.index, "taps": {k: np.round(v, 12).tolist() for k, v in tap.items()}})
            lines += recs
            block["variants"][variant] = _summary_block(recs)
        summary["scenarios"][scen.tag] = block
    (out / RESULTS_FILE).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in lines))
    (out / SUMMARY_FILE).write_text(dumps(summary))
    if dump_taps:
        (out / "taps.jsonl").write_text("".join(json.dumps(t, sort_keys=True) + "\n" for t in taps))
    return summary


# --- report -------------------------------------------------------------------

REPORT_COLUMNS = ["scenario", "variant", "n_windows", "discard_rate", "similarity", "scg_similarity", "soi",
                  "mpe_hr_pct", "mpe_ibi_pct"]


def read_results(results_dir) -> list[dict]:
    path = Path(results_dir) / RESULTS_FILE
    if not path.exists():
        raise DataError(f"no {RESULTS_FILE} in {results_dir}; run `earcardio run CONFIG` first")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def report_rows(records: list) -> list[dict]:
    groups = defaultdict(list)
    for r in records:
        groups[(r["scenario"], r["variant"])].append(r)
    rows = []
    for (scen, variant), recs in sorted(groups.items()):
        kept = [r for r in recs if not r.get("discard")]

        def mean(key):
            v = [r[key] for r in kept if r.get(key) is not None]
            return float(np.mean(v)) if v else None

        mh, mi = _subject_mpe(kept)
        rows.append({"scenario": scen, "variant": variant, "n_windows": len(recs),
                     "discard_rate": (len(recs) - len(kept)) / len(recs),
                     "similarity": mean("bcg_similarity"), "scg_similarity": mean("scg_similarity"),
                     "soi": mean("soi"), "mpe_hr_pct": mh, "mpe_ibi_pct": mi})
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def cmd_report(results_dir) -> str:
    """Aggregate results JSONL into report.csv / report.txt; returns the text table."""
    records = read_results(results_dir)
    if not records:
        raise DataError(f"{results_dir}/{RESULTS_FILE} is empty; nothing to report")
    hashes = sorted({r.get("config_hash", "") for r in records})
    versions = sorted({r.get("code_version", "") for r in records})
    rows = report_rows(records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS + ["config_hash", "code_version"])
    for row in rows:
        w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS] + [";".join(hashes), ";".join(versions)])
    out = Path(results_dir)
    (out / "report.csv").write_text(buf.getvalue())
    widths = [max(len(c), *(len(_fmt(r[c])) for r in rows)) for c in REPORT_COLUMNS]
    lines = [f"config {';'.join(hashes)}  version {';'.join(versions)}",
             "  ".join(c.ljust(wd) for c, wd in zip(REPORT_COLUMNS, widths))]
    lines += ["  ".join(_fmt(r[c]).ljust(wd) for c, wd in zip(REPORT_COLUMNS, widths)) for r in rows]
    text = "\n".join(line.rstrip() for line in lines) + "\n"
    (out / "report.txt").write_text(text)
    return text


# --- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="earcardio", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"earcardio {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="suppress progress output")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="generate the synthetic corpora")
    s.add_argument("config")
    s.add_argument("--split", choices=["eval", "train", "both"], default="both")
    t = sub.add_parser("train", parents=[common], help="train the denoiser and/or reconstructor")
    t.add_argument("config")
    t.add_argument("--stage", choices=["denoiser", "reconstructor", "all"], default="all")
    t.add_argument("--fold", type=int, default=None, help="hold out this fold (default: train on all subjects)")
    t.add_argument("--corpus", help="training corpus directory")
    t.add_argument("--models", help="checkpoint directory")
    r = sub.add_parser("run", parents=[common], help="evaluate pipeline variants on the eval corpus")
    r.add_argument("config")
    r.add_argument("--corpus", help="evaluation corpus directory")
    r.add_argument("--models", help="checkpoint directory")
    r.add_argument("--dump-taps", action="store_true", help="write every stage's output to taps.jsonl")
    rep = sub.add_parser("report", parents=[common], help="summarise a results directory")
    rep.add_argument("results_dir")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else print
    try:
        if args.command == "report":
            say(cmd_report(args.results_dir), end="")
            return 0
        cfg = load_config(args.config)
        if args.command == "synth":
            splits = ("eval", "train") if args.split == "both" else (args.split,)
            for split, m in cmd_synth(cfg, splits).items():
                say(f"{split}: {len(m['entries'])} subjects -> {corpus_dir(cfg, split)}")
        elif args.command == "train":
            for stage, path in cmd_train(cfg, args.stage, args.fold, args.corpus, args.models).items():
                say(f"{stage}: {path}")
        elif args.command == "run":
            summary = cmd_run(cfg, args.corpus, args.models, args.dump_taps)
            for tag, block in summary["scenarios"].items():
                for variant, b in block["variants"].items():
                    sim = b.get("bcg_similarity", {}).get("median")
                    say(f"{tag:>14} {variant:>13}  discard {b['discard_rate']:.3f}  "
                        f"similarity {sim if sim is None else round(sim, 4)}  "
                        f"HR MPE {b['mpe_hr_pct']['median_over_subjects']}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingFailureError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 4
    except (DataError, EarCardioError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
