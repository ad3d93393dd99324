"""Experiment configuration: one JSON document, validated into dataclasses.

Validation errors raise :class:`ConfigError` carrying a dotted field path.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .ble_channel import SCENARIOS, TAU, BurstModel, LossScenario
from .errors import ConfigError, InvalidBandError
from .motion_synth import MOTION_DEFAULTS, MotionKind
from .neural.common import TrainConfig
from .neural.enhance import DenoiserConfig
from .neural.reconstruct import ReconstructorConfig, RegionWeights
from .pipeline import VARIANTS

OUTPUT_DIR_ENV = "EARCARDIO_OUTPUT_DIR"


def _expect(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {msg}", field=path)


def _number(d: dict, key: str, path: str, default=None, lo=None, hi=None, integer=False):
    v = d.get(key, default)
    p = f"{path}.{key}" if path else key
    _expect(v is not None, p, "is required")
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    _expect(ok and not isinstance(v, bool), p, f"must be {'an integer' if integer else 'a number'}")
    _expect(lo is None or v >= lo, p, f"must be >= {lo}")
    _expect(hi is None or v <= hi, p, f"must be <= {hi}")
    return v


def _no_unknown(d: dict, allowed, path: str) -> None:
    _expect(isinstance(d, dict), path or "<root>", "must be an object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        p = f"{path}.{extra[0]}" if path else extra[0]
        raise ConfigError(f"{p}: unknown field", field=p)


@dataclass
class PopulationSpec:
    n_subjects: int = 10
    duration_s: float = 60.0
    hr_range: tuple = (55.0, 95.0)
    seed_offset: int = 0

    @classmethod
    def parse(cls, d: dict, path: str) -> "PopulationSpec":
        _no_unknown(d, [f.name for f in fields(cls)], path)
        hr = d.get("hr_range", [55.0, 95.0])
        _expect(isinstance(hr, list) and len(hr) == 2 and 30 <= hr[0] <= hr[1] <= 220,
                f"{path}.hr_range", "must be [lo, hi] within [30, 220] BPM")
        return cls(_number(d, "n_subjects", path, 10, lo=1, integer=True),
                   float(_number(d, "duration_s", path, 60.0, lo=10.0)),
                   (float(hr[0]), float(hr[1])),
                   _number(d, "seed_offset", path, 0, lo=0, integer=True))


def _parse_motion(items, path: str) -> list[MotionKind]:
    _expect(isinstance(items, list), path, "must be a list")
    kinds = []
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        if isinstance(item, str):
            item = {"tag": item}
        _no_unknown(item, ["tag", "band_hz", "intensity_ratio"], p)
        tag = item.get("tag")
        _expect(tag in MOTION_DEFAULTS or tag == "custom", f"{p}.tag", f"unknown motion kind {tag!r}")
        try:
            if tag == "custom":
                _expect("band_hz" in item and "intensity_ratio" in item, p, "custom motion needs band_hz and intensity_ratio")
                kinds.append(MotionKind(tag, tuple(item["band_hz"]), float(item["intensity_ratio"])))
            else:
                base = MotionKind.default(tag, item.get("intensity_ratio"))
                band = tuple(item["band_hz"]) if "band_hz" in item else base.band_hz
                kinds.append(MotionKind(tag, band, base.intensity_ratio))
        except (ValueError, InvalidBandError) as exc:
            raise ConfigError(f"{p}: {exc}", field=p) from None
    return kinds


def _parse_scenarios(items, path: str) -> list[LossScenario]:
    _expect(isinstance(items, list) and items, path, "must be a non-empty list")
    out = []
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        if isinstance(item, str):
            _expect(item in SCENARIOS, p, f"unknown scenario {item!r}; known: {', '.join(SCENARIOS)}")
            out.append(SCENARIOS[item])
            continue
        _no_unknown(item, ["tag", "iid_loss_p", "burst"], p)
        try:
            burst = item.get("burst")
            if burst is not None:
                _no_unknown(burst, ["enter_p", "len_mean"], f"{p}.burst")
                burst = BurstModel(float(burst["enter_p"]), float(burst.get("len_mean", 3.0)))
            out.append(LossScenario(str(item.get("tag", "custom")), float(_number(item, "iid_loss_p", p)), burst))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{p}: {exc}", field=p) from None
    tags = [s.tag for s in out]
    _expect(len(set(tags)) == len(tags), path, "scenario tags must be unique")
    return out


@dataclass
class StageSpec:
    train: TrainConfig = field(default_factory=TrainConfig)
    arch: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, d: dict, path: str, arch_cls, extra=()) -> "StageSpec":
        allowed = list(TrainConfig.__dataclass_fields__) + ["arch", *extra]
        _no_unknown(d, allowed, path)
        for k in ("epochs", "batch_size", "seed", "num_threads"):
            if k in d:
                _number(d, k, path, lo=1 if k != "seed" else 0, integer=True)
        for k in ("lr", "grad_clip", "lr_decay"):
            if k in d:
                _number(d, k, path, lo=0.0)
        arch = d.get("arch", {})
        _no_unknown(arch, list(arch_cls.__dataclass_fields__), f"{path}.arch")
        return cls(TrainConfig.from_dict(d), arch)


@dataclass
class TrainingSpec:
    population: PopulationSpec = field(default_factory=lambda: PopulationSpec(16, 120.0, seed_offset=1))
    folds: int = 1
    window_hop_s: float = 1.0
    loss_range: tuple = (0.0, 0.5)
    denoiser: StageSpec = field(default_factory=StageSpec)
    reconstructor: StageSpec = field(default_factory=StageSpec)
    region_weights: RegionWeights = field(default_factory=RegionWeights)
    reconstructor_on_denoised: bool = True
    sign_flip: bool = True

    @classmethod
    def parse(cls, d: dict, path: str) -> "TrainingSpec":
        _no_unknown(d, [f.name for f in fields(cls)], path)
        lr = d.get("loss_range", [0.0, 0.5])
        _expect(isinstance(lr, list) and len(lr) == 2 and 0 <= lr[0] <= lr[1] < 1, f"{path}.loss_range",
                "must be [lo, hi] with 0 <= lo <= hi < 1")
        rw = d.get("region_weights", {})
        _no_unknown(rw, ["alpha", "delta_ms"], f"{path}.region_weights")
        pop = PopulationSpec.parse(d.get("population", {"n_subjects": 16, "duration_s": 120.0, "seed_offset": 1}),
                                   f"{path}.population")
        flags = {}
        for key in ("reconstructor_on_denoised", "sign_flip"):
            flags[key] = d.get(key, True)
            _expect(isinstance(flags[key], bool), f"{path}.{key}", "must be true or false")
        return cls(
            pop,
            _number(d, "folds", path, 1, lo=1, hi=pop.n_subjects, integer=True),
            float(_number(d, "window_hop_s", path, 1.0, lo=0.04)),
            (float(lr[0]), float(lr[1])),
            StageSpec.parse(d.get("denoiser", {}), f"{path}.denoiser", DenoiserConfig),
            StageSpec.parse(d.get("reconstructor", {}), f"{path}.reconstructor", ReconstructorConfig),
            RegionWeights(float(_number(rw, "alpha", f"{path}.region_weights", 4.0, lo=0.0)),
                          float(_number(rw, "delta_ms", f"{path}.region_weights", 50.0, lo=0.0))),
            flags["reconstructor_on_denoised"],
            flags["sign_flip"],
        )


@dataclass
class PipelineSpec:
    variants: tuple = ("interp-only", "full")
    window_s: float = 5.0
    hop_s: float = 2.5
    tau: float = TAU

    @classmethod
    def parse(cls, d: dict, path: str) -> "PipelineSpec":
        _no_unknown(d, [f.name for f in fields(cls)], path)
        variants = d.get("variants", ["interp-only", "full"])
        _expect(isinstance(variants, list) and variants, f"{path}.variants", "must be a non-empty list")
        for i, v in enumerate(variants):
            _expect(v in VARIANTS, f"{path}.variants[{i}]", f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
        window = float(_number(d, "window_s", path, 5.0))
        _expect(window == 5.0, f"{path}.window_s", "models take 5 s windows")
        hop = float(_number(d, "hop_s", path, 2.5, lo=0.04, hi=window))
        return cls(tuple(variants), window, hop, float(_number(d, "tau", path, TAU, lo=0.0, hi=1.0)))


@dataclass
class ExperimentConfig:
    seed: int
    population: PopulationSpec = field(default_factory=PopulationSpec)
    motion: list = field(default_factory=lambda: [MotionKind.default("speak")])
    scenarios: list = field(default_factory=lambda: [SCENARIOS["anc"]])
    pipeline: PipelineSpec = field(default_factory=PipelineSpec)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    output_dir: str = "out"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def out_path(self, *parts) -> Path:
        return Path(self.output_dir, *parts)


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON, ignoring where outputs are written."""
    body = {k: v for k, v in raw.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def parse_config(d: dict, env=None) -> ExperimentConfig:
    env = os.environ if env is None else env
    _no_unknown(d, ["seed", "population", "motion", "scenarios", "pipeline", "training", "output_dir"], "")
    _expect("seed" in d, "seed", "is required (no implicit entropy)")
    seed = _number(d, "seed", "", lo=0, integer=True)
    out = env.get(OUTPUT_DIR_ENV) or d.get("output_dir", "out")
    _expect(isinstance(out, str) and out, "output_dir", "must be a non-empty string")
    return ExperimentConfig(
        seed=seed,
        population=PopulationSpec.parse(d.get("population", {}), "population"),
        motion=_parse_motion(d.get("motion", ["speak"]), "motion"),
        scenarios=_parse_scenarios(d.get("scenarios", ["anc"]), "scenarios"),
        pipeline=PipelineSpec.parse(d.get("pipeline", {}), "pipeline"),
        training=TrainingSpec.parse(d.get("training", {}), "training"),
        output_dir=out,
        raw=json.loads(json.dumps(d)),
    )


def load_config(path, env=None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", field="<file>") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", field="<file>") from None
    return parse_config(d, env)


def scenario_dict(s: LossScenario) -> dict:
    return {"tag": s.tag, "iid_loss_p": s.iid_loss_p,
            "burst": asdict(s.burst) if s.burst else None, "expected_loss": s.expected_loss}
