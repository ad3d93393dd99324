"""BCG (6 x 125 @ 25 Hz) to SCG (500 @ 100 Hz) super-resolution.

Conv features -> self-attention blocks over time -> stride-4 transposed
convolution (each input slot emits exactly four output samples, so beat
timing cannot drift) -> replaceable per-sample linear task head.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from ..errors import InsufficientCorpusError, HeadShapeError, NumericGuardError
from ..signal_core import detect_beats
from .common import (TrainConfig, checkpoint_dict, count_parameters, fit, guard_finite, guard_parameters,
                     hparams_dict, state_from_checkpoint)

UPSAMPLE = 4
OUTPUT_RATE_HZ = 100.0
INPUT_SLOTS = 125
OUTPUT_SAMPLES = UPSAMPLE * INPUT_SLOTS
MIN_CORPUS = 100
MIN_FEWSHOT = 10


@dataclass(frozen=True)
class ScgWaveform:
    samples: np.ndarray
    rate_hz: float = OUTPUT_RATE_HZ
    beat_annotations: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).reshape(-1)
        if not np.all(np.isfinite(s)):
            raise NumericGuardError("SCG waveform contains non-finite samples")
        object.__setattr__(self, "samples", s)
        if self.beat_annotations is not None:
            object.__setattr__(self, "beat_annotations", np.asarray(self.beat_annotations, dtype=np.int64))

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class RegionWeights:
    alpha: float = 4.0
    delta_ms: float = 50.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    def vector(self, n: int, peaks, rate_hz: float = OUTPUT_RATE_HZ) -> np.ndarray:
        """w(t) = 1 + alpha * [distance to the nearest peak <= delta]."""
        w = np.ones(n)
        peaks = np.asarray(peaks, dtype=float).reshape(-1)
        if peaks.size:
            t = np.arange(n, dtype=float)
            dist_ms = np.min(np.abs(t[:, None] - peaks[None, :]), axis=1) * 1000.0 / rate_hz
            w += self.alpha * (dist_ms <= self.delta_ms + 1e-9)
        return w


def region_focused_loss(pred, target, weights: RegionWeights, target_peaks) -> float:
    """Mean of w(t) * (pred - target)^2 with peak-region emphasis."""
    p = pred.samples if isinstance(pred, ScgWaveform) else np.asarray(pred, dtype=float).ravel()
    t = target.samples if isinstance(target, ScgWaveform) else np.asarray(target, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch {p.shape} vs {t.shape}")
    rate = target.rate_hz if isinstance(target, ScgWaveform) else OUTPUT_RATE_HZ
    peaks = np.asarray(target_peaks).reshape(-1)
    if peaks.size and (peaks.min() < 0 or peaks.max() >= t.size):
        raise ValueError("target peaks out of range")
    w = weights.vector(t.size, peaks, rate)
    return float(np.mean(w * (p - t) ** 2))


@dataclass
class ReconstructorConfig:
    d_model: int = 32
    heads: int = 4
    layers: int = 2
    ff: int = 64
    kernel: int = 5
    up_channels: int = 16
    head_out: int = 1
    n_channels: int = 6

    @classmethod
    def from_dict(cls, d: dict) -> "ReconstructorConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def sinusoidal_encoding(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe


class AttentionBlock(nn.Module):
    def __init__(self, d: int, heads: int, ff: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, ff), nn.GELU(), nn.Linear(ff, d))

    def forward(self, x):
        h = self.norm1(x)
        a, _ = self.attn(h, h, h, need_weights=False)
        x = x + a
        return x + self.ff(self.norm2(x))


class ReconstructorModel(nn.Module):
    def __init__(self, cfg: ReconstructorConfig | None = None):
        super().__init__()
        cfg = cfg or ReconstructorConfig()
        self.cfg = cfg
        d, k = cfg.d_model, cfg.kernel
        self.features = nn.Sequential(
            nn.Conv1d(cfg.n_channels, d, k, padding=k // 2), nn.GELU(),
            nn.Conv1d(d, d, k, padding=k // 2), nn.GELU())
        self.blocks = nn.ModuleList(AttentionBlock(d, cfg.heads, cfg.ff) for _ in range(cfg.layers))
        self.upsampler = nn.Sequential(
            nn.ConvTranspose1d(d, cfg.up_channels, UPSAMPLE, stride=UPSAMPLE), nn.GELU(),
            nn.Conv1d(cfg.up_channels, cfg.up_channels, k, padding=k // 2), nn.GELU())
        self.task_head = nn.Linear(cfg.up_channels, cfg.head_out)
        self.task_id = "scg"
        self.register_buffer("pos", sinusoidal_encoding(4096, d).float(), persistent=False)

    def embed(self, x):
        """Everything except the task head: (B, 6, T) -> (B, 4T, up_channels)."""
        h = self.features(x).transpose(1, 2)
        h = h + self.pos[: h.shape[1]].to(h.dtype)
        for blk in self.blocks:
            h = blk(h)
        return self.upsampler(h.transpose(1, 2)).transpose(1, 2)

    def forward(self, x):
        return self.task_head(self.embed(x)).transpose(1, 2)

    @property
    def n_parameters(self) -> int:
        return count_parameters(self)

    def head_dims(self) -> tuple[int, int]:
        return self.task_head.in_features, self.task_head.out_features


def _windows_tensor(model, windows) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    return torch.as_tensor(np.asarray(windows, dtype=float), dtype=dtype)


def reconstructor_forward(model: ReconstructorModel, window, annotate: bool = True):
    """6 x 125 window(s) -> :class:`ScgWaveform` (or a list for a batch)."""
    w = np.asarray(window, dtype=float)
    single = w.ndim == 2
    if single:
        w = w[None]
    if w.shape[1] != model.cfg.n_channels:
        raise ValueError(f"expected {model.cfg.n_channels} input channels, got {w.shape[1]}")
    guard_finite("reconstructor input", w)
    guard_parameters(model)
    model.eval()
    with torch.no_grad():
        y = model(_windows_tensor(model, w)).double().numpy()
    if not np.all(np.isfinite(y)):
        raise NumericGuardError("reconstructor produced non-finite output")
    assert y.shape[-1] == UPSAMPLE * w.shape[-1]
    out = []
    for row in y:
        ann = detect_beats(row[0], OUTPUT_RATE_HZ) if annotate else None
        out.append(ScgWaveform(row[0], OUTPUT_RATE_HZ, ann))
    return out[0] if single else out


def _weights_tensor(corpus, weights: RegionWeights, n: int, dtype) -> torch.Tensor:
    return torch.as_tensor(np.stack([weights.vector(n, c[2]) for c in corpus]), dtype=dtype)


def weighted_loss(model, x, target, w):
    pred = model(x)
    return torch.mean(w[:, None, :] * (pred - target) ** 2)


@dataclass
class TrainedReconstructor:
    model: ReconstructorModel
    history: list
    seed: int
    task_heads: dict = field(default_factory=lambda: {"scg": [16, 1]})
    extra: dict = field(default_factory=dict)

    def checkpoint(self) -> dict:
        return checkpoint_dict(self.model, "reconstructor", hparams_dict(self.model.cfg), self.seed,
                               {"loss_curve": self.history, "task_id": self.model.task_id,
                                "task_heads": self.task_heads, **self.extra})


def corpus_tensors(model, corpus, weights):
    x = _windows_tensor(model, [c[0] for c in corpus])
    targets = np.stack([np.asarray(c[1], dtype=float).reshape(-1, OUTPUT_SAMPLES) for c in corpus])
    target = torch.as_tensor(targets, dtype=x.dtype)
    w = _weights_tensor(corpus, weights, OUTPUT_SAMPLES, x.dtype)
    guard_finite("reconstructor corpus", x, target)
    return x, target, w


def train_reconstructor(corpus, config: TrainConfig | None = None, model_cfg: ReconstructorConfig | None = None,
                        weights: RegionWeights | None = None, model: ReconstructorModel | None = None,
                        min_corpus: int = MIN_CORPUS, on_epoch=None) -> TrainedReconstructor:
    """Fit on (6x125 input, 500-sample target, target peak indices) triples."""
    config = config or TrainConfig()
    weights = weights or RegionWeights()
    if len(corpus) < min_corpus:
        raise InsufficientCorpusError(f"reconstructor training needs >= {min_corpus} windows, got {len(corpus)}")
    torch.manual_seed(config.seed)
    model = model or ReconstructorModel(model_cfg)
    x, target, w = corpus_tensors(model, corpus, weights)
    history = fit(model, (x, target, w), weighted_loss, config, on_epoch=on_epoch)
    head = list(model.head_dims())
    return TrainedReconstructor(model, history, config.seed, {model.task_id: head},
                                {"region_weights": {"alpha": weights.alpha, "delta_ms": weights.delta_ms}})


def swap_task_head(model: ReconstructorModel, new_head_dims, fewshot_corpus, config: TrainConfig | None = None,
                   task_id: str = "task", weights: RegionWeights | None = None) -> ReconstructorModel:
    """Copy ``model``, freeze everything but a freshly initialised head, fine-tune the head."""
    in_dim, out_dim = new_head_dims
    if in_dim != model.cfg.up_channels:
        raise HeadShapeError(f"head input {in_dim} does not match feature width {model.cfg.up_channels}")
    if out_dim < 1:
        raise HeadShapeError("head output width must be >= 1")
    if len(fewshot_corpus) < MIN_FEWSHOT:
        raise InsufficientCorpusError(f"few-shot corpus needs >= {MIN_FEWSHOT} windows")
    config = config or TrainConfig()
    weights = weights or RegionWeights(alpha=0.0)
    new = copy.deepcopy(model)
    torch.manual_seed(config.seed)
    new.task_head = nn.Linear(in_dim, out_dim).to(next(model.parameters()).dtype)
    new.cfg = ReconstructorConfig(**{**hparams_dict(model.cfg), "head_out": out_dim})
    new.task_id = task_id
    for name, p in new.named_parameters():
        p.requires_grad_(name.startswith("task_head."))
    x, target, w = corpus_tensors(new, fewshot_corpus, weights)
    if target.shape[1] != out_dim:
        raise HeadShapeError(f"targets have {target.shape[1]} channels, head emits {out_dim}")
    fit(new, (x, target, w), weighted_loss, config, params=new.task_head.parameters())
    for p in new.parameters():
        p.requires_grad_(True)
    return new


def load_reconstructor(payload: dict) -> ReconstructorModel:
    if payload["kind"] != "reconstructor":
        raise ValueError(f"checkpoint holds a {payload['kind']}, not a reconstructor")
    model = ReconstructorModel(ReconstructorConfig.from_dict(payload["hparams"]))
    model.load_state_dict(state_from_checkpoint(payload))
    model.task_id = payload.get("extra", {}).get("task_id", "scg")
    model.eval()
    return model
