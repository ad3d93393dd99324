"""Second-stage enhancement of 5 s, 6-axis, 25 Hz windows.

Two routes:

* :func:`ensemble_refine` fills masked samples from a per-channel median beat
  template (deterministic baseline).
* :class:`DenoiserModel` is a channel-attention denoising autoencoder that
  sees the missing mask as an extra attention token and encoder channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from ..errors import InsufficientCorpusError, NumericGuardError
from ..signal_core import BeatSegmentation, segment_beats
from .common import (TrainConfig, checkpoint_dict, count_parameters, fit, guard_finite, guard_parameters,
                     hparams_dict, state_from_checkpoint)

WINDOW_SLOTS = 125
N_CHANNELS = 6
MIN_CORPUS = 100


@dataclass(frozen=True)
class EnhancerInput:
    window: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.window, dtype=float)
        m = np.asarray(self.mask)
        if w.shape != (N_CHANNELS, WINDOW_SLOTS):
            raise ValueError(f"window must be {N_CHANNELS}x{WINDOW_SLOTS}, got {w.shape}")
        m = m.reshape(-1)
        if m.shape != (WINDOW_SLOTS,) or not np.all((m == 0) | (m == 1)):
            raise ValueError("mask must be a binary vector of window length")
        object.__setattr__(self, "window", w)
        object.__setattr__(self, "mask", m.astype(bool))


# --- deterministic baseline ---------------------------------------------

def periodicity_score(x: np.ndarray, rate_hz: float = 25.0) -> float:
    """Peak normalised autocorrelation over plausible beat lags (0.3-1.5 s)."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    denom = float(np.dot(x, x))
    if denom <= 0:
        return 0.0
    lo, hi = int(0.3 * rate_hz), min(int(1.5 * rate_hz), x.size - 2)
    if hi <= lo:
        return 0.0
    ac = [np.dot(x[:-k], x[k:]) / denom for k in range(lo, hi + 1)]
    return float(max(ac))


def rank_channels(window: np.ndarray, rate_hz: float = 25.0) -> np.ndarray:
    """Channel indices, most beat-periodic (highest SNR proxy) first."""
    scores = [periodicity_score(ch, rate_hz) for ch in window]
    return np.argsort(scores, kind="stable")[::-1]


def anchor_beats(window: np.ndarray, rate_hz: float = 25.0) -> BeatSegmentation:
    best = int(rank_channels(window, rate_hz)[0])
    return segment_beats(window[best], rate_hz)


def ensemble_refine(inp: EnhancerInput, beats: BeatSegmentation) -> tuple[np.ndarray, bool]:
    """Replace masked samples by the median beat template at the same phase.

    Returns ``(window, degraded)``; with fewer than two beats the input is
    returned unchanged and ``degraded`` is True. Present samples are never
    modified.
    """
    window = np.array(inp.window)
    mask = inp.mask
    anchors = np.asarray(beats.peak_indices, dtype=np.int64)
    if anchors.size < 2:
        return window, True
    if mask.all():
        return window, False
    period = int(round(float(np.median(np.diff(anchors)))))
    pre = int(round(0.4 * period))
    post = period - pre
    T = window.shape[1]
    # phase of every sample relative to its nearest anchor
    dist = np.arange(T)[:, None] - anchors[None, :]
    nearest = np.argmin(np.abs(dist), axis=1)
    phase = dist[np.arange(T), nearest]
    n_off = pre + post
    template = np.full((window.shape[0], n_off), np.nan)
    for k, off in enumerate(range(-pre, post)):
        idx = anchors + off
        idx = idx[(idx >= 0) & (idx < T)]
        idx = idx[mask[idx]]
        if idx.size:
            template[:, k] = np.median(window[:, idx], axis=1)
    for i in np.flatnonzero(~mask):
        k = phase[i] + pre
        if 0 <= k < n_off and not np.isnan(template[0, k]):
            window[:, i] = template[:, k]
    return window, False


# --- neural denoiser ------------------------------------------------------

@dataclass
class DenoiserConfig:
    attention_heads: int = 4
    embed: int = 16
    widths: tuple = (32, 64)
    bottleneck: int = 64
    kernel: int = 5
    n_channels: int = N_CHANNELS

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class ChannelAttention(nn.Module):
    """Per-timestep multi-head attention across the IMU channels.

    Each channel value becomes a token (value projection + channel embedding);
    the mask bit is one more key/value token. Output is a residual correction.
    """

    def __init__(self, n_channels: int, embed: int, heads: int):
        super().__init__()
        self.n_channels = n_channels
        self.value_proj = nn.Linear(1, embed)
        self.channel_embed = nn.Parameter(0.1 * torch.randn(n_channels + 1, embed))
        self.attn = nn.MultiheadAttention(embed, heads, batch_first=True)
        self.out = nn.Linear(embed, 1)

    def forward(self, x, mask):
        B, C, T = x.shape
        tokens = torch.cat([x, mask], dim=1).permute(0, 2, 1).reshape(B * T, C + 1, 1)
        e = self.value_proj(tokens) + self.channel_embed
        q = e[:, :C]
        a, _ = self.attn(q, e, e, need_weights=False)
        y = self.out(a + q).reshape(B, T, C).permute(0, 2, 1)
        return x + y


def _conv(cin, cout, k, stride=1):
    return nn.Conv1d(cin, cout, k, stride=stride, padding=k // 2)


class DenoiserModel(nn.Module):
    def __init__(self, cfg: DenoiserConfig | None = None):
        super().__init__()
        cfg = cfg or DenoiserConfig()
        self.cfg = cfg
        C, k = cfg.n_channels, cfg.kernel
        w0, w1 = cfg.widths
        act = nn.GELU
        self.attention = ChannelAttention(C, cfg.embed, cfg.attention_heads)
        self.enc0 = nn.Sequential(_conv(C + 1, w0, k), act())
        self.enc1 = nn.Sequential(_conv(w0, w0, k, 2), act())
        self.enc2 = nn.Sequential(_conv(w0, w1, k, 2), act())
        self.bottleneck = nn.Sequential(_conv(w1, cfg.bottleneck, 3), act(), _conv(cfg.bottleneck, w1, 3), act())
        self.up1 = nn.ConvTranspose1d(w1, w0, 4, stride=2, padding=1)
        self.dec1 = nn.Sequential(_conv(2 * w0, w0, k), act())
        self.up2 = nn.ConvTranspose1d(w0, w0, 4, stride=2, padding=1)
        self.dec2 = nn.Sequential(_conv(2 * w0, w0, k), act())
        self.final = nn.Conv1d(w0, C, 1)

    def forward(self, x, mask):
        a = self.attention(x, mask)
        e0 = self.enc0(torch.cat([a, mask], dim=1))
        e1 = self.enc1(e0)
        e2 = self.enc2(e1)
        b = self.bottleneck(e2)
        d1 = self.up1(b)[..., :e1.shape[-1]]
        d1 = self.dec1(torch.cat([d1, e1], dim=1))
        d0 = self.up2(d1)[..., :e0.shape[-1]]
        d0 = self.dec2(torch.cat([d0, e0], dim=1))
        return self.final(d0)

    @property
    def n_parameters(self) -> int:
        return count_parameters(self)


def as_batch(model, inputs):
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.stack([i.window for i in inputs]), dtype=dtype)
    m = torch.as_tensor(np.stack([i.mask for i in inputs]).astype(float)[:, None, :], dtype=dtype)
    return x, m


def denoiser_forward(model: DenoiserModel, inp) -> np.ndarray:
    """Forward pass for one :class:`EnhancerInput` (or a list of them)."""
    single = isinstance(inp, EnhancerInput)
    inputs = [inp] if single else list(inp)
    guard_parameters(model)
    for i in inputs:
        guard_finite("denoiser input", i.window)
    model.eval()
    with torch.no_grad():
        x, m = as_batch(model, inputs)
        y = model(x, m).double().numpy()
    if not np.all(np.isfinite(y)):
        raise NumericGuardError("denoiser produced non-finite output")
    return y[0] if single else y


def mse_loss(model, x, m, target):
    return torch.mean((model(x, m) - target) ** 2)


@dataclass
class TrainedDenoiser:
    model: DenoiserModel
    history: list
    seed: int
    extra: dict = field(default_factory=dict)

    def checkpoint(self) -> dict:
        return checkpoint_dict(self.model, "denoiser", hparams_dict(self.model.cfg), self.seed,
                               {"loss_curve": self.history, **self.extra})


def train_denoiser(corpus, config: TrainConfig | None = None, model_cfg: DenoiserConfig | None = None,
                   model: DenoiserModel | None = None, on_epoch=None) -> TrainedDenoiser:
    """Fit the denoiser by MSE; ``corpus`` is a list of (EnhancerInput, 6x125 target)."""
    config = config or TrainConfig()
    if len(corpus) < MIN_CORPUS:
        raise InsufficientCorpusError(f"denoiser training needs >= {MIN_CORPUS} windows, got {len(corpus)}")
    torch.manual_seed(config.seed)
    model = model or DenoiserModel(model_cfg)
    x, m = as_batch(model, [c[0] for c in corpus])
    target = torch.as_tensor(np.stack([c[1] for c in corpus]), dtype=x.dtype)
    guard_finite("denoiser corpus", x, target)
    history = fit(model, (x, m, target), mse_loss, config, on_epoch=on_epoch)
    return TrainedDenoiser(model, history, config.seed)


def load_denoiser(payload: dict) -> DenoiserModel:
    if payload["kind"] != "denoiser":
        raise ValueError(f"checkpoint holds a {payload['kind']}, not a denoiser")
    model = DenoiserModel(DenoiserConfig.from_dict(payload["hparams"]))
    model.load_state_dict(state_from_checkpoint(payload))
    model.eval()
    return model
