"""Shared model plumbing: determinism, checkpoints, training loop, gradient checks."""

from __future__ import annotations

import base64
import copy
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..errors import NumericGuardError, TrainingFailureError

CHECKPOINT_FORMAT = "earcardio.checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    seed: int = 0
    grad_clip: float = 5.0
    num_threads: int = 1
    lr_decay: float = 0.97  # per-epoch multiplicative decay

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def deterministic(seed: int, num_threads: int = 1) -> torch.Generator:
    torch.manual_seed(seed)
    torch.set_num_threads(num_threads)
    torch.use_deterministic_algorithms(True)
    return torch.Generator().manual_seed(seed)


def guard_finite(name: str, *arrays) -> None:
    for a in arrays:
        ok = torch.isfinite(a).all() if isinstance(a, torch.Tensor) else np.all(np.isfinite(a))
        if not ok:
            raise NumericGuardError(f"non-finite values in {name}")


def guard_parameters(model: nn.Module) -> None:
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise NumericGuardError(f"non-finite weights in {name}")


def parameter_views(model: nn.Module) -> dict:
    """name -> (offset, shape) into the flat parameter vector."""
    views, off = {}, 0
    for name, p in model.named_parameters():
        views[name] = (off, tuple(p.shape))
        off += p.numel()
    return views


def flat_parameters(model: nn.Module) -> np.ndarray:
    return torch.cat([p.detach().reshape(-1) for p in model.parameters()]).double().numpy()


def load_flat_parameters(model: nn.Module, flat: np.ndarray) -> None:
    with torch.no_grad():
        for name, (off, shape) in parameter_views(model).items():
            p = dict(model.named_parameters())[name]
            n = int(np.prod(shape)) if shape else 1
            p.copy_(torch.as_tensor(flat[off:off + n], dtype=p.dtype).reshape(shape))


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# --- checkpoint container ------------------------------------------------

def _encode_tensor(t: torch.Tensor) -> dict:
    arr = t.detach().cpu().numpy()
    return {"shape": list(arr.shape), "dtype": str(arr.dtype),
            "data": base64.b64encode(arr.astype(arr.dtype.newbyteorder("<")).tobytes()).decode("ascii")}


def _decode_tensor(d: dict) -> torch.Tensor:
    arr = np.frombuffer(base64.b64decode(d["data"]), dtype=np.dtype(d["dtype"]).newbyteorder("<"))
    return torch.from_numpy(arr.astype(d["dtype"]).reshape(d["shape"]).copy())


def checkpoint_dict(model: nn.Module, kind: str, hparams: dict, seed: int, extra: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "hparams": hparams,
        "seed": seed,
        "extra": extra or {},
        "tensors": {k: _encode_tensor(v) for k, v in model.state_dict().items()},
    }


def save_checkpoint(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def read_checkpoint(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    return payload


def state_from_checkpoint(payload: dict) -> dict:
    return {k: _decode_tensor(v) for k, v in payload["tensors"].items()}


# --- training ------------------------------------------------------------

def fit(model: nn.Module, inputs: tuple, loss_fn, config: TrainConfig, params=None, on_epoch=None):
    """Mini-batch Adam on tensors ``inputs`` (first dim = samples).

    ``loss_fn(model, *batch)`` returns a scalar. Returns per-epoch mean losses.
    ``on_epoch(epoch, model)`` runs after every epoch (e.g. validation).
    Raises TrainingFailureError on a non-finite loss, carrying the last
    finite state dict.
    """
    gen = deterministic(config.seed, config.num_threads)
    params = list(model.parameters()) if params is None else list(params)
    opt = torch.optim.Adam(params, lr=config.lr)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=config.lr_decay)
    n = inputs[0].shape[0]
    history = []
    stable = copy.deepcopy(model.state_dict())
    for epoch in range(config.epochs):
        model.train()
        order = torch.randperm(n, generator=gen)
        total, count = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = loss_fn(model, *(t[idx] for t in inputs))
            if not torch.isfinite(loss):
                model.load_state_dict(stable)
                raise TrainingFailureError(
                    f"loss became non-finite at epoch {epoch}", checkpoint=stable)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if config.grad_clip:
                nn.utils.clip_grad_norm_(params, config.grad_clip)
            opt.step()
            total += float(loss.detach()) * len(idx)
            count += len(idx)
        sched.step()
        history.append(total / count)
        stable = copy.deepcopy(model.state_dict())
        if on_epoch is not None:
            on_epoch(epoch, model)
            model.train()
    model.eval()
    return history


# --- finite-difference oracle -------------------------------------------

def gradient_check(model: nn.Module, loss_fn, eps: float = 1e-6, group_depth: int = 1) -> dict:
    """Compare autograd gradients with central differences, per parameter group.

    The model should be small and in float64. Groups are parameter-name
    prefixes of ``group_depth`` components. Returns group -> relative error
    ``|g_a - g_fd| / max(|g_a|, |g_fd|)``.
    """
    model.eval()
    model.zero_grad(set_to_none=True)
    loss = loss_fn(model)
    loss.backward()
    analytic = {n: p.grad.detach().clone().reshape(-1) for n, p in model.named_parameters()}
    groups: dict = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            fd = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                lp = loss_fn(model).item()
                flat[i] = orig - eps
                lm = loss_fn(model).item()
                flat[i] = orig
                fd[i] = (lp - lm) / (2 * eps)
            key = ".".join(name.split(".")[:group_depth])
            a, f = groups.setdefault(key, ([], []))
            a.append(analytic[name])
            f.append(fd)
    out = {}
    for key, (a, f) in groups.items():
        a, f = torch.cat(a), torch.cat(f)
        denom = max(a.norm().item(), f.norm().item(), 1e-30)
        out[key] = (a - f).norm().item() / denom
    return out


def hparams_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def finite_or_raise(values, what: str) -> None:
    if not all(math.isfinite(v) for v in values):
        raise TrainingFailureError(f"non-finite {what}")
