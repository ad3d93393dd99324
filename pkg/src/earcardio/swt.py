"""Stationary (undecimated) wavelet transform and cardiac-band reconstruction.

A signal splits additively into detail components and a residual
approximation, ``x = D_1 + ... + D_N + A_N``. With ``fs = 25 Hz`` and
``J = 2`` the two finest details cover roughly ``fs / 2**(J+1) = 3.125 Hz``
and up, where BCG peaks live; coarser levels hold slow motion.

The transform is the MODWT pyramid (filters scaled by 1/sqrt(2)) computed
circularly. ``mode="symmetric"`` runs it on the half-sample mirror extension
``[x, x[::-1]]`` and exposes the first ``len(x)`` samples of each level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DecompositionLengthError, MustInterpolateFirstError
from .signal_core import ImuSeries

_S3 = np.sqrt(3.0)
WAVELETS = {
    "haar": np.array([1.0, 1.0]) / np.sqrt(2.0),
    "db2": np.array([1 + _S3, 3 + _S3, 3 - _S3, 1 - _S3]) / (4 * np.sqrt(2.0)),
}
MAX_LEVEL = 6


def filter_pair(wavelet: str) -> tuple[np.ndarray, np.ndarray]:
    """MODWT scaling and wavelet filters (unit-energy / sqrt(2))."""
    try:
        h = WAVELETS[wavelet]
    except KeyError:
        raise ValueError(f"unknown wavelet {wavelet!r}; choose from {sorted(WAVELETS)}") from None
    g = h[::-1] * (-1.0) ** np.arange(h.size)
    return h / np.sqrt(2.0), g / np.sqrt(2.0)


def min_length(N: int, wavelet: str = "db2") -> int:
    return (WAVELETS[wavelet].size - 1) * 2 ** N


@dataclass(frozen=True)
class SwtDecomposition:
    levels: tuple  # wavelet coefficients W_1..W_N, each of input length
    approx: np.ndarray
    N: int = 5
    J: int = 2
    fs_hz: float = 25.0
    wavelet: str = "db2"
    mode: str = "symmetric"
    _ext_levels: tuple = field(default=(), repr=False, compare=False)
    _ext_approx: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def length(self) -> int:
        return self.approx.shape[-1]

    @property
    def cutoff_hz(self) -> float:
        return self.fs_hz / 2 ** (self.J + 1)

    def energy(self) -> float:
        """Coefficient energy on the transform domain (equals signal energy there)."""
        return float(sum(np.sum(w ** 2) for w in self._ext_levels) + np.sum(self._ext_approx ** 2))

    def component(self, i: int) -> np.ndarray:
        """Signal-domain detail D_i (1-based); i = N + 1 gives the approximation A_N."""
        keep = [i] if i <= self.N else []
        return iswt(self, keep_levels=keep, keep_approx=i == self.N + 1)


def _circ_filter(x: np.ndarray, taps: np.ndarray, step: int, inverse: bool = False) -> np.ndarray:
    out = np.zeros_like(x)
    sign = -1 if inverse else 1
    for k, c in enumerate(taps):
        out += c * np.roll(x, sign * step * k, axis=-1)
    return out


def swt_decompose(x, N: int = 5, J: int = 2, wavelet: str = "db2", fs_hz: float = 25.0,
                  mode: str = "symmetric") -> SwtDecomposition:
    """Undecimated decomposition along the last axis.

    Works on a single channel or a stack (..., n) of channels.
    """
    x = np.asarray(x, dtype=float)
    if not 1 <= N <= MAX_LEVEL:
        raise ValueError(f"N must be in [1, {MAX_LEVEL}]")
    if not 1 <= J < N:
        raise ValueError("J must satisfy 1 <= J < N")
    n = x.shape[-1]
    if n < min_length(N, wavelet):
        raise DecompositionLengthError(
            f"{n} samples is too short for {N} levels of {wavelet} (need {min_length(N, wavelet)})")
    if mode == "symmetric":
        ext = np.concatenate([x, x[..., ::-1]], axis=-1)
    elif mode == "periodic":
        ext = x
    else:
        raise ValueError(f"unknown boundary mode {mode!r}")
    h, g = filter_pair(wavelet)
    v = ext
    ext_levels = []
    for j in range(N):
        step = 2 ** j
        ext_levels.append(_circ_filter(v, g, step))
        v = _circ_filter(v, h, step)
    return SwtDecomposition(
        levels=tuple(w[..., :n] for w in ext_levels),
        approx=v[..., :n],
        N=N, J=J, fs_hz=fs_hz, wavelet=wavelet, mode=mode,
        _ext_levels=tuple(ext_levels), _ext_approx=v,
    )


def iswt(dec: SwtDecomposition, keep_levels=None, keep_approx: bool = True) -> np.ndarray:
    """Inverse transform from a subset of levels (1-based); others count as zero."""
    keep = set(range(1, dec.N + 1)) if keep_levels is None else set(keep_levels)
    h, g = filter_pair(dec.wavelet)
    v = dec._ext_approx if keep_approx else np.zeros_like(dec._ext_approx)
    for j in range(dec.N, 0, -1):
        step = 2 ** (j - 1)
        v = _circ_filter(v, h, step, inverse=True)
        if j in keep:
            v = v + _circ_filter(dec._ext_levels[j - 1], g, step, inverse=True)
    return v[..., :dec.length]


def swt_cardiac_reconstruct(dec: SwtDecomposition) -> np.ndarray:
    """Keep only the detail levels i <= J; drop coarser levels and the approximation."""
    return iswt(dec, keep_levels=range(1, dec.J + 1), keep_approx=False)


def swt_denoise_array(values, N: int = 5, J: int = 2, fs_hz: float = 25.0, wavelet: str = "db2"):
    """Per-channel cardiac reconstruction of an (n, channels) array."""
    values = np.asarray(values, dtype=float)
    dec = swt_decompose(values.T, N=N, J=J, wavelet=wavelet, fs_hz=fs_hz)
    return swt_cardiac_reconstruct(dec).T


def swt_denoise_series(series: ImuSeries, N: int = 5, J: int = 2, wavelet: str = "db2") -> ImuSeries:
    if not series.is_complete:
        raise MustInterpolateFirstError("SWT needs a gap-free series; interpolate first")
    out = swt_denoise_array(series.values, N=N, J=J, fs_hz=series.nominal_rate_hz, wavelet=wavelet)
    return series.with_values(out)


def dump_coefficients_csv(dec: SwtDecomposition, path) -> None:
    """Single-channel coefficient stack as CSV columns D1..DN, A."""
    cols = list(dec.levels) + [dec.approx]
    if cols[0].ndim != 1:
        raise ValueError("coefficient dump expects a single-channel decomposition")
    header = ",".join([f"D{i}" for i in range(1, dec.N + 1)] + [f"A{dec.N}"])
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")
