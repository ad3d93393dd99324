"""Direct-loop reference implementations of the metrics.

Deliberately naive: explicit DFT sums and Python loops, no scipy. Used as
oracles for the vectorised paths in :mod:`earcardio.metrics`.
"""

import math

import numpy as np

from .metrics import SNR_BAND, SOI_BAND, WELCH_OVERLAP, WELCH_SEGMENT_S


def naive_welch(x, rate_hz):
    x = [float(v) for v in np.ravel(x)]
    n = len(x)
    nperseg = min(n, int(round(WELCH_SEGMENT_S * rate_hz)))
    step = nperseg - int(nperseg * WELCH_OVERLAP)
    win = [0.5 - 0.5 * math.cos(2 * math.pi * k / nperseg) for k in range(nperseg)]
    scale = 1.0 / (rate_hz * sum(w * w for w in win))
    n_freq = nperseg // 2 + 1
    acc = [0.0] * n_freq
    n_seg = 0
    start = 0
    while start + nperseg <= n:
        seg = x[start:start + nperseg]
        mean = sum(seg) / nperseg
        seg = [(s - mean) * w for s, w in zip(seg, win)]
        for k in range(n_freq):
            re = im = 0.0
            for j, s in enumerate(seg):
                ang = 2 * math.pi * k * j / nperseg
                re += s * math.cos(ang)
                im -= s * math.sin(ang)
            p = (re * re + im * im) * scale
            if k != 0 and not (nperseg % 2 == 0 and k == nperseg // 2):
                p *= 2.0
            acc[k] += p
        n_seg += 1
        start += step
    freqs = [k * rate_hz / nperseg for k in range(n_freq)]
    return freqs, [a / n_seg for a in acc]


def naive_bandpass_snr_db(sig, noise, rate_hz, band=SNR_BAND):
    fs, ps = naive_welch(sig, rate_hz)
    _, pn = naive_welch(noise, rate_hz)
    sel = [i for i, f in enumerate(fs) if band[0] <= f <= band[1]]
    return 10 * math.log10((sum(ps[i] for i in sel) / len(sel)) / (sum(pn[i] for i in sel) / len(sel)))


def naive_cosine(a, b):
    dot = na = nb = 0.0
    for x, y in zip(np.ravel(a), np.ravel(b)):
        dot += x * y
        na += x * x
        nb += y * y
    return dot / (math.sqrt(na) * math.sqrt(nb))


def naive_soi(recovered, truth, rate_hz, band=SOI_BAND):
    hi = min(band[1], rate_hz / 2)
    fs, pe = naive_welch(recovered, rate_hz)
    _, pt = naive_welch(truth, rate_hz)
    num = den = 0.0
    for f, e, t in zip(fs, pe, pt):
        if band[0] <= f <= hi:
            num += min(e, t)
            den += t
    return num / den


def naive_mpe(estimates, truths):
    total = 0.0
    for e, t in zip(estimates, truths):
        total += abs((e - t) / t)
    return total / len(truths) * 100.0
