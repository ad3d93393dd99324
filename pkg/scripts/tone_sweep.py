"""Print the gain of the cardiac wavelet band-pass at pure tones.

Usage: python3 scripts/tone_sweep.py [--rate 25] [--seconds 20]
"""

import argparse

import numpy as np

from earcardio.swt import swt_cardiac_reconstruct, swt_decompose


def tone_gain_db(freq_hz: float, rate_hz: float, n: int) -> float:
    # snap to a bin so the tone is periodic in the window
    k = max(1, round(freq_hz * n / rate_hz))
    x = np.sin(2 * np.pi * k * np.arange(n) / n)
    y = swt_cardiac_reconstruct(swt_decompose(x, fs_hz=rate_hz, mode="periodic"))
    return float(20 * np.log10(abs(np.fft.rfft(y)[k]) / abs(np.fft.rfft(x)[k])))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rate", type=float, default=25.0)
    ap.add_argument("--seconds", type=float, default=20.0)
    args = ap.parse_args()
    n = int(args.rate * args.seconds)
    print(f"{'Hz':>6} {'gain dB':>9}")
    for f in np.arange(0.25, args.rate / 2, 0.25):
        print(f"{f:6.2f} {tone_gain_db(f, args.rate, n):9.2f}")


if __name__ == "__main__":
    main()
