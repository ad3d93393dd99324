"""Measured packet loss and fail-safe discard rate across i.i.d. drop probabilities.

Usage: python3 scripts/loss_sweep.py [--windows 200] [--seed 0]
"""

import argparse

import numpy as np

from earcardio.ble_channel import SCENARIOS, LossScenario, replay_windows, transmit
from earcardio.signal_core import ImuSeries


def sweep(scenario: LossScenario, n_windows: int, seed: int) -> tuple[float, float]:
    n = int(25 * 2.5 * (n_windows + 1))
    series = ImuSeries(np.zeros((n, 6)), np.ones(n, dtype=bool))
    windows = list(replay_windows(transmit(series, scenario, seed)))
    loss = np.mean([w.report.loss_rate for w in windows])
    discard = np.mean([w.discard for w in windows])
    return float(loss), float(discard)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--windows", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rows = [(f"iid {p:.2f}", LossScenario("custom", p)) for p in np.arange(0.0, 0.45, 0.05)]
    rows += [(tag, s) for tag, s in SCENARIOS.items() if tag != "lossless"]
    print(f"{'scenario':>14} {'loss':>7} {'discard':>8}")
    for name, scenario in rows:
        loss, discard = sweep(scenario, args.windows, args.seed)
        print(f"{name:>14} {loss:7.3f} {discard:8.3f}")


if __name__ == "__main__":
    main()
