"""Synthetic data generators for tests, demos and the bundled sample CSV.

Run ``python -m nfdetect.synthetic OUT.csv [ROWS] [SEED]`` to write a
NetFlow-layout sample file.
"""
from __future__ import annotations

import sys

import numpy as np

from .flow_ingest import NF_BOT_IOT_COLUMNS, write_netflow_csv


def make_spike_windows(n_windows: int, T: int = 10, n_features: int = 4, seed: int = 0, pos_frac: float = 0.5):
    """Windows in [0, 1]; positives carry a one-step spike on a random feature.

    Background is a slow random walk in roughly [0.1, 0.6].  The spike lifts
    one feature at one time step into [0.85, 1.0].  Returns ``(X, y)``.
    """
    rng = np.random.default_rng(seed)
    n_pos = int(round(n_windows * pos_frac))
    y = np.zeros(n_windows, dtype=np.int64)
    y[:n_pos] = 1
    y = y[rng.permutation(n_windows)]
    start = rng.uniform(0.2, 0.5, size=(n_windows, 1, n_features))
    steps = rng.normal(0.0, 0.03, size=(n_windows, T, n_features))
    X = np.clip(start + np.cumsum(steps, axis=1), 0.1, 0.6)
    for i in np.flatnonzero(y):
        t = rng.integers(T)
        f = rng.integers(n_features)
        X[i, t, f] = rng.uniform(0.85, 1.0)
    return X, y


_ATTACKS = ("DDoS", "DoS", "Reconnaissance", "Theft")


def make_flow_rows(n_rows: int, seed: int = 0, benign_frac: float = 0.3):
    """NF-BoT-IoT-style flow rows with attack traffic arriving in bursts.

    Returns ``(header, rows)`` ready for :func:`write_netflow_csv`.
    """
    rng = np.random.default_rng(seed)
    rows = []
    benign_run = True
    while len(rows) < n_rows:
        # alternate benign stretches and attack bursts
        mean_len = 12 if benign_run else 12 * (1 - benign_frac) / max(benign_frac, 1e-6)
        run = max(1, int(rng.geometric(1.0 / mean_len)))
        attack = None if benign_run else _ATTACKS[rng.integers(len(_ATTACKS))]
        for _ in range(min(run, n_rows - len(rows))):
            rows.append(_flow(rng, attack))
        benign_run = not benign_run
    header = list(NF_BOT_IOT_COLUMNS) + ["Label", "Attack"]
    return header, rows


def _flow(rng, attack):
    src = f"192.168.100.{rng.integers(1, 255)}"
    dst = f"192.168.100.{rng.integers(1, 255)}"
    if attack is None:
        proto = int(rng.choice([6, 17, 1], p=[0.6, 0.3, 0.1]))
        dport = int(rng.choice([53, 80, 443, 123, 1883, int(rng.integers(1024, 65535))]))
        in_pkts = int(rng.integers(2, 60))
        out_pkts = int(rng.integers(1, 60))
        in_bytes = int(in_pkts * rng.uniform(60, 1200))
        out_bytes = int(out_pkts * rng.uniform(60, 1400))
        flags = int(rng.choice([24, 27, 30, 0]))
        dur = int(rng.integers(50, 4_000_000))
        l7 = float(rng.choice([7.0, 5.0, 91.0, 0.0, 222.0]))
        return [src, int(rng.integers(1024, 65535)), dst, dport, proto, l7,
                in_bytes, out_bytes, in_pkts, out_pkts, flags, dur, 0, "Benign"]
    proto = int(rng.choice([6, 17], p=[0.5, 0.5]))
    dport = int(rng.choice([80, 0, int(rng.integers(1, 1024))]))
    in_pkts = int(rng.integers(1, 4))
    out_pkts = int(rng.integers(0, 2))
    in_bytes = int(in_pkts * rng.uniform(40, 110))
    out_bytes = int(out_pkts * rng.uniform(40, 80))
    flags = int(rng.choice([2, 4, 20, 22]))
    dur = int(rng.integers(0, 5000))
    l7 = float(rng.choice([0.0, 7.0]))
    return [src, int(rng.integers(1024, 65535)), dst, dport, proto, l7,
            in_bytes, out_bytes, in_pkts, out_pkts, flags, dur, 1, attack]


def write_sample_csv(path, n_rows: int = 2000, seed: int = 0, benign_frac: float = 0.3) -> None:
    header, rows = make_flow_rows(n_rows, seed, benign_frac)
    write_netflow_csv(path, header, rows)


if __name__ == "__main__":
    out = sys.argv[1]
    n = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
    seed = int(sys.argv[3]) if len(sys.argv) > 3 else 0
    write_sample_csv(out, n, seed)
