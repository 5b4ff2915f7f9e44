"""Regenerate the bundled synthetic LTE-style throughput logs.

Usage: python tools/make_traces.py [out_dir]

Each log line is ``epoch_ms lon lat bytes interval_ms`` (whitespace separated),
the layout read by the ``lte_log`` trace preset.  Throughput follows a
log-normal AR(1) process around a mode-specific level with occasional deep
fades; the receiver moves at a mode-specific speed.
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

MODES = {
    #          mean Mbps, log-sd, AR coef, fade prob, speed m/s
    "bicycle": (24.0, 0.45, 0.85, 0.02, 5.0),
    "car":     (28.0, 0.60, 0.80, 0.04, 14.0),
    "bus":     (20.0, 0.55, 0.90, 0.03, 9.0),
}
DURATION_S = 900
START_MS = 1_453_000_000_000
SEED = 20160101


def make(mode: str, rng: np.random.Generator) -> list[str]:
    mean, sd, ar, fade_p, speed = MODES[mode]
    lines = []
    t_ms = START_MS
    lon, lat = 3.7174, 51.0543
    heading = rng.uniform(0, 2 * np.pi)
    z = 0.0
    fade = 0
    for _ in range(DURATION_S):
        interval = int(rng.integers(950, 1051))
        z = ar * z + np.sqrt(1 - ar ** 2) * rng.standard_normal()
        mbps = mean * np.exp(sd * z - sd ** 2 / 2)
        if fade == 0 and rng.random() < fade_p:
            fade = int(rng.integers(2, 7))
        if fade:
            mbps *= rng.uniform(0.02, 0.25)
            fade -= 1
        nbytes = int(round(mbps * 1e6 / 8 * interval / 1000))
        heading += rng.normal(0, 0.05)
        step = speed * interval / 1000
        lat += step * np.cos(heading) / 111_320
        lon += step * np.sin(heading) / (111_320 * np.cos(np.radians(lat)))
        t_ms += interval
        lines.append(f"{t_ms} {lon:.6f} {lat:.6f} {nbytes} {interval}")
    return lines


def main(out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, mode in enumerate(MODES):
        rng = np.random.default_rng([SEED, i])
        (out / f"{mode}.log").write_text("\n".join(make(mode, rng)) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/coupled360/data/traces")
