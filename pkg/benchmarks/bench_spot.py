"""Benchmark: compiled spot-estimation core vs the pure-numpy fallback.

Times ``spot_series`` (the dominant cost of a full estimate) on a
simulated day of 1-second observations for d = 1 and d = 3, plus the
21-day single-path case used by the performance acceptance test.

Run with ``python3 benchmarks/bench_spot.py [--reps N]``.
"""
from __future__ import annotations

import argparse
import math
import time

from volfunc._spot_backend import BACKEND
from volfunc.kernel_moments import default_kernel, discrete_weights
from volfunc.preaveraging_spot import spot_series, validate_tuning
from volfunc.simulation_lab import ScenarioConfig, simulate

DELTA = 1.0 / 23400.0


def bench(obs, tp, km, engine: str, reps: int) -> float:
    spot_series(obs, tp, km, engine=engine)  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        spot_series(obs, tp, km, engine=engine)
    return (time.perf_counter() - t0) / reps


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=5, help="timing repetitions")
    args = parser.parse_args()

    print(f"default backend: {BACKEND}")
    tp = validate_tuning(
        DELTA, 1.0, 1.0, math.inf, 0.70, 0.47, 0.5, None, floor_mode=True
    )
    km = discrete_weights(default_kernel(), tp.l_n)

    cases = [
        ("d=1, 1 day (n=23400)", ScenarioConfig(
            kind="constant_vol", d=1, delta_n=DELTA, days=1.0,
            constant_c=0.04, noise_sd=0.005, price_jump_intensity=0.0, seed=1,
        )),
        ("d=3, 1 day (n=23400)", ScenarioConfig(
            kind="constant_vol", d=3, delta_n=DELTA, days=1.0,
            constant_c=0.04, noise_sd=0.005, price_jump_intensity=0.0, seed=1,
        )),
        ("d=1, 21 days (n=491400)", ScenarioConfig(
            kind="constant_vol", d=1, delta_n=DELTA, days=21.0,
            constant_c=0.04, noise_sd=0.005, price_jump_intensity=0.0, seed=1,
        )),
    ]
    engines = ["numpy"] + (["compiled"] if BACKEND == "compiled" else [])
    for label, scenario in cases:
        obs = simulate(scenario).observations
        timings = {engine: bench(obs, tp, km, engine, args.reps) for engine in engines}
        line = "  ".join(f"{engine}: {1e3 * t:8.1f} ms" for engine, t in timings.items())
        if len(timings) == 2:
            line += f"  speedup: {timings['numpy'] / timings['compiled']:5.1f}x"
        print(f"{label:26s} {line}")


if __name__ == "__main__":
    main()
