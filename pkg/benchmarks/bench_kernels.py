#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the four hot kernels on realistic workloads (a full-grid mass
combination, one dense scan's ray walk, the per-frame particle reductions)
plus one complete filter frame, and prints the speedup of the compiled
backend.  Usage::

    python benchmarks/bench_kernels.py [--repeat 20]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import dogmap._kernels as kernels
from dogmap.config import PipelineConfig
from dogmap.pipeline import PipelineRunner
from dogmap.scene import builtin_scene, simulate_frames


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _kernel_workloads(rng):
    n = 128
    n_flat = n * n
    occ_a = rng.random((n, n)) * 0.7
    free_a = (1 - occ_a) * rng.random((n, n))
    occ_b = rng.random((n, n)) * 0.7
    free_b = (1 - occ_b) * rng.random((n, n))

    beams = 1440
    angles = rng.uniform(0, 2 * np.pi, beams)
    ranges = rng.uniform(3.0, 60.0, beams)
    u = n / 2 + ranges * np.cos(angles) / 0.33359375
    v = n / 2 - ranges * np.sin(angles) / 0.33359375

    nu = 200_000
    ci = rng.integers(-1, n_flat, nu)
    w = rng.random(nu)
    vx = rng.normal(0, 3, nu)
    vy = rng.normal(0, 3, nu)

    pool_w = rng.random(nu + nu // 10)

    return {
        "combine_masses (128x128)": lambda m: m.combine_masses(occ_a, free_a, occ_b, free_b),
        "raytrace_labels (1440 beams)": lambda m: m.raytrace_labels(u, v, n),
        "accumulate_weights (2e5)": lambda m: m.accumulate_weights(ci, w, n_flat),
        "velocity_moments (2e5)": lambda m: m.velocity_moments(ci, w, vx, vy, n_flat),
        "systematic_resample (2.2e5)": lambda m: m.systematic_resample(pool_w, nu, 0.5),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    workloads = _kernel_workloads(rng)
    backends = kernels.available_backends()
    print(f"available backends: {backends}")
    header = f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for name, workload in workloads.items():
        times = {}
        for backend in backends:
            mod = kernels.get_backend(backend)
            times[backend] = _time(lambda: workload(mod), repeat)
        row = f"{name:34s}" + "".join(f"{times[b] * 1e3:10.3f}ms" for b in backends)
        if "native" in times:
            row += f"{times['pure'] / times['native']:9.1f}x"
        print(row)


def bench_pipeline_frame(repeat):
    scene = builtin_scene("crossing_vehicle")
    frames = [(state, cloud) for state, cloud, _ in simulate_frames(scene, frames=10)]
    print(f"\nfull pipeline frame (segment + raytrace + fuse + filter, "
          f"{PipelineConfig().filter.particle_count} particles):")
    for backend in kernels.available_backends():
        import dogmap.filter as filter_mod
        import dogmap.grid as grid_mod
        import dogmap.measurement as measurement_mod

        mod = kernels.get_backend(backend)
        patched = {
            filter_mod: ("accumulate_weights", "combine_masses", "systematic_resample", "velocity_moments"),
            grid_mod: ("combine_masses",),
            measurement_mod: ("raytrace_labels",),
        }
        originals = {(m, name): getattr(m, name) for m, names in patched.items() for name in names}
        try:
            for (m, name) in originals:
                setattr(m, name, getattr(mod, name))
            best = float("inf")
            for _ in range(repeat):
                runner = PipelineRunner(PipelineConfig())
                start = time.perf_counter()
                for state, cloud in frames:
                    runner.process(cloud, state.ego_pose)
                best = min(best, (time.perf_counter() - start) / len(frames))
        finally:
            for (m, name), fn in originals.items():
                setattr(m, name, fn)
        print(f"  {backend:8s} {best * 1e3:8.2f} ms/frame")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20, help="timing repetitions (best-of)")
    args = parser.parse_args()
    bench_kernels(args.repeat)
    bench_pipeline_frame(max(3, args.repeat // 4))


if __name__ == "__main__":
    main()
