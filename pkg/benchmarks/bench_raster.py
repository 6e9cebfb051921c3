"""Forward and backward rasterizer timings, numba kernels against the numpy fallback.

    python3 benchmarks/bench_raster.py [--sizes 64,128] [--counts 256,4096] [--repeat 5]

Each row reports the median wall time over ``--repeat`` runs after one warm-up
call (which also absorbs numba compilation) and checks that both backends
produce the same image and gradients.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from gsplat_distill._accel import HAS_NUMBA, use_backend
from gsplat_distill.raster import CloudGradients, render, render_backward
from gsplat_distill.scene import Camera, RenderSettings, init_sphere_cloud


def timed(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench(size: int, count: int, repeat: int) -> dict:
    rng = np.random.default_rng(0)
    base = init_sphere_cloud(count, 0.5, 0.3, seed=0)
    # anisotropic, rotated and coloured so every gradient class is non-trivial
    q = rng.standard_normal((count, 4))
    cloud = base.with_params(
        log_scales=base.log_scales + rng.uniform(-0.5, 0.5, (count, 3)),
        rotations=q / np.linalg.norm(q, axis=1, keepdims=True),
        colors=rng.uniform(0.0, 1.0, (count, 3)),
    )
    camera = Camera(30.0, 15.0, 1.0, 50.0, size, size)
    settings = RenderSettings(background=(1.0, 1.0, 1.0))
    cot = rng.standard_normal((size, size, 3))
    row = {"size": size, "count": count}
    outputs = {}
    for backend in ("numba", "numpy"):
        if backend == "numba" and not HAS_NUMBA:
            continue
        with use_backend(backend):
            row[f"{backend}_fwd"] = timed(lambda: render(cloud, camera, settings), repeat)
            row[f"{backend}_bwd"] = timed(lambda: render_backward(cloud, camera, settings, cot), repeat)
            outputs[backend] = (render(cloud, camera, settings).image, render_backward(cloud, camera, settings, cot))
    if len(outputs) == 2:
        (ia, ga), (ib, gb) = outputs["numba"], outputs["numpy"]
        diff = float(np.max(np.abs(ia - ib)))
        for f in CloudGradients.FIELDS:
            a, b = getattr(ga, f), getattr(gb, f)
            diff = max(diff, float(np.max(np.abs(a - b), initial=0.0)) / max(float(np.max(np.abs(b), initial=0.0)), 1e-30))
        row["max_diff"] = diff
    return row


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="64,128")
    ap.add_argument("--counts", default="256,4096")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'size':>5} {'count':>6} {'numba fwd':>10} {'numpy fwd':>10} {'numba bwd':>10} {'numpy bwd':>10} {'bwd x':>6} {'max diff':>9}")
    for size in (int(s) for s in args.sizes.split(",")):
        for count in (int(c) for c in args.counts.split(",")):
            r = bench(size, count, args.repeat)
            speed = r["numpy_bwd"] / r["numba_bwd"] if "numba_bwd" in r else float("nan")
            print(
                f"{size:5d} {count:6d} {r.get('numba_fwd', float('nan')):10.4f} {r['numpy_fwd']:10.4f} "
                f"{r.get('numba_bwd', float('nan')):10.4f} {r['numpy_bwd']:10.4f} {speed:6.1f} {r.get('max_diff', float('nan')):9.2e}"
            )


if __name__ == "__main__":
    main()
