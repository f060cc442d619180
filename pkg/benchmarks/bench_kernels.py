"""Compare the numba and pure-numpy kernels on representative workloads.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Both implementations are called directly, so the environment flag does not
matter here. The numba kernels are warmed up once before timing.
"""
import argparse
import time

import numpy as np

from graspsynth import _accel, kernels
from graspsynth.assets import TriMesh, default_probe
from graspsynth.renderer import Bvh


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(rng):
    q = rng.normal(size=(1000, 3))
    pts = rng.normal(size=(5000, 3))
    yield "nearest_distances 1000x5000", kernels.nearest_distances_nb, kernels.nearest_distances_np, (q, pts)

    mesh = default_probe().mesh
    v0, e1, e2 = mesh.triangle_arrays()
    cp = rng.uniform(mesh.vertices.min(0), mesh.vertices.max(0), (5000, 3))
    direction = np.array([0.577, 0.577, 0.578])
    yield (f"count_crossings 5000 pts / {mesh.n_triangles} tris", kernels.count_crossings_nb,
           kernels.count_crossings_np, (cp, direction, v0, e1, e2))

    n_tri = 5000
    verts = (rng.uniform(-1, 1, (n_tri, 1, 3)) + rng.normal(0, 0.05, (n_tri, 3, 3))).reshape(-1, 3)
    bvh = Bvh([TriMesh(verts, np.arange(3 * n_tri).reshape(-1, 3))])
    o = rng.uniform(-1.5, 1.5, (65536, 3))
    d = rng.uniform(-0.7, 0.7, (65536, 3)) - o
    args = (o, d, *bvh.kernel_arrays(), bvh.active_mask())
    yield f"trace_bvh 65536 rays / {n_tri} tris", kernels.trace_bvh_nb, kernels.trace_bvh_np, args


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<42} {'numba s':>9} {'numpy s':>9} {'speedup':>8}")
    for name, fn_nb, fn_np, fargs in workloads(rng):
        fn_nb(*fargs)
        t_nb = best_of(lambda: fn_nb(*fargs), args.repeat)
        t_np = best_of(lambda: fn_np(*fargs), args.repeat)
        print(f"{name:<42} {t_nb:9.4f} {t_np:9.4f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
