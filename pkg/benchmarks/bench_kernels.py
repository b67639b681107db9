"""Time each hot kernel on both backends and report the speedup.

    python3 benchmarks/bench_kernels.py [--n 20000] [--repeat 5] [--json out.json]
"""
import argparse
import json
import sys
import timeit

import numpy as np

from mergemap import kernels
from mergemap.geometry import so3_exp


def _cases(n, rng):
    pts = rng.uniform(-20, 20, (n, 3))
    covs = kernels.sensor_covariances(pts, 0.02, np.deg2rad(0.05), impl=kernels.available_backends()["python"])
    rot = so3_exp(rng.normal(size=3))
    trans = rng.normal(size=3)
    crot = np.diag([1e-4, 2e-4, 3e-4])
    ctr = np.diag([1e-3, 1e-3, 2e-3])
    normals = rng.normal(size=(n, 3))
    axes = rng.integers(0, 3, n)
    pcovs = np.broadcast_to(np.eye(3) * 1e-4, (n, 3, 3)).copy()
    m = 50
    sub = pts[:m]
    ainv = np.linalg.inv(np.eye(3) * 10 + 1.0)
    return {
        "sensor_covariances": (kernels.sensor_covariances, (pts, 0.02, np.deg2rad(0.05))),
        "world_covariances": (kernels.world_covariances, (pts, covs, rot, trans, crot, ctr)),
        "voxel_keys": (kernels.voxel_keys, (pts, 0.5)),
        "plane_cov(50 pts)": (kernels.plane_cov, (sub, covs[:m], ainv, np.array([0.1, -0.2, 1.0]))),
        "point_plane_terms": (kernels.point_plane_terms, (pts, covs, rot, trans, normals, axes, pcovs)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000, help="points per batch")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results here")
    a = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; timing the NumPy fallback only", file=sys.stderr)
    cases = _cases(a.n, np.random.default_rng(0))
    rows = []
    print(f"{'kernel':<22}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}")
    for name, (fn, args) in cases.items():
        ms = {}
        for b, impl in backends.items():
            t = timeit.Timer(lambda: fn(*args, impl=impl))
            loops, _ = t.autorange()
            ms[b] = 1e3 * min(t.repeat(a.repeat, loops)) / loops
        speed = ms["python"] / ms["cython"] if "cython" in ms else float("nan")
        rows.append({"kernel": name, "n": a.n, **{f"{b}_ms": v for b, v in ms.items()}, "speedup": speed})
        print(f"{name:<22}" + "".join(f"{ms[b]:>14.3f}" for b in backends) + f"{speed:>10.1f}")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
