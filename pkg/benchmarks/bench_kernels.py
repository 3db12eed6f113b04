"""Time the compiled kernels against the numpy fallback on fixture-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--seed 0]

Both backends run on identical inputs; outputs are compared before timings are shown.
"""

import argparse
import timeit

import numpy as np

from isoscene import _kernels_py
from isoscene.camera import point_depth, project, unproject_depth
from isoscene.fixtures import generate_random_scene, render_isometric, scene_primitives
from isoscene.understanding import BevGrid

try:
    from isoscene import _kernels as _compiled
except ImportError:
    _compiled = None


def raster_case(seed):
    scene = generate_random_scene(seed)
    cam = scene.camera
    tris, codes = scene_primitives(scene)
    px = np.ascontiguousarray(project(tris, cam), dtype=np.float64)
    d = np.ascontiguousarray(point_depth(tris, cam), dtype=np.float64)
    codes = np.ascontiguousarray(codes, dtype=np.int32)
    shape = (cam.image_height, cam.image_width)

    def run(impl):
        depth = np.full(shape, np.inf)
        ids = np.full(shape, -1, dtype=np.int32)
        impl.rasterize_triangles(px, d, codes, depth, ids)
        return depth, ids

    return f"rasterize_triangles ({len(tris)} tris, {shape[1]}x{shape[0]})", run


def splat_case(seed):
    scene = generate_random_scene(seed)
    frame = render_isometric(scene)
    pts = unproject_depth(frame.depth, frame.valid, frame.camera, semantic=frame.semantic)
    grid = BevGrid.from_meta(frame.meta["terrain_grid"])
    fine = grid.cell_size / 2
    ny, nx = (grid.shape[0] - 1) * 2 + 1, (grid.shape[1] - 1) * 2 + 1
    fi = np.clip(np.rint((pts.points[:, 0] - grid.origin[0]) / fine).astype(np.int64), 0, nx - 1)
    fj = np.clip(np.rint((pts.points[:, 1] - grid.origin[1]) / fine).astype(np.int64), 0, ny - 1)
    cell = np.ascontiguousarray(fj * nx + fi)
    z = np.ascontiguousarray(pts.points[:, 2])
    lab = np.ascontiguousarray(pts.attributes["semantic"].astype(np.int64))

    def run(impl):
        zb = np.full(ny * nx, -np.inf)
        lb = np.zeros(ny * nx, dtype=np.int64)
        impl.splat_max(cell, z, lab, zb, lb)
        return zb, lb

    return f"splat_max ({len(z)} points, {ny}x{nx} cells)", run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])
    if _compiled is None:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':52s} {'backend':8s} {'best (ms)':>10s} {'speedup':>8s}")
    for case in (raster_case, splat_case):
        name, run = case(args.seed)
        outs = [run(impl) for _, impl in backends]
        for other in outs[1:]:
            for a, b in zip(outs[0], other):
                assert np.array_equal(a, b), f"{name}: backends disagree"
        base = None
        for label, impl in backends:
            best = min(timeit.repeat(lambda: run(impl), number=1, repeat=args.repeat)) * 1e3
            base = base or best
            print(f"{name:52s} {label:8s} {best:10.2f} {base / best:7.1f}x")


if __name__ == "__main__":
    main()
