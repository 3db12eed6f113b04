"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def rasterize_triangles(verts, depths, prim_ids, depth_buf, id_buf):
    H, W = depth_buf.shape
    for k in range(len(verts)):
        (x0, y0), (x1, y1), (x2, y2) = verts[k]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        inv = 1.0 / area
        c0 = max(int(np.ceil(min(x0, x1, x2) - 0.5)), 0)
        c1 = min(int(np.floor(max(x0, x1, x2) - 0.5)), W - 1)
        r0 = max(int(np.ceil(min(y0, y1, y2) - 0.5)), 0)
        r1 = min(int(np.floor(max(y0, y1, y2) - 0.5)), H - 1)
        if c1 < c0 or r1 < r0:
            continue
        px = np.arange(c0, c1 + 1)[None, :] + 0.5
        py = np.arange(r0, r1 + 1)[:, None] + 0.5
        w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) * inv
        w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) * inv
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        d0, d1, d2 = depths[k]
        z = w0 * d0 + w1 * d1 + w2 * d2
        sub = depth_buf[r0 : r1 + 1, c0 : c1 + 1]
        win = inside & (z < sub)
        sub[win] = z[win]
        id_buf[r0 : r1 + 1, c0 : c1 + 1][win] = prim_ids[k]


def splat_max(cell, z, labels, out_z, out_label):
    if len(cell) == 0:
        return
    # sort by cell, then z, then reversed index: the last entry per cell is the earliest maximum
    order = np.lexsort((np.arange(len(z))[::-1], z, cell))
    last = np.r_[cell[order][1:] != cell[order][:-1], True]
    top = order[last]
    better = z[top] > out_z[cell[top]]
    out_z[cell[top][better]] = z[top][better]
    out_label[cell[top][better]] = labels[top][better]
