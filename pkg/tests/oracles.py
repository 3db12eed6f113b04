"""Independent reference implementations used only by the tests.

None of these share code paths with the package: visibility is brute-force ray casting,
projections are rebuilt from the camera basis vectors, and so on.
"""

import numpy as np


def camera_basis():
    """Screen right, screen up and toward-camera unit vectors from first principles."""
    n = np.array([1.0, 1.0, 1.0])
    n /= np.linalg.norm(n)
    z = np.array([0.0, 0.0, 1.0])
    up = z - (z @ n) * n
    up /= np.linalg.norm(up)
    # image x along n x up: the mirror image of a physical camera, matching the
    # package's fixed convention (right, up, toward-camera is left-handed)
    right = np.cross(n, up)
    return right, up, n


def project_ref(p, scale, principal):
    right, up, _ = camera_basis()
    p = np.asarray(p, dtype=float)
    return np.array([principal[0] + scale * (p @ right), principal[1] - scale * (p @ up)])


def ray_cast_visibility(world_tris, codes, cam):
    """Per pixel-center: minimal forward depth over all triangles hit, and its code.

    Each pixel's ray starts on the image plane and travels along -(1,1,1)/sqrt(3).
    Returns (depth, code, second_best_gap) where the gap is the depth difference to the
    nearest hit of a different code (inf if none), so ties can be excluded.
    """
    right, up, n = camera_basis()
    fwd = -n
    s = cam.pixels_per_world_unit
    cx, cy = cam.principal_point
    H, W = cam.image_height, cam.image_width
    depth = np.full((H, W), np.inf)
    code = np.full((H, W), -1)
    gap = np.full((H, W), np.inf)
    v0, v1, v2 = world_tris[:, 0], world_tris[:, 1], world_tris[:, 2]
    e1, e2 = v1 - v0, v2 - v0
    pvec = np.cross(fwd, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-12
    for r in range(H):
        for c in range(W):
            a = (c + 0.5 - cx) / s
            b = -(r + 0.5 - cy) / s
            origin = a * right + b * up + cam.depth_offset * n
            tvec = origin - v0
            with np.errstate(divide="ignore", invalid="ignore"):
                u = np.einsum("ij,ij->i", tvec, pvec) / det
                qvec = np.cross(tvec, e1)
                v = (qvec @ fwd) / det
                t = np.einsum("ij,ij->i", e2, qvec) / det
            hit = ok & (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1 + 1e-9)
            if not hit.any():
                continue
            ts = t[hit]
            cs = codes[hit]
            k = np.argmin(ts)
            depth[r, c] = ts[k]
            code[r, c] = cs[k]
            other = ts[cs != cs[k]]
            gap[r, c] = (other.min() - ts[k]) if other.size else np.inf
    return depth, code, gap


def gaussian_2d(size, sigma):
    """Normalized size x size Gaussian built as an outer product of 1-D weights."""
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def blur_replicate_ref(field, kernel):
    """Explicit loop correlation with edge replication."""
    k = kernel.shape[0] // 2
    H, W = field.shape
    padded = np.pad(field, k, mode="edge")
    out = np.zeros_like(field, dtype=float)
    for i in range(kernel.shape[0]):
        for j in range(kernel.shape[1]):
            out += kernel[i, j] * padded[i:i + H, j:j + W]
    return out


def harmonic_reference(values, known, iterations=20000):
    """Jacobi iteration of 4-neighbour averaging with zero-flux borders."""
    v = np.where(known, values, values[known].mean()).astype(float)
    H, W = v.shape
    for _ in range(iterations):
        p = np.pad(v, 1, mode="edge")
        avg = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]) / 4.0
        new = np.where(known, values, avg)
        if np.abs(new - v).max() < 1e-13:
            return new
        v = new
    return v
