"""From an isometric frame to heightmap, splatmap and object placements.

Stages: basemap completion (object pixels filled from the surrounding ground),
reprojection to a top-down height grid, water lowering, texture splat extraction and
per-object footprint / height estimation in the ground-rectified view.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from . import kernels
from .camera import GroundRectifyMap, IsometricCamera, height_pixels_per_unit, unproject_depth
from .scene import CATEGORIES, CATEGORY_NAMES, Footprint, Heightmap, ObjectPlacement, Splatmap, WaterRegion

log = logging.getLogger(__name__)

DEFAULT_SPLAT_CHANNELS = ("grass", "rock", "sand", "road", "water")


# ---------------------------------------------------------------------------
# hole filling


def harmonic_fill(values, known, domain=None):
    """Fill ``domain & ~known`` with the discrete harmonic interpolant of the known values.

    This is the fixed point of repeated 4-neighbour averaging; it is solved directly.
    Neighbours outside ``domain`` are ignored (zero-flux borders). Unknown components
    that touch no known pixel take their nearest known value.
    """
    values = np.asarray(values, dtype=float)
    known = np.asarray(known, dtype=bool)
    domain = np.ones(known.shape, dtype=bool) if domain is None else np.asarray(domain, dtype=bool) | known
    if not known.any():
        raise ValueError("no known values to fill from")
    squeeze = values.ndim == 2
    vals = values[..., None] if squeeze else values
    out = vals.copy()
    unknown = domain & ~known
    if not unknown.any():
        return out[..., 0] if squeeze else out

    H, W = known.shape
    index = -np.ones((H, W), dtype=np.int64)
    rows, cols = np.nonzero(unknown)
    n = len(rows)
    index[rows, cols] = np.arange(n)
    diag = np.zeros(n)
    rhs = np.zeros((n, vals.shape[2]))
    ii, jj = [], []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        r2 = rows + dr
        c2 = cols + dc
        inside = (r2 >= 0) & (r2 < H) & (c2 >= 0) & (c2 < W)
        src = np.nonzero(inside)[0]
        r2, c2 = r2[inside], c2[inside]
        in_dom = domain[r2, c2]
        src, r2, c2 = src[in_dom], r2[in_dom], c2[in_dom]
        diag[src] += 1.0
        nb_known = known[r2, c2]
        np.add.at(rhs, src[nb_known], vals[r2[nb_known], c2[nb_known]])
        ii.append(src[~nb_known])
        jj.append(index[r2[~nb_known], c2[~nb_known]])
    ii = np.concatenate(ii)
    jj = np.concatenate(jj)

    # components with no known neighbour would make the system singular
    comp, ncomp = ndimage.label(unknown)
    touching = np.zeros(ncomp + 1, dtype=bool)
    border = ndimage.binary_dilation(known) & unknown
    touching[np.unique(comp[border])] = True
    orphan = ~touching[comp[rows, cols]]
    if orphan.any():
        _, (nr, nc) = ndimage.distance_transform_edt(~known, return_indices=True)
        fixed = vals[nr[rows, cols], nc[rows, cols]]
        # orphans become Dirichlet rows
        keep = ~orphan[ii]
        ii, jj = ii[keep], jj[keep]
        diag[orphan] = 1.0
        rhs[orphan] = fixed[orphan]

    A = sparse.csr_matrix((np.r_[diag, -np.ones(len(ii))], (np.r_[np.arange(n), ii], np.r_[np.arange(n), jj])),
                          shape=(n, n))
    sol = spsolve(A.tocsc(), rhs)
    out[rows, cols] = sol.reshape(n, -1)
    return out[..., 0] if squeeze else out


def nearest_fill(labels, known):
    """Copy each unknown pixel's label from its nearest known pixel."""
    _, (nr, nc) = ndimage.distance_transform_edt(~np.asarray(known, dtype=bool), return_indices=True)
    return np.asarray(labels)[nr, nc]


def complete_basemap(frame, fg_mask):
    """Remove foreground objects: fill their pixels from surrounding background.

    Color and depth are filled harmonically, labels by nearest background pixel. The
    returned frame has no instances.
    """
    from .fixtures import IsometricFrame

    fg = np.asarray(fg_mask, dtype=bool)
    known = frame.valid & ~fg
    if not known.any():
        raise ValueError("no background context")
    if not fg.any():
        return IsometricFrame(frame.color.copy(), frame.depth.copy(), frame.valid.copy(),
                              frame.semantic.copy(), [], frame.camera, dict(frame.meta))
    domain = frame.valid | fg
    stacked = np.concatenate([frame.depth[..., None], frame.color], axis=-1)
    filled = harmonic_fill(stacked, known, domain)
    depth = np.where(fg, filled[..., 0], frame.depth)
    color = np.where(fg[..., None], filled[..., 1:], frame.color)
    semantic = frame.semantic.copy()
    semantic[fg] = nearest_fill(frame.semantic, known)[fg]
    return IsometricFrame(np.clip(color, 0, 1), depth, domain, semantic, [], frame.camera, dict(frame.meta))


# ---------------------------------------------------------------------------
# heightmap


@dataclass
class BevGrid:
    origin: tuple[float, float]
    cell_size: float
    shape: tuple[int, int]  # (ny, nx) nodes

    @classmethod
    def from_meta(cls, meta):
        return cls(tuple(meta["origin"]), float(meta["cell_size"]), tuple(meta["shape"]))

    @classmethod
    def covering(cls, xy, cell_size):
        lo = np.floor(xy.min(axis=0) / cell_size) * cell_size
        hi = np.ceil(xy.max(axis=0) / cell_size) * cell_size
        n = np.rint((hi - lo) / cell_size).astype(int) + 1
        return cls((float(lo[0]), float(lo[1])), float(cell_size), (int(n[1]), int(n[0])))


def heights_from_bev_depth(bev_depth):
    """h = d_max - d for a top-down depth raster."""
    d = np.asarray(bev_depth, dtype=float)
    return float(d.max()) - d


def bev_splat(points, labels, grid: BevGrid, supersample=2):
    """Top-down max-Z splat on a grid ``supersample`` times finer than ``grid``.

    Returns (z, label, hit) on the fine grid; empty cells have hit=False.
    """
    fine = grid.cell_size / supersample
    ny = (grid.shape[0] - 1) * supersample + 1
    nx = (grid.shape[1] - 1) * supersample + 1
    fi = np.rint((points[:, 0] - grid.origin[0]) / fine).astype(np.int64)
    fj = np.rint((points[:, 1] - grid.origin[1]) / fine).astype(np.int64)
    ok = (fi >= 0) & (fi < nx) & (fj >= 0) & (fj < ny)
    cell = np.ascontiguousarray(fj[ok] * nx + fi[ok], dtype=np.int64)
    z = np.full(ny * nx, -np.inf)
    lab = np.zeros(ny * nx, dtype=np.int64)
    kernels.splat_max(cell, np.ascontiguousarray(points[ok, 2], dtype=np.float64),
                      np.ascontiguousarray(labels[ok], dtype=np.int64), z, lab)
    z = z.reshape(ny, nx)
    return z, lab.reshape(ny, nx), np.isfinite(z)


@dataclass
class HeightmapResult:
    heightmap: Heightmap
    bev_depth: np.ndarray
    bev_labels: np.ndarray
    coverage: float


def extract_heightmap(frame, cam: IsometricCamera | None = None, grid: BevGrid | None = None,
                      cell_size=1.0, supersample=2) -> HeightmapResult:
    """Reproject a completed frame to a top-down heightmap on ``grid`` nodes."""
    cam = cam or frame.camera
    pts = unproject_depth(frame.depth, frame.valid, cam, semantic=frame.semantic)
    if len(pts) == 0:
        raise ValueError("empty point set")
    if grid is None:
        grid = BevGrid.covering(pts.points[:, :2], cell_size)
    z, lab, hit = bev_splat(pts.points, pts.attributes["semantic"].astype(np.int64), grid, supersample)
    if not hit.any():
        raise ValueError("no points fall inside the heightmap grid")
    coverage = float(hit.mean())
    z = harmonic_fill(np.where(hit, z, 0.0), hit)
    lab = nearest_fill(lab, hit)
    z = z[::supersample, ::supersample]
    lab = lab[::supersample, ::supersample].astype(np.uint8)
    # top-down camera just above the highest sample
    cam_height = float(z.max()) + 1.0
    bev_depth = cam_height - z
    h = heights_from_bev_depth(bev_depth)
    datum = cam_height - float(bev_depth.max())
    hm = Heightmap(h, grid.cell_size, datum, grid.origin)
    return HeightmapResult(hm, bev_depth, lab, coverage)


def _region_boundary(region):
    grown = ndimage.binary_dilation(region, structure=ndimage.generate_binary_structure(2, 1))
    return grown & ~region


def lower_water(hm: Heightmap, regions, bed_offset=0.5):
    """Push terrain inside each water region below its level.

    The level of a region is the minimum height on its outer 4-neighbour boundary;
    inside, h := min(h, level - bed_offset). Regions are node masks or WaterRegions.
    Returns the new heightmap and the per-region levels.
    """
    values = hm.values.copy()
    levels = []
    for reg in regions:
        mask = reg.node_mask(hm) if isinstance(reg, WaterRegion) else np.asarray(reg, dtype=bool)
        if mask.shape != hm.shape:
            raise ValueError("water region mask does not match heightmap")
        boundary = _region_boundary(mask)
        if not boundary.any():
            raise ValueError("water region has an empty boundary")
        level = float(values[boundary].min()) + hm.datum
        values[mask] = np.minimum(values[mask], level - bed_offset - hm.datum)
        levels.append(level)
    return Heightmap(values, hm.cell_size, hm.datum, hm.origin), levels


def water_regions_from_labels(labels, hm: Heightmap):
    """Connected water components as node masks plus bounding-rectangle polygons."""
    comp, n = ndimage.label(np.asarray(labels) == CATEGORIES["water"])
    masks, polys = [], []
    xs, ys = hm.node_xy()
    half = hm.cell_size / 2.0
    for k in range(1, n + 1):
        m = comp == k
        x0, x1 = xs[m].min() - half, xs[m].max() + half
        y0, y1 = ys[m].min() - half, ys[m].max() + half
        masks.append(m)
        polys.append([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    return masks, polys


# ---------------------------------------------------------------------------
# splatmap


def feather_kernel(size=5, sigma=1.0):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


def extract_splatmap(bev_labels, table, feather=5, sigma=1.0) -> Splatmap:
    """One-hot texture channels from a top-down label raster, feathered and renormalized.

    ``table`` maps label id -> channel category name; channels keep first-seen order.
    """
    labels = np.asarray(bev_labels)
    present = np.unique(labels)
    missing = [int(v) for v in present if int(v) not in table]
    if missing:
        names = [CATEGORY_NAMES.get(v, str(v)) for v in missing]
        raise ValueError(f"unmapped labels: {', '.join(f'{v} ({n})' for v, n in zip(missing, names))}")
    channels = list(dict.fromkeys(table.values()))
    onehot = np.zeros(labels.shape + (len(channels),))
    for lab, name in table.items():
        onehot[..., channels.index(name)] += labels == lab
    if feather and feather > 1:
        k = feather_kernel(feather, sigma)
        onehot = np.stack([ndimage.correlate(onehot[..., c], k, mode="nearest") for c in range(len(channels))], -1)
    onehot /= onehot.sum(axis=-1, keepdims=True)
    return Splatmap(onehot, channels)


def splat_from_labels(labels, channels=DEFAULT_SPLAT_CHANNELS, feather=5, sigma=1.0) -> Splatmap:
    return extract_splatmap(labels, {CATEGORIES[c]: c for c in channels}, feather, sigma)


# ---------------------------------------------------------------------------
# objects


def mask_bbox(mask):
    """Pixel-edge bounding box (col0, row0, col1, row1) of a mask; col1/row1 exclusive."""
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise ValueError("empty instance mask")
    return (float(cols.min()), float(rows.min()), float(cols.max() + 1), float(rows.max() + 1))


def _line_crossings(corners, axis, value):
    """Coordinates along the other axis where the closed polygon crosses ``axis == value``."""
    out = []
    n = len(corners)
    for k in range(n):
        a, b = corners[k], corners[(k + 1) % n]
        da, db = a[axis] - value, b[axis] - value
        if da == db:
            continue
        t = da / (da - db)
        if -1e-9 <= t <= 1 + 1e-9:
            out.append(a[1 - axis] + t * (b[1 - axis] - a[1 - axis]))
    return out


def estimate_footprint(mask, bbox, rectify: GroundRectifyMap) -> Footprint:
    """Footprint in the ground-rectified frame from an instance mask and its image bbox.

    (x1, y1) are the per-axis maxima of the warped mask. The far corners come from
    where y = y1 and x = x1 cross the warped bbox (a parallelogram): x2 is the lowest
    crossing of y = y1 and y2 the lowest crossing of x = x1.
    """
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise ValueError("empty instance mask")
    c0, r0, c1, r1 = bbox
    if c1 <= c0 or r1 <= r0:
        raise ValueError("degenerate bounding box")
    g = rectify.rectify(np.stack([cols + 0.5, rows + 0.5], -1))
    x1 = g[:, 0].max()
    y1 = g[:, 1].max()
    corners = rectify.rectify(np.array([[c0, r0], [c1, r0], [c1, r1], [c0, r1]], dtype=float))
    xs = _line_crossings(corners, 1, y1)
    ys = _line_crossings(corners, 0, x1)
    if not xs or not ys:
        raise ValueError("mask extremes fall outside the warped bounding box")
    x2 = min(min(xs), x1)
    y2 = min(min(ys), y1)
    if not (x2 < x1 and y2 < y1):
        raise ValueError("degenerate footprint")
    return Footprint(float(x2), float(x1), float(y2), float(y1), 0.0)


def estimate_height(mask, footprint: Footprint, rectify: GroundRectifyMap, cam: IsometricCamera):
    """Object height from its silhouette.

    Two estimates are formed. The row estimate measures from the mask top down to the
    footprint's back corner warped into the image (where the far vertical edge meets the
    ground). The area estimate inverts the projected area of an a x b x h box,
    s^2 (ab + ah + bh) / sqrt(3); it averages quantization over the whole silhouette and
    is preferred when both agree within one pixel of height.
    """
    m = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(m)
    if len(rows) == 0:
        raise ValueError("empty instance mask")
    hppu = height_pixels_per_unit(cam)
    back = rectify.unrectify(np.array([footprint.x2, footprint.y2]))
    # top edge of the first covered row
    extent = back[1] - float(rows.min())
    if extent < -1.0:
        raise ValueError("inconsistent extrusion")
    by_rows = max(extent, 0.0) / hppu

    a, b = footprint.size
    area = len(rows) / cam.pixels_per_world_unit**2
    by_area = (np.sqrt(3.0) * area - a * b) / (a + b)
    if by_area >= 0.0 and abs(by_area - by_rows) <= 1.0 / hppu:
        return float(by_area)
    return float(by_rows)


def locate_on_terrain(footprint: Footprint, hm: Heightmap, iterations=50):
    """Lift a ground-level rectified footprint onto the terrain.

    A point at elevation e appears at rectified (X - e, Y - e), so the true footprint is
    the rectified one shifted by (e, e) where e is the terrain height under its center.
    """
    cx, cy = footprint.center
    e = float(hm.sample(cx, cy))
    for _ in range(iterations):
        e_new = float(hm.sample(cx + e, cy + e))
        if abs(e_new - e) < 1e-9:
            e = e_new
            break
        e = e_new
    fp = footprint.translated(e, e)
    return fp, float(hm.sample(*fp.center))


@dataclass
class PlacementDiagnostic:
    instance_id: int
    category: str
    status: str
    message: str = ""

    def to_dict(self):
        return {"instance_id": int(self.instance_id), "category": self.category, "status": self.status,
                "message": self.message}


def build_placements(frame, hm: Heightmap, rectify: GroundRectifyMap, cam: IsometricCamera | None = None,
                     asset_table: dict | None = None):
    """One placement per instance; failures are skipped and reported in diagnostics."""
    cam = cam or frame.camera
    asset_table = asset_table or {}
    placements, diags = [], []
    for inst in frame.instances:
        try:
            fp_ground = estimate_footprint(inst.mask, mask_bbox(inst.mask), rectify)
            height = estimate_height(inst.mask, fp_ground, rectify, cam)
            fp, base = locate_on_terrain(fp_ground, hm)
        except ValueError as exc:
            log.warning("instance %s skipped: %s", inst.instance_id, exc)
            diags.append(PlacementDiagnostic(inst.instance_id, inst.category, "skipped", str(exc)))
            continue
        placements.append(ObjectPlacement(inst.instance_id, inst.category, fp, height, base,
                                          asset_table.get(inst.category, inst.category)))
        diags.append(PlacementDiagnostic(inst.instance_id, inst.category, "ok"))
    return placements, diags


# ---------------------------------------------------------------------------
# full stage


@dataclass
class Understanding:
    heightmap: Heightmap
    splat: Splatmap
    placements: list
    water_regions: list
    bev_labels: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def understand(frame, grid: BevGrid | None = None, cell_size=1.0, bed_offset=0.5, supersample=2,
               channels=DEFAULT_SPLAT_CHANNELS, feather=5, asset_table=None) -> Understanding:
    """complete_basemap -> extract_heightmap -> lower_water -> extract_splatmap -> build_placements."""
    from .camera import ground_rectify_map

    cam = frame.camera
    if grid is None and "terrain_grid" in frame.meta:
        grid = BevGrid.from_meta(frame.meta["terrain_grid"])
    basemap = complete_basemap(frame, frame.foreground_mask())
    hres = extract_heightmap(basemap, cam, grid, cell_size, supersample)
    masks, polys = water_regions_from_labels(hres.bev_labels, hres.heightmap)
    hm, levels = lower_water(hres.heightmap, masks, bed_offset)
    labels = hres.bev_labels.copy()
    # labels the splat table cannot take (void, stray object pixels) borrow from neighbours
    ok = np.isin(labels, [CATEGORIES[c] for c in channels])
    if not ok.all():
        if not ok.any():
            raise ValueError("no terrain labels in the top-down view")
        labels = nearest_fill(labels, ok)
    splat = splat_from_labels(labels, channels, feather)
    placements, pdiag = build_placements(frame, hm, ground_rectify_map(cam), cam, asset_table)
    water = [WaterRegion(p, lv) for p, lv in zip(polys, levels)]
    diagnostics = {
        "bev_coverage": hres.coverage,
        "d_max": float(hres.bev_depth.max()),
        "instances": [d.to_dict() for d in pdiag],
        "water_levels": levels,
        "foreground_pixels": int(frame.foreground_mask().sum()),
    }
    return Understanding(hm, splat, placements, water, labels, diagnostics)
