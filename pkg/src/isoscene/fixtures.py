"""Seeded synthetic scenes and their exact isometric / top-down renderings.

The generator builds a smooth cosine-bump terrain, an optional water basin and a few
axis-aligned box objects on flattened pads. The renderer is an orthographic z-buffer,
so every raster it produces is ground truth for the understanding pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .camera import IsometricCamera, point_depth, project, unproject
from .scene import (
    CATEGORIES,
    CATEGORY_NAMES,
    Footprint,
    Heightmap,
    ObjectPlacement,
    SceneDescriptor,
    WaterRegion,
    bilinear,
    palette_array,
)
from .understanding import splat_from_labels

TERRAIN_ID = 0
WATER_ID = 1
OBJECT_ID0 = 2


@dataclass
class FixtureConfig:
    cells_x: int = 64
    cells_y: int = 64
    cell_size: float = 1.0
    object_count: int | None = None  # None: uniform in [min_objects, max_objects]
    min_objects: int = 1
    max_objects: int = 5
    bump_count: int = 4
    bump_height: tuple[float, float] = (2.0, 7.0)
    bump_radius: tuple[float, float] = (8.0, 18.0)
    max_slope: float = 0.35
    base_height: float = 2.0
    water_probability: float = 0.5
    water_size: tuple[float, float] = (8.0, 14.0)
    bed_offset: float = 0.5
    road_probability: float = 0.5
    object_size: tuple[float, float] = (3.0, 7.0)
    object_height: tuple[float, float] = (2.0, 8.0)
    image_size: int = 512

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for k, v in d.items():
            if k not in cls.__dataclass_fields__:
                raise ValueError(f"unknown fixture option {k!r}")
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


@dataclass
class Instance:
    instance_id: int
    category: str
    mask: np.ndarray  # (H, W) bool


@dataclass
class IsometricFrame:
    color: np.ndarray  # (H, W, 3) float in [0, 1]
    depth: np.ndarray  # (H, W) forward-axis depth, 0 where invalid
    valid: np.ndarray  # (H, W) bool
    semantic: np.ndarray  # (H, W) uint8 category ids
    instances: list[Instance]
    camera: IsometricCamera
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.depth.shape

    def foreground_mask(self):
        fg = np.zeros(self.shape, dtype=bool)
        for inst in self.instances:
            fg |= inst.mask
        return fg


# ---------------------------------------------------------------------------
# generation


def _bump_field(xs, ys, bumps):
    z = np.zeros_like(xs, dtype=float)
    for cx, cy, radius, amp in bumps:
        r = np.hypot(xs - cx, ys - cy)
        z += np.where(r < radius, amp * 0.5 * (1.0 + np.cos(np.pi * r / radius)), 0.0)
    return z


def terrain_from_bumps(bumps, config: FixtureConfig | None = None, base=0.0):
    """Heightmap (datum 0) of ``base`` plus cosine bumps ``(cx, cy, radius, amplitude)``."""
    config = config or FixtureConfig()
    hm = Heightmap(np.zeros((config.cells_y + 1, config.cells_x + 1)), config.cell_size)
    xs, ys = hm.node_xy()
    return Heightmap(base + _bump_field(xs, ys, bumps), config.cell_size)


def _rect_nodes(xs, ys, x0, x1, y0, y1):
    return (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)


def _rects_overlap(a, b, gap=0.0):
    return not (a[1] + gap <= b[0] or b[1] + gap <= a[0] or a[3] + gap <= b[2] or b[3] + gap <= a[2])


def _boundary_nodes(region):
    """Nodes outside ``region`` that are 4-adjacent to it."""
    grown = region.copy()
    grown[1:, :] |= region[:-1, :]
    grown[:-1, :] |= region[1:, :]
    grown[:, 1:] |= region[:, :-1]
    grown[:, :-1] |= region[:, 1:]
    return grown & ~region


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def generate_random_scene(seed: int, config: FixtureConfig | None = None) -> SceneDescriptor:
    config = config or FixtureConfig()
    if config.cells_x <= 0 or config.cells_y <= 0 or config.cell_size <= 0:
        raise ValueError("empty scene domain")
    if config.cells_x < 16 or config.cells_y < 16:
        raise ValueError("fixture terrain needs at least 16x16 cells")
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cs = config.cell_size
    Lx, Ly = config.cells_x * cs, config.cells_y * cs

    bumps = []
    for _ in range(config.bump_count):
        radius = rng.uniform(*config.bump_radius)
        amp = rng.uniform(*config.bump_height) * (1.0 if rng.random() < 0.7 else -0.5)
        bumps.append([rng.uniform(0, Lx), rng.uniform(0, Ly), radius, amp])
    steep = sum(abs(a) * np.pi / (2.0 * r) for _, _, r, a in bumps)
    if steep > config.max_slope:
        for b in bumps:
            b[3] *= config.max_slope / steep
    terrain = terrain_from_bumps(bumps, config, base=config.base_height)
    xs, ys = terrain.node_xy()
    h = terrain.values.copy()
    hill = h - config.base_height

    labels = np.full(h.shape, CATEGORIES["grass"], dtype=np.uint8)
    labels[hill > 0.6 * max(hill.max(), 1e-9)] = CATEGORIES["rock"]
    if rng.random() < config.road_probability:
        along_x = rng.random() < 0.5
        pos = rng.uniform(0.2, 0.8) * (Ly if along_x else Lx)
        band = np.abs((ys if along_x else xs) - pos) <= 1.5
        labels[band] = CATEGORIES["road"]

    zones = []  # rectangles (x0, x1, y0, y1) that pads must avoid
    water_regions = []
    if rng.random() < config.water_probability:
        wx = rng.uniform(*config.water_size)
        wy = rng.uniform(*config.water_size)
        # snap corners to half cells so no node sits on the polygon boundary
        x0 = (np.floor(rng.uniform(4.0, Lx - wx - 4.0) / cs) + 0.5) * cs
        y0 = (np.floor(rng.uniform(4.0, Ly - wy - 4.0) / cs) + 0.5) * cs
        x1 = x0 + np.round(wx / cs) * cs
        y1 = y0 + np.round(wy / cs) * cs
        region = _rect_nodes(xs, ys, x0, x1, y0, y1)
        level = float(h[_boundary_nodes(region)].min())
        h[region] = level - config.bed_offset
        near = _rect_nodes(xs, ys, x0 - 2 * cs, x1 + 2 * cs, y0 - 2 * cs, y1 + 2 * cs) & ~region
        labels[near] = CATEGORIES["sand"]
        labels[region] = CATEGORIES["water"]
        water_regions.append(WaterRegion([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], level))
        zones.append((x0 - 3.0, x1 + 3.0, y0 - 3.0, y1 + 3.0))

    if config.object_count is not None:
        n_objects = int(config.object_count)
    else:
        n_objects = int(rng.integers(config.min_objects, config.max_objects + 1))
    objects = []
    shadows = []
    pad_margin, reach = 1.0, 4.0
    kinds = ["building", "tree", "bridge"]
    for k in range(n_objects):
        for _attempt in range(400):
            category = kinds[int(rng.choice(3, p=[0.6, 0.25, 0.15]))]
            sx, sy = rng.uniform(*config.object_size, size=2)
            height = rng.uniform(*config.object_height)
            x2 = rng.uniform(reach, Lx - reach - sx)
            y2 = rng.uniform(reach, Ly - reach - sy)
            zone = (x2 - reach, x2 + sx + reach, y2 - reach, y2 + sy + reach)
            if any(_rects_overlap(zone, z) for z in zones):
                continue
            inside = _rect_nodes(xs, ys, *zone)
            variation = float(h[inside].max() - h[inside].min())
            if variation > 0.5:
                continue
            base = float(bilinear(h, (x2 + sx / 2) / cs, (y2 + sy / 2) / cs))
            # rectified image footprint of the box; keep it over terrain so the ground
            # hidden behind the object exists
            shadow = (x2 - base - height, x2 + sx - base, y2 - base - height, y2 + sy - base)
            if shadow[0] < 1.0 or shadow[2] < 1.0:
                continue
            if any(_rects_overlap(shadow, s, gap=1.5) for s in shadows):
                continue
            break
        else:
            break
        # flatten a pad under the footprint, blending back over ``blend`` metres
        blend = max(2.0, 6.0 * variation)
        dx = np.maximum(np.maximum(x2 - pad_margin - xs, xs - (x2 + sx + pad_margin)), 0.0)
        dy = np.maximum(np.maximum(y2 - pad_margin - ys, ys - (y2 + sy + pad_margin)), 0.0)
        w = 1.0 - _smoothstep(np.hypot(dx, dy) / blend)
        h = h + (base - h) * w
        zones.append(zone)
        shadows.append(shadow)
        fp = Footprint(float(x2), float(x2 + sx), float(y2), float(y2 + sy))
        objects.append(ObjectPlacement(k + 1, category, fp, float(height), base, category))

    terrain = Heightmap(h, cs)
    splat = splat_from_labels(labels, [c for c in ("grass", "rock", "sand", "road", "water")])
    scene = SceneDescriptor(
        terrain=terrain,
        splat=splat,
        objects=objects,
        water_regions=water_regions,
        texture_assignments={c: f"{c}_01" for c in splat.channel_categories},
        rng_seed=int(seed),
    )
    lo, hi = scene.bounds()
    scene.camera = IsometricCamera.fit_to_bounds(lo, hi, config.image_size, config.image_size, margin=8.0)
    return scene


def make_scene(heights, cell_size=1.0, objects=(), water_regions=(), labels=None, image_size=512,
               camera=None, seed=0):
    """Hand-built scene for tests and examples; ``labels`` defaults to all grass."""
    terrain = Heightmap(np.asarray(heights, dtype=float), cell_size)
    if labels is None:
        labels = np.full(terrain.shape, CATEGORIES["grass"], dtype=np.uint8)
    splat = splat_from_labels(labels, ["grass", "rock", "sand", "road", "water"])
    scene = SceneDescriptor(terrain, splat, list(objects), list(water_regions),
                            {c: f"{c}_01" for c in splat.channel_categories}, seed)
    if camera is None:
        lo, hi = scene.bounds()
        camera = IsometricCamera.fit_to_bounds(lo, hi, image_size, image_size, margin=8.0)
    scene.camera = camera
    return scene


# ---------------------------------------------------------------------------
# rendering


def _terrain_triangles(hm: Heightmap):
    xs, ys = hm.node_xy()
    pts = np.stack([xs, ys, hm.absolute], axis=-1)
    v00 = pts[:-1, :-1].reshape(-1, 3)
    v10 = pts[:-1, 1:].reshape(-1, 3)
    v01 = pts[1:, :-1].reshape(-1, 3)
    v11 = pts[1:, 1:].reshape(-1, 3)
    return np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])


def box_triangles(fp: Footprint, base, height, bottom=False):
    """Triangles (n, 3, 3) of an axis-aligned box; the bottom face is optional."""
    x0, x1, y0, y1 = fp.x2, fp.x1, fp.y2, fp.y1
    z0, z1 = base, base + height
    c = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                  [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]])
    quads = [(4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
    if bottom:
        quads.append((0, 3, 2, 1))
    tris = []
    for a, b, cc, d in quads:
        tris += [(a, b, cc), (a, cc, d)]
    return c[np.array(tris)]


def scene_primitives(scene: SceneDescriptor):
    """World-space triangles and their primitive codes (terrain, water, object k)."""
    tris = [_terrain_triangles(scene.terrain)]
    codes = [np.full(len(tris[0]), TERRAIN_ID)]
    for w in scene.water_regions:
        poly = np.asarray(w.polygon, dtype=float)
        fan = np.array([[poly[0], poly[i], poly[i + 1]] for i in range(1, len(poly) - 1)])
        fan = np.concatenate([fan, np.full(fan.shape[:2] + (1,), w.water_level)], axis=-1)
        tris.append(fan)
        codes.append(np.full(len(fan), WATER_ID))
    for k, o in enumerate(scene.objects):
        bt = box_triangles(o.footprint, o.base_elevation, o.height)
        tris.append(bt)
        codes.append(np.full(len(bt), OBJECT_ID0 + k))
    return np.concatenate(tris), np.concatenate(codes).astype(np.int32)


def rasterize(world_tris, codes, cam: IsometricCamera):
    """Z-buffer world triangles; returns (depth with +inf background, code buffer with -1)."""
    px = project(world_tris, cam)
    d = point_depth(world_tris, cam)
    depth = np.full((cam.image_height, cam.image_width), np.inf)
    ids = np.full((cam.image_height, cam.image_width), -1, dtype=np.int32)
    kernels.rasterize_triangles(np.ascontiguousarray(px, dtype=np.float64),
                                np.ascontiguousarray(d, dtype=np.float64),
                                np.ascontiguousarray(codes, dtype=np.int32), depth, ids)
    return depth, ids


def label_grid(scene: SceneDescriptor):
    """Per-node category ids from the dominant splat channel."""
    lut = np.array([CATEGORIES[c] for c in scene.splat.channel_categories], dtype=np.uint8)
    return lut[scene.splat.dominant()]


def render_isometric(scene: SceneDescriptor, cam: IsometricCamera | None = None) -> IsometricFrame:
    cam = cam or scene.camera
    if cam is None:
        raise ValueError("no camera given")
    tris, codes = scene_primitives(scene)
    px = project(tris, cam).reshape(-1, 2)
    if (px[:, 0].min() < 0 or px[:, 1].min() < 0 or px[:, 0].max() > cam.image_width
            or px[:, 1].max() > cam.image_height):
        raise ValueError("scene not covered")
    depth, ids = rasterize(tris, codes, cam)
    valid = ids >= 0
    H, W = ids.shape
    palette = palette_array()
    semantic = np.zeros((H, W), dtype=np.uint8)
    color = np.zeros((H, W, 3))

    hm = scene.terrain
    labels = label_grid(scene)
    ter = ids == TERRAIN_ID
    if ter.any():
        rows, cols = np.nonzero(ter)
        world = unproject(np.stack([cols + 0.5, rows + 0.5], -1), depth[rows, cols], cam)
        fx = (world[:, 0] - hm.origin[0]) / hm.cell_size
        fy = (world[:, 1] - hm.origin[1]) / hm.cell_size
        ny, nx = hm.shape
        ni = np.clip(np.rint(fx).astype(int), 0, nx - 1)
        nj = np.clip(np.rint(fy).astype(int), 0, ny - 1)
        semantic[rows, cols] = labels[nj, ni]
        weights = bilinear(scene.splat.channels, fx, fy)
        tiles = palette[[CATEGORIES[c] for c in scene.splat.channel_categories]]
        color[rows, cols] = weights @ tiles
    wat = ids == WATER_ID
    semantic[wat] = CATEGORIES["water"]
    color[wat] = palette[CATEGORIES["water"]]

    instances = []
    for k, o in enumerate(scene.objects):
        mask = ids == OBJECT_ID0 + k
        cid = CATEGORIES[o.category]
        semantic[mask] = cid
        color[mask] = palette[cid]
        if mask.any():
            instances.append(Instance(o.instance_id, o.category, mask))

    depth = np.where(valid, depth, 0.0)
    return IsometricFrame(np.clip(color, 0.0, 1.0), depth, valid, semantic, instances, cam,
                          meta={"terrain_grid": grid_meta(hm)})


def grid_meta(hm: Heightmap):
    return {"origin": list(hm.origin), "cell_size": hm.cell_size, "shape": list(hm.shape)}


def render_bev(scene: SceneDescriptor):
    """Top-down view of the terrain alone: (color, absolute heights, category ids) per node."""
    palette = palette_array()
    tiles = palette[[CATEGORIES[c] for c in scene.splat.channel_categories]]
    color = scene.splat.channels @ tiles
    return color, scene.terrain.absolute.copy(), label_grid(scene)


def footprint_raster(footprints, hm: Heightmap):
    """Boolean node raster of the union of footprints (node inside or on the rectangle)."""
    xs, ys = hm.node_xy()
    out = np.zeros(hm.shape, dtype=bool)
    for fp in footprints:
        out |= _rect_nodes(xs, ys, fp.x2, fp.x1, fp.y2, fp.y1)
    return out


def category_of(cid):
    return CATEGORY_NAMES[int(cid)]
