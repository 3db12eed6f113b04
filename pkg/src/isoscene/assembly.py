"""Heightmap + splatmap + placements -> textured terrain, scatter, proxies and a GLB bundle."""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import files, gltf
from .scene import CATEGORIES, PALETTE, TERRAIN_CATEGORIES, Heightmap, SceneDescriptor, Splatmap, bilinear

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# terrain mesh


@dataclass
class TerrainMesh:
    positions: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3) unit
    indices: np.ndarray  # (M, 3) int
    uvs: np.ndarray  # (N, 2)


def terrain_normals(values, cell_size=1.0):
    """Unit normals (-dz/dx, -dz/dy, 1) from central differences (one-sided at borders)."""
    gy, gx = np.gradient(np.asarray(values, dtype=float), cell_size)
    n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def grid_triangles(ny, nx):
    """Two counter-clockwise (seen from above) triangles per cell of an ny x nx node grid."""
    j, i = np.mgrid[0:ny - 1, 0:nx - 1]
    a = (j * nx + i).ravel()
    b = a + 1
    c = a + nx
    d = c + 1
    return np.concatenate([np.stack([a, b, c], 1), np.stack([b, d, c], 1)]).astype(np.int64)


def terrain_mesh(hm: Heightmap) -> TerrainMesh:
    ny, nx = hm.shape
    if ny < 2 or nx < 2:
        raise ValueError("terrain mesh needs at least a 2x2 heightmap")
    xs, ys = hm.node_xy()
    pos = np.stack([xs, ys, hm.absolute], axis=-1).reshape(-1, 3)
    nrm = terrain_normals(hm.values, hm.cell_size).reshape(-1, 3)
    u, v = np.meshgrid(np.arange(nx) / (nx - 1), np.arange(ny) / (ny - 1))
    return TerrainMesh(pos, nrm, grid_triangles(ny, nx), np.stack([u, v], -1).reshape(-1, 2))


# ---------------------------------------------------------------------------
# asset library


@dataclass(frozen=True)
class ScatterRule:
    kind: str
    density: float  # instances per square metre
    scale: tuple[float, float] = (0.8, 1.2)


@dataclass
class TextureTileLibrary:
    tiles: dict  # category -> list of (h, w, 3) float tiles
    tile_size: dict  # category -> tile world size (m)
    scatter: dict = field(default_factory=dict)  # category -> list of ScatterRule
    meshes: dict = field(default_factory=dict)  # object category -> "box" | "gable" | .obj path
    colors: dict = field(default_factory=dict)  # object or scatter kind -> rgb in [0, 1]
    tile_ids: dict = field(default_factory=dict)  # category -> list of ids; default <category>_01, ...

    def ids(self, category):
        return self.tile_ids.get(category) or [f"{category}_{k + 1:02d}" for k in range(len(self.tiles[category]))]

    def require(self, categories):
        missing = [c for c in categories if not self.tiles.get(c)]
        if missing:
            raise KeyError(f"no texture tile for {', '.join(missing)}")

    def tile(self, category, ref=None):
        """Tile by id or index; ``None`` or an unknown id gives the first tile."""
        tiles = self.tiles.get(category)
        if not tiles:
            raise KeyError(f"no texture tile for {category}")
        if isinstance(ref, str):
            ids = self.ids(category)
            ref = ids.index(ref) if ref in ids else 0
        return tiles[(ref or 0) % len(tiles)]

    def choose_tiles(self, seed=0):
        """Seeded pick of one tile id per category (the scene's texture assignments)."""
        out = {}
        for cat in sorted(self.tiles):
            h = _hash(np.array([_key(cat)], dtype=np.uint64), seed, 0x7E)[0]
            out[cat] = self.ids(cat)[int(h % np.uint64(len(self.tiles[cat])))]
        return out


def constant_tile(rgb, size=4):
    return np.broadcast_to(np.asarray(rgb, dtype=float), (size, size, 3)).copy()


def default_library():
    """Flat palette tiles, proxy meshes and a few scatter rules."""
    pal = {k: np.array(v) / 255.0 for k, v in PALETTE.items()}
    return TextureTileLibrary(
        tiles={c: [constant_tile(pal[c])] for c in TERRAIN_CATEGORIES},
        tile_size={c: 4.0 for c in TERRAIN_CATEGORIES},
        scatter={
            "grass": [ScatterRule("grass_tuft", 0.1), ScatterRule("flower", 0.02)],
            "rock": [ScatterRule("pebble", 0.05)],
            "sand": [ScatterRule("shrub", 0.01)],
        },
        meshes={"building": "gable", "tree": "box", "bridge": "box"},
        colors={"building": pal["building"], "tree": pal["tree"], "bridge": pal["bridge"],
                "grass_tuft": (0.3, 0.6, 0.2), "flower": (0.9, 0.4, 0.6), "pebble": (0.5, 0.5, 0.5),
                "shrub": (0.4, 0.5, 0.2)},
    )


def load_manifest(path):
    """Asset library from JSON.

    ``{"tile_size": 4, "categories": {"grass": {"tiles": ["g.png"] | "color": [r, g, b],
    "tile_size": 4, "scatter": [{"kind": ..., "density": ...}]}},
    "objects": {"building": {"mesh": "house.obj" | "box" | "gable", "color": [r, g, b]}}}``.
    Paths are relative to the manifest; colors are 0-255.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: asset manifest not found")
    d = files.read_json(path)
    base = path.parent
    tiles, sizes, scatter, meshes, colors, ids = {}, {}, {}, {}, {}, {}
    default_size = float(d.get("tile_size", 4.0))
    try:
        for cat, spec in d.get("categories", {}).items():
            if "tiles" in spec:
                tiles[cat] = [files.read_png(base / t)[..., :3].astype(float) / 255.0 for t in spec["tiles"]]
                ids[cat] = [Path(t).stem for t in spec["tiles"]]
            elif "color" in spec:
                tiles[cat] = [constant_tile(np.asarray(spec["color"], dtype=float) / 255.0)]
            sizes[cat] = float(spec.get("tile_size", default_size))
            scatter[cat] = [ScatterRule(r["kind"], float(r["density"]), tuple(r.get("scale", (0.8, 1.2))))
                            for r in spec.get("scatter", [])]
            for r in spec.get("scatter", []):
                if "color" in r:
                    colors[r["kind"]] = np.asarray(r["color"], dtype=float) / 255.0
        for cat, spec in d.get("objects", {}).items():
            mesh = spec.get("mesh", "box")
            meshes[cat] = mesh if mesh in ("box", "gable") else str(base / mesh)
            if "color" in spec:
                colors[cat] = np.asarray(spec["color"], dtype=float) / 255.0
    except (KeyError, TypeError, AttributeError) as exc:
        raise files.InputParseError(path, f"malformed asset manifest ({exc})") from exc
    return TextureTileLibrary(tiles, sizes, scatter, meshes, colors, ids)


# ---------------------------------------------------------------------------
# texture compositing


def sample_tile(tile, wx, wy, tile_size):
    """Wrap-around bilinear lookup of ``tile`` at world (wx, wy); the tile spans tile_size metres."""
    th, tw = tile.shape[:2]
    u = np.mod(wx, tile_size) / tile_size * tw - 0.5
    v = np.mod(wy, tile_size) / tile_size * th - 0.5
    i0 = np.floor(u).astype(int)
    j0 = np.floor(v).astype(int)
    tx = (u - i0)[..., None]
    ty = (v - j0)[..., None]
    i0 %= tw
    j0 %= th
    i1 = (i0 + 1) % tw
    j1 = (j0 + 1) % th
    a = tile[j0, i0] + tx * (tile[j0, i1] - tile[j0, i0])
    b = tile[j1, i0] + tx * (tile[j1, i1] - tile[j1, i0])
    return a + ty * (b - a)


def texture_grid(shape, out_resolution, cell_size=1.0, origin=(0.0, 0.0)):
    """Fractional node indices and world coordinates of each output pixel (corners on nodes)."""
    ny, nx = shape
    H, W = out_resolution
    fx = np.arange(W) * ((nx - 1) / (W - 1)) if W > 1 else np.zeros(1)
    fy = np.arange(H) * ((ny - 1) / (H - 1)) if H > 1 else np.zeros(1)
    FX, FY = np.meshgrid(fx, fy)
    return FX, FY, origin[0] + FX * cell_size, origin[1] + FY * cell_size


def composite_texture(splat: Splatmap, library: TextureTileLibrary, out_resolution, cell_size=1.0,
                      origin=(0.0, 0.0), assignments=None):
    """(H, W, 3) float raster: sum_k splat_k(p) * tile_k(p mod tile_size)."""
    library.require(splat.channel_categories)
    assignments = assignments or {}
    FX, FY, wx, wy = texture_grid(splat.channels.shape[:2], out_resolution, cell_size, origin)
    weights = bilinear(splat.channels, FX, FY)
    out = np.zeros(FX.shape + (3,))
    for k, cat in enumerate(splat.channel_categories):
        tile = library.tile(cat, assignments.get(cat))
        out += weights[..., k:k + 1] * sample_tile(tile, wx, wy, library.tile_size.get(cat, 4.0))
    return out


# ---------------------------------------------------------------------------
# scatter

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def splitmix64(x):
    # wrap-around arithmetic is intended
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _key(name):
    return CATEGORIES.get(name, zlib.crc32(name.encode()) + 256)


def _hash(cells, *keys):
    h = np.asarray(cells, dtype=np.uint64)
    for k in keys:
        h = splitmix64(h ^ np.uint64(int(k) & _MASK64))
    return splitmix64(h)


def hash_uniform(cells, *keys):
    """Uniform [0, 1) per cell from a chained splitmix64 of (cell, *keys)."""
    return (_hash(cells, *keys) >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class ScatterInstance:
    kind: str
    position: tuple[float, float, float]
    yaw: float
    scale: float
    category: str = ""


def scatter_vegetation(splat: Splatmap, hm: Heightmap, library: TextureTileLibrary, seed=0):
    """Jittered-grid scatter.

    Each rule uses a grid fine enough that density * cell_area <= 1. A cell spawns one
    instance iff hash(cell, category, kind, seed) < density * cell_area and the dominant
    splat channel at the cell center is the rule's category.
    """
    ny, nx = hm.shape
    cs = hm.cell_size
    out = []
    for k, cat in enumerate(splat.channel_categories):
        for rule in library.scatter.get(cat, []):
            if rule.density <= 0:
                continue
            sub = int(np.ceil(np.sqrt(rule.density) * cs))
            step = cs / sub
            p = rule.density * step * step
            gy, gx = (ny - 1) * sub, (nx - 1) * sub
            cells = np.arange(gy * gx, dtype=np.uint64)
            keys = (_key(cat), _key(rule.kind), seed)
            hit = hash_uniform(cells, *keys, 0) < p
            idx = np.nonzero(hit)[0]
            r, c = idx // gx, idx % gx
            dom = np.argmax(bilinear(splat.channels, (c + 0.5) / sub, (r + 0.5) / sub), axis=-1)
            idx, r, c = idx[dom == k], r[dom == k], c[dom == k]
            jx = hash_uniform(cells[idx], *keys, 1)
            jy = hash_uniform(cells[idx], *keys, 2)
            x = hm.origin[0] + (c + jx) * step
            y = hm.origin[1] + (r + jy) * step
            z = hm.sample(x, y)
            yaw = 2.0 * np.pi * hash_uniform(cells[idx], *keys, 3)
            lo, hi = rule.scale
            scale = lo + (hi - lo) * hash_uniform(cells[idx], *keys, 4)
            out.extend(ScatterInstance(rule.kind, (float(a), float(b), float(e)), float(w), float(s), cat)
                       for a, b, e, w, s in zip(x, y, z, yaw, scale))
    return out


# ---------------------------------------------------------------------------
# object proxies


def _unit_box_faces():
    v = np.array([[x, y, z] for z in (0.0, 1.0) for y in (-0.5, 0.5) for x in (-0.5, 0.5)])
    quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]]
    return v, quads


def _unit_gable_faces(eave=0.6):
    """Box walls up to ``eave`` with a roof ridge along x at full height."""
    v = np.array([
        [-0.5, -0.5, 0], [0.5, -0.5, 0], [0.5, 0.5, 0], [-0.5, 0.5, 0],
        [-0.5, -0.5, eave], [0.5, -0.5, eave], [0.5, 0.5, eave], [-0.5, 0.5, eave],
        [-0.5, 0.0, 1.0], [0.5, 0.0, 1.0],
    ])
    faces = [[0, 3, 2, 1], [0, 1, 5, 4], [2, 3, 7, 6], [1, 2, 6, 9, 5], [3, 0, 4, 8, 7],
             [4, 5, 9, 8], [6, 7, 8, 9]]
    return v, faces


def load_obj(path):
    """Vertices and polygon faces of a Wavefront .obj (positions only)."""
    path = Path(path)
    verts, faces = [], []
    try:
        for line in path.read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(t) for t in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(t.split("/")[0]) for t in parts[1:]])
    except (ValueError, UnicodeDecodeError) as exc:
        raise files.InputParseError(path, f"cannot parse OBJ ({exc})") from exc
    v = np.array(verts, dtype=float)
    if len(v) == 0 or not faces:
        raise files.InputParseError(path, "OBJ has no geometry")
    n = len(v)
    faces = [[i - 1 if i > 0 else n + i for i in f] for f in faces]
    if any(not 0 <= i < n for f in faces for i in f):
        raise files.InputParseError(path, "OBJ face index out of range")
    # normalize to the unit proxy frame: [-0.5, 0.5]^2 x [0, 1]
    lo, hi = v.min(axis=0), v.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    v = (v - lo) / span
    v[:, :2] -= 0.5
    return v, faces


def triangle_soup(vertices, faces):
    """Fan-triangulate polygons; every triangle gets its own three vertices."""
    tris = [[f[0], f[k], f[k + 1]] for f in faces for k in range(1, len(f) - 1)]
    return np.asarray(vertices, dtype=float)[np.array(tris)]


def flat_mesh(tri_positions):
    """Positions, unit face normals and indices for an (M, 3, 3) triangle soup.

    Degenerate triangles are dropped.
    """
    e1 = tri_positions[:, 1] - tri_positions[:, 0]
    e2 = tri_positions[:, 2] - tri_positions[:, 0]
    n = np.cross(e1, e2)
    ln = np.linalg.norm(n, axis=1)
    keep = ln > 1e-12
    tri_positions, n = tri_positions[keep], n[keep] / ln[keep, None]
    m = len(tri_positions)
    return (tri_positions.reshape(-1, 3), np.repeat(n, 3, axis=0),
            np.arange(3 * m, dtype=np.int64).reshape(m, 3))


@dataclass
class ObjectMesh:
    instance_id: int
    category: str
    positions: np.ndarray
    normals: np.ndarray
    indices: np.ndarray
    color: tuple

    def aabb(self):
        return self.positions.min(axis=0), self.positions.max(axis=0)


def proxy_shape(kind):
    if kind == "box":
        return _unit_box_faces()
    if kind == "gable":
        return _unit_gable_faces()
    return load_obj(kind)


def place_objects(placements, library: TextureTileLibrary):
    """Scale a unit proxy to footprint x height, rotate by yaw, move onto the base.

    Returns (meshes, diagnostics); categories without a proxy fall back to a box.
    """
    meshes, diags = [], []
    for p in placements:
        kind = library.meshes.get(p.category)
        status = "ok"
        if kind is None:
            kind = "box"
            status = "fallback"
            diags.append({"instance_id": int(p.instance_id), "category": p.category, "status": status,
                          "message": f"no proxy mesh for category {p.category!r}, using a box"})
        v, faces = proxy_shape(kind)
        sx, sy = p.footprint.size
        cx, cy = p.footprint.center
        c, s = np.cos(p.footprint.yaw), np.sin(p.footprint.yaw)
        local = v * np.array([sx, sy, p.height])
        world = np.stack([c * local[:, 0] - s * local[:, 1] + cx,
                          s * local[:, 0] + c * local[:, 1] + cy,
                          local[:, 2] + p.base_elevation], axis=-1)
        pos, nrm, idx = flat_mesh(triangle_soup(world, faces))
        color = tuple(float(x) for x in library.colors.get(p.category, np.array(PALETTE.get(p.category, (200, 200, 200))) / 255.0))
        meshes.append(ObjectMesh(p.instance_id, p.category, pos, nrm, idx, color))
        if status == "ok":
            diags.append({"instance_id": int(p.instance_id), "category": p.category, "status": status,
                          "message": ""})
    return meshes, diags


def scatter_proxy():
    """Unit-height four-sided pyramid used for every scatter kind."""
    v = np.array([[-0.25, -0.25, 0], [0.25, -0.25, 0], [0.25, 0.25, 0], [-0.25, 0.25, 0], [0, 0, 1.0]])
    faces = [[0, 3, 2, 1], [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]
    return flat_mesh(triangle_soup(v, faces))


# ---------------------------------------------------------------------------
# export


def build_glb(terrain: TerrainMesh, texture, objects, scatter, library: TextureTileLibrary | None = None):
    """GLB bytes: node 0 terrain, then one node per object, then one node per scatter instance."""
    library = library or default_library()
    b = gltf.GlbBuilder()
    tex = b.add_texture_material(files.png_bytes(files.to_uint8(texture)), "terrain")
    b.add_node(b.add_mesh(terrain.positions, terrain.normals, terrain.indices, terrain.uvs, tex, "terrain"),
               "terrain")
    materials = {}
    for o in objects:
        if o.color not in materials:
            materials[o.color] = b.add_color_material(o.color, o.category)
        mesh = b.add_mesh(o.positions, o.normals, o.indices, None, materials[o.color], f"object_{o.instance_id}")
        b.add_node(mesh, f"object_{o.instance_id}")
    proxy = scatter_proxy()
    kind_mesh = {}
    for s in scatter:
        if s.kind not in kind_mesh:
            color = tuple(float(x) for x in library.colors.get(s.kind, (0.5, 0.5, 0.5)))
            kind_mesh[s.kind] = b.add_mesh(*proxy, None, b.add_color_material(color, s.kind), s.kind)
        b.add_node(kind_mesh[s.kind], s.kind, translation=s.position, rotation=s.yaw, scale=s.scale)
    return b.to_bytes()


def export_scene(out_dir, terrain: TerrainMesh, texture, scatter, objects, scene: SceneDescriptor,
                 library: TextureTileLibrary | None = None, diagnostics=None):
    """Write scene.glb and its sidecars into an existing directory.

    The GLB is parsed back and structurally checked before anything is written.
    Sidecars: scene.json, heightmap.png/.json, splat_<k>.png + splat.json, diagnostics.json.
    """
    out = Path(out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"{out}: output directory does not exist")
    data = build_glb(terrain, texture, objects, scatter, library)
    gltf.validate_glb(data)
    (out / "scene.glb").write_bytes(data)
    (out / "scene.json").write_text(scene.to_json() + "\n")
    files.write_heightmap(scene.terrain, out)
    files.write_splatmap(scene.splat, out)
    diag = dict(diagnostics or {})
    diag.update({"nodes": 1 + len(objects) + len(scatter), "objects": len(objects),
                 "scatter": len(scatter), "glb_bytes": len(data)})
    files.write_json(out / "diagnostics.json", json.loads(json.dumps(diag)))
    return out / "scene.glb"


def assemble(scene: SceneDescriptor, library: TextureTileLibrary | None = None, seed=0, texel_per_cell=4):
    """terrain_mesh -> composite_texture -> scatter_vegetation -> place_objects.

    ``seed`` drives only scatter; tile choice comes from the scene's own rng_seed.
    """
    library = library or default_library()
    hm = scene.terrain
    mesh = terrain_mesh(hm)
    ny, nx = hm.shape
    assignments = scene.texture_assignments or library.choose_tiles(scene.rng_seed)
    texture = composite_texture(scene.splat, library, ((ny - 1) * texel_per_cell + 1, (nx - 1) * texel_per_cell + 1),
                                hm.cell_size, hm.origin, assignments)
    scatter = scatter_vegetation(scene.splat, hm, library, seed)
    objects, diags = place_objects(scene.objects, library)
    return mesh, texture, scatter, objects, {"objects": diags, "texture_assignments": assignments}
