"""Domain types shared by the fixture generator, scene understanding and assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .camera import IsometricCamera

# category ids used in semantic rasters; 0 is "nothing rendered"
CATEGORIES = {
    "void": 0,
    "grass": 1,
    "rock": 2,
    "sand": 3,
    "road": 4,
    "water": 5,
    "building": 6,
    "tree": 7,
    "bridge": 8,
}
CATEGORY_NAMES = {v: k for k, v in CATEGORIES.items()}
TERRAIN_CATEGORIES = ("grass", "rock", "sand", "road", "water")
OBJECT_CATEGORIES = ("building", "tree", "bridge")

# flat shading palette, doubling as the sketch color code
PALETTE = {
    "void": (0, 0, 0),
    "grass": (96, 160, 64),
    "rock": (128, 112, 96),
    "sand": (220, 200, 140),
    "road": (128, 128, 128),
    "water": (40, 90, 220),
    "building": (240, 210, 40),
    "tree": (20, 110, 30),
    "bridge": (240, 140, 30),
}


def palette_array():
    """(n_categories, 3) float palette in [0, 1] indexed by category id."""
    out = np.zeros((max(CATEGORIES.values()) + 1, 3))
    for name, cid in CATEGORIES.items():
        out[cid] = np.array(PALETTE[name]) / 255.0
    return out


@dataclass
class Heightmap:
    """Node-sampled elevations: ``values[j, i]`` is the height above ``datum`` at
    world (origin_x + i*cell_size, origin_y + j*cell_size)."""

    values: np.ndarray
    cell_size: float = 1.0
    datum: float = 0.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("heightmap must be 2D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("heightmap contains non-finite values")

    @property
    def shape(self):
        return self.values.shape

    @property
    def absolute(self):
        return self.values + self.datum

    @property
    def extent(self):
        ny, nx = self.values.shape
        return ((nx - 1) * self.cell_size, (ny - 1) * self.cell_size)

    def node_xy(self):
        ny, nx = self.values.shape
        xs = self.origin[0] + np.arange(nx) * self.cell_size
        ys = self.origin[1] + np.arange(ny) * self.cell_size
        return np.meshgrid(xs, ys)

    def sample(self, x, y):
        """Bilinear sample of absolute height at world (x, y), clamped to the grid."""
        return bilinear(self.absolute, (np.asarray(x) - self.origin[0]) / self.cell_size,
                        (np.asarray(y) - self.origin[1]) / self.cell_size)

    def to_dict(self):
        return {
            "values": self.values.tolist(),
            "cell_size": self.cell_size,
            "datum": self.datum,
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["values"], dtype=float), float(d["cell_size"]), float(d["datum"]),
                   tuple(d.get("origin", (0.0, 0.0))))


def bilinear(grid, fx, fy):
    """Bilinear interpolation of ``grid[j, i]`` at fractional indices (fx, fy), edge-clamped.

    Written in lerp form so constant neighbourhoods reproduce their value exactly.
    """
    grid = np.asarray(grid)
    ny, nx = grid.shape[:2]
    fx = np.clip(np.asarray(fx, dtype=float), 0, nx - 1)
    fy = np.clip(np.asarray(fy, dtype=float), 0, ny - 1)
    i0 = np.minimum(np.floor(fx).astype(int), max(nx - 2, 0))
    j0 = np.minimum(np.floor(fy).astype(int), max(ny - 2, 0))
    i1 = np.minimum(i0 + 1, nx - 1)
    j1 = np.minimum(j0 + 1, ny - 1)
    tx = fx - i0
    ty = fy - j0
    if grid.ndim == 3:
        tx = tx[..., None]
        ty = ty[..., None]
    a = grid[j0, i0] + tx * (grid[j0, i1] - grid[j0, i0])
    b = grid[j1, i0] + tx * (grid[j1, i1] - grid[j1, i0])
    return a + ty * (b - a)


@dataclass
class Splatmap:
    """Per-node texture weights on the simplex: ``channels[j, i, k]``."""

    channels: np.ndarray
    channel_categories: list[str]

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=float)
        if self.channels.ndim != 3 or self.channels.shape[2] != len(self.channel_categories):
            raise ValueError("splat channels do not match category list")

    def dominant(self):
        return np.argmax(self.channels, axis=2)

    def to_dict(self):
        return {"channel_categories": list(self.channel_categories),
                "channels": self.channels.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["channels"], dtype=float), list(d["channel_categories"]))


@dataclass(frozen=True)
class Footprint:
    """Axis-aligned ground rectangle [x2, x1] x [y2, y1]; x1, y1 are the maxima."""

    x2: float
    x1: float
    y2: float
    y1: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (self.x2 < self.x1 and self.y2 < self.y1):
            raise ValueError("footprint must have positive area")

    @property
    def center(self):
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def size(self):
        return (self.x1 - self.x2, self.y1 - self.y2)

    @property
    def area(self):
        return (self.x1 - self.x2) * (self.y1 - self.y2)

    def translated(self, dx, dy):
        return Footprint(self.x2 + dx, self.x1 + dx, self.y2 + dy, self.y1 + dy, self.yaw)

    def iou(self, other: Footprint):
        ix = max(0.0, min(self.x1, other.x1) - max(self.x2, other.x2))
        iy = max(0.0, min(self.y1, other.y1) - max(self.y2, other.y2))
        inter = ix * iy
        return inter / (self.area + other.area - inter)

    def corners(self):
        return np.array([[self.x2, self.y2], [self.x1, self.y2], [self.x1, self.y1], [self.x2, self.y1]])

    def to_dict(self):
        return {"x2": self.x2, "x1": self.x1, "y2": self.y2, "y1": self.y1, "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["x2"]), float(d["x1"]), float(d["y2"]), float(d["y1"]), float(d.get("yaw", 0.0)))


@dataclass
class ObjectPlacement:
    instance_id: int
    category: str
    footprint: Footprint
    height: float
    base_elevation: float
    asset_ref: str = ""

    def to_dict(self):
        return {
            "instance_id": int(self.instance_id),
            "category": self.category,
            "footprint": self.footprint.to_dict(),
            "height": float(self.height),
            "base_elevation": float(self.base_elevation),
            "asset_ref": self.asset_ref,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["instance_id"]), d["category"], Footprint.from_dict(d["footprint"]),
                   float(d["height"]), float(d["base_elevation"]), d.get("asset_ref", ""))


@dataclass
class WaterRegion:
    polygon: list  # [(x, y), ...] ground-plane vertices
    water_level: float

    def node_mask(self, hm: Heightmap):
        xs, ys = hm.node_xy()
        return points_in_polygon(np.stack([xs, ys], axis=-1), np.asarray(self.polygon, dtype=float))

    def to_dict(self):
        return {"polygon": [list(map(float, p)) for p in self.polygon], "water_level": float(self.water_level)}

    @classmethod
    def from_dict(cls, d):
        return cls([tuple(p) for p in d["polygon"]], float(d["water_level"]))


def points_in_polygon(points, polygon):
    """Even-odd rule; ``points`` (..., 2), ``polygon`` (n, 2)."""
    pts = np.asarray(points, dtype=float)
    x = pts[..., 0]
    y = pts[..., 1]
    inside = np.zeros(x.shape, dtype=bool)
    n = len(polygon)
    for k in range(n):
        xa, ya = polygon[k]
        xb, yb = polygon[(k + 1) % n]
        crosses = (ya > y) != (yb > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = xa + (y - ya) * (xb - xa) / (yb - ya)
        inside ^= crosses & (x < xint)
    return inside


@dataclass
class SceneDescriptor:
    terrain: Heightmap
    splat: Splatmap
    objects: list[ObjectPlacement] = field(default_factory=list)
    water_regions: list[WaterRegion] = field(default_factory=list)
    texture_assignments: dict = field(default_factory=dict)
    rng_seed: int = 0
    camera: IsometricCamera | None = None

    def bounds(self):
        """World-space AABB (lo, hi) of terrain, water and objects."""
        xs, ys = self.terrain.node_xy()
        z = self.terrain.absolute
        lo = [xs.min(), ys.min(), z.min()]
        hi = [xs.max(), ys.max(), z.max()]
        for w in self.water_regions:
            hi[2] = max(hi[2], w.water_level)
        for o in self.objects:
            hi[2] = max(hi[2], o.base_elevation + o.height)
        return np.array(lo), np.array(hi)

    def to_dict(self):
        d = {
            "terrain": self.terrain.to_dict(),
            "splat": self.splat.to_dict(),
            "objects": [o.to_dict() for o in self.objects],
            "water_regions": [w.to_dict() for w in self.water_regions],
            "texture_assignments": dict(sorted(self.texture_assignments.items())),
            "rng_seed": int(self.rng_seed),
        }
        if self.camera is not None:
            d["camera"] = self.camera.to_dict()
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        cam = d.get("camera")
        return cls(
            Heightmap.from_dict(d["terrain"]),
            Splatmap.from_dict(d["splat"]),
            [ObjectPlacement.from_dict(o) for o in d.get("objects", [])],
            [WaterRegion.from_dict(w) for w in d.get("water_regions", [])],
            dict(d.get("texture_assignments", {})),
            int(d.get("rng_seed", 0)),
            IsometricCamera.from_dict(cam) if cam else None,
        )
