"""Isometric (orthographic) camera, ground-plane rectification and depth unprojection.

World frame: +Z up, ground plane Z = 0. The camera sits in the +(1,1,1) octant and
looks along -(1,1,1)/sqrt(3). Image x grows to the right, image y grows downward.
Depth is measured along the forward axis from the image plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQRT2 = np.sqrt(2.0)
SQRT3 = np.sqrt(3.0)
SQRT6 = np.sqrt(6.0)

# screen right, screen up, and the direction pointing from the scene toward the camera
RIGHT = np.array([1.0, -1.0, 0.0]) / SQRT2
UP = np.array([-1.0, -1.0, 2.0]) / SQRT6
TOWARD_CAMERA = np.array([1.0, 1.0, 1.0]) / SQRT3
FORWARD = -TOWARD_CAMERA


@dataclass(frozen=True)
class IsometricCamera:
    pixels_per_world_unit: float
    image_width: int
    image_height: int
    principal_point: tuple[float, float] = (0.0, 0.0)
    # distance from the world origin to the image plane along the viewing axis
    depth_offset: float = 100.0

    def __post_init__(self):
        if not self.pixels_per_world_unit > 0:
            raise ValueError("pixels_per_world_unit must be positive")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image size must be positive")

    @classmethod
    def fit_to_bounds(cls, lo, hi, width=512, height=512, margin=8.0):
        """Largest camera of the given image size that shows the box ``[lo, hi]`` entirely."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        a = corners @ RIGHT
        b = -(corners @ UP)
        scale = min((width - 2 * margin) / (a.max() - a.min()), (height - 2 * margin) / (b.max() - b.min()))
        cx = width / 2.0 - scale * (a.max() + a.min()) / 2.0
        cy = height / 2.0 - scale * (b.max() + b.min()) / 2.0
        depth_offset = float((corners @ TOWARD_CAMERA).max() + 1.0)
        return cls(float(scale), int(width), int(height), (float(cx), float(cy)), depth_offset)

    def scaled(self, factor):
        """Same view at ``factor`` times the resolution."""
        cx, cy = self.principal_point
        return IsometricCamera(
            self.pixels_per_world_unit * factor,
            int(round(self.image_width * factor)),
            int(round(self.image_height * factor)),
            (cx * factor, cy * factor),
            self.depth_offset,
        )

    def to_dict(self):
        return {
            "pixels_per_world_unit": self.pixels_per_world_unit,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "principal_point": list(self.principal_point),
            "depth_offset": self.depth_offset,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["pixels_per_world_unit"]),
            int(d["image_width"]),
            int(d["image_height"]),
            tuple(float(v) for v in d["principal_point"]),
            float(d.get("depth_offset", 100.0)),
        )


def project(points, cam: IsometricCamera):
    """Map world points (..., 3) to pixel coordinates (..., 2)."""
    p = np.asarray(points, dtype=float)
    s = cam.pixels_per_world_unit
    cx, cy = cam.principal_point
    return np.stack([cx + s * (p @ RIGHT), cy - s * (p @ UP)], axis=-1)


def point_depth(points, cam: IsometricCamera):
    """Forward-axis depth of world points measured from the image plane."""
    return cam.depth_offset - np.asarray(points, dtype=float) @ TOWARD_CAMERA


def unproject(pixels, depth, cam: IsometricCamera):
    """Inverse of (project, point_depth): pixel coords (..., 2) plus depth (...) -> world (..., 3)."""
    px = np.asarray(pixels, dtype=float)
    s = cam.pixels_per_world_unit
    cx, cy = cam.principal_point
    a = (px[..., 0] - cx) / s
    b = -(px[..., 1] - cy) / s
    c = cam.depth_offset - np.asarray(depth, dtype=float)
    return a[..., None] * RIGHT + b[..., None] * UP + c[..., None] * TOWARD_CAMERA


def height_pixels_per_unit(cam: IsometricCamera):
    """Image rows spanned by one world unit of vertical height."""
    return cam.pixels_per_world_unit * 2.0 / SQRT6


@dataclass(frozen=True)
class GroundRectifyMap:
    """Pair of 2x3 affine maps between image pixels and ground-plane coordinates.

    ``forward`` sends the pixel of a ground point (X, Y, 0) to (X, Y). Under an
    orthographic camera the plane-to-image homography degenerates to this affine map.
    """

    forward: np.ndarray
    inverse: np.ndarray = field(repr=False)

    def rectify(self, pixels):
        px = np.asarray(pixels, dtype=float)
        return px @ self.forward[:, :2].T + self.forward[:, 2]

    def unrectify(self, ground):
        g = np.asarray(ground, dtype=float)
        return g @ self.inverse[:, :2].T + self.inverse[:, 2]


def ground_rectify_map(cam: IsometricCamera) -> GroundRectifyMap:
    s = cam.pixels_per_world_unit
    cx, cy = cam.principal_point
    # ground (X, Y) -> pixel: u = cx + s (X - Y)/sqrt2,  v = cy + s (X + Y)/sqrt6
    lin_inv = s * np.array([[1.0 / SQRT2, -1.0 / SQRT2], [1.0 / SQRT6, 1.0 / SQRT6]])
    inverse = np.column_stack([lin_inv, [cx, cy]])
    # closed-form inverse: a 45 degree rotation after anisotropic scaling
    lin_fwd = np.array([[SQRT2 / 2.0, SQRT6 / 2.0], [-SQRT2 / 2.0, SQRT6 / 2.0]]) / s
    forward = np.column_stack([lin_fwd, -lin_fwd @ np.array([cx, cy])])
    return GroundRectifyMap(forward, inverse)


def pixel_centers(height, width):
    """Pixel-center coordinates (H, W, 2) as (x, y)."""
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs + 0.5, ys + 0.5], axis=-1).astype(float)


@dataclass
class PointSet:
    points: np.ndarray  # (n, 3)
    pixels: np.ndarray  # (n, 2) integer (row, col)
    attributes: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)


def unproject_depth(depth, valid, cam: IsometricCamera, **rasters) -> PointSet:
    """Lift every valid depth pixel to a 3D point, carrying aligned raster values along.

    Extra keyword rasters (color, semantic, ...) are sampled at the same pixels.
    """
    depth = np.asarray(depth, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    rows, cols = np.nonzero(valid)
    centers = np.stack([cols + 0.5, rows + 0.5], axis=-1).astype(float)
    pts = unproject(centers, depth[rows, cols], cam)
    attrs = {name: np.asarray(r)[rows, cols] for name, r in rasters.items() if r is not None}
    return PointSet(pts.reshape(-1, 3), np.stack([rows, cols], axis=-1), attrs)
