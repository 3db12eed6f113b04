"""On-disk formats for frames, sketches, heightmaps and splatmaps.

All writers are deterministic: PNGs carry no timestamps and JSON keys are sorted.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .camera import IsometricCamera
from .scene import CATEGORIES, Heightmap, Splatmap, palette_array


class InputParseError(ValueError):
    """A file exists but its contents cannot be decoded."""

    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__(f"{path}: {reason}")


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputParseError(path, f"invalid JSON ({exc})") from exc


def png_bytes(array, mode=None):
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(array), mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, array, mode=None):
    Path(path).write_bytes(png_bytes(array, mode))


def read_png(path):
    """Decode a PNG to a numpy array; undecodable files raise InputParseError."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        with Image.open(path) as im:
            im.load()
            if im.format != "PNG":
                raise InputParseError(path, f"expected PNG, found {im.format}")
            if im.mode == "P":
                return np.asarray(im).copy()
            if im.mode in ("I;16", "I;16B", "I"):
                return np.asarray(im).astype(np.uint16)
            return np.asarray(im).copy()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        if isinstance(exc, InputParseError):
            raise
        raise InputParseError(path, f"cannot decode PNG ({exc})") from exc


def to_uint8(color):
    return np.clip(np.rint(np.asarray(color, dtype=float) * 255.0), 0, 255).astype(np.uint8)


def _to_uint16(values, lo, hi, offset=0):
    span = hi - lo
    levels = 65535 - offset
    if span <= 0:
        return np.full(values.shape, offset, dtype=np.uint16)
    return (offset + np.rint((values - lo) / span * levels)).astype(np.uint16)


def _from_uint16(q, lo, hi, offset=0):
    levels = 65535 - offset
    return lo + (q.astype(float) - offset) / levels * (hi - lo)


# ---------------------------------------------------------------------------
# frames


def write_frame(frame, out_dir):
    """color.png, depth.png (16 bit, 0 = no surface), semantic.png (indexed),
    instance_<id>.png and frame.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "color.png", to_uint8(frame.color))

    d = frame.depth[frame.valid]
    lo, hi = (float(d.min()), float(d.max())) if d.size else (0.0, 0.0)
    q = np.where(frame.valid, _to_uint16(frame.depth, lo, hi, offset=1), 0).astype(np.uint16)
    write_png(out / "depth.png", q)

    sem = Image.fromarray(frame.semantic.astype(np.uint8), mode="P")
    sem.putpalette(to_uint8(palette_array()).ravel().tolist())
    buf = io.BytesIO()
    sem.save(buf, format="PNG")
    (out / "semantic.png").write_bytes(buf.getvalue())

    manifest = []
    for inst in frame.instances:
        name = f"instance_{inst.instance_id}.png"
        write_png(out / name, (inst.mask.astype(np.uint8) * 255))
        manifest.append({"id": int(inst.instance_id), "category": inst.category, "file": name})
    write_json(out / "frame.json", {
        "camera": frame.camera.to_dict(),
        "depth": {"file": "depth.png", "min": lo, "max": hi},
        "shape": list(frame.shape),
        "categories": CATEGORIES,
        "instances": manifest,
        "meta": frame.meta,
    })


def read_frame(frame_dir):
    from .fixtures import Instance, IsometricFrame

    root = Path(frame_dir)
    info = read_json(root / "frame.json")
    try:
        cam = IsometricCamera.from_dict(info["camera"])
        dinfo = info["depth"]
        lo, hi = float(dinfo["min"]), float(dinfo["max"])
        entries = info.get("instances", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputParseError(root / "frame.json", f"malformed frame description ({exc})") from exc

    color = read_png(root / "color.png")
    q = read_png(root / dinfo.get("file", "depth.png"))
    semantic = read_png(root / "semantic.png")
    if color.ndim != 3 or color.shape[2] < 3:
        raise InputParseError(root / "color.png", "expected an RGB image")
    shape = q.shape
    if color.shape[:2] != shape or semantic.shape != shape:
        raise InputParseError(root / "frame.json", "rasters have different sizes")
    valid = q > 0
    depth = np.where(valid, _from_uint16(q, lo, hi, offset=1), 0.0)

    instances = []
    for e in entries:
        path = root / e["file"]
        m = read_png(path)
        if m.shape[:2] != shape:
            raise InputParseError(path, "instance mask size differs from the frame")
        m = m[..., 0] if m.ndim == 3 else m
        instances.append(Instance(int(e["id"]), e["category"], m > 127))
    return IsometricFrame(color[..., :3].astype(float) / 255.0, depth, valid, semantic.astype(np.uint8),
                          instances, cam, dict(info.get("meta", {})))


# ---------------------------------------------------------------------------
# sketches


def write_sketch(sketch, out_dir):
    """One 8-bit PNG per channel named <category>.png plus sketch.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, name in enumerate(sketch.category_names):
        write_png(out / f"{name}.png", sketch.channels[..., k] * 255)
    write_json(out / "sketch.json", {"categories": list(sketch.category_names)})


def read_sketch(sketch_dir):
    from .sketch import SketchMap

    root = Path(sketch_dir)
    names = read_json(root / "sketch.json")["categories"]
    chans = []
    for name in names:
        a = read_png(root / f"{name}.png")
        chans.append((a[..., 0] if a.ndim == 3 else a) > 127)
    return SketchMap(np.stack(chans, axis=-1).astype(np.uint8), list(names))


# ---------------------------------------------------------------------------
# heightmaps and splatmaps


def write_heightmap(hm: Heightmap, out_dir, stem="heightmap"):
    """16-bit PNG of heights above datum, range and grid in <stem>.json."""
    out = Path(out_dir)
    lo, hi = float(hm.values.min()), float(hm.values.max())
    write_png(out / f"{stem}.png", _to_uint16(hm.values, lo, hi))
    write_json(out / f"{stem}.json", {"file": f"{stem}.png", "min": lo, "max": hi, "datum": hm.datum,
                                     "cell_size": hm.cell_size, "origin": list(hm.origin)})


def read_heightmap(in_dir, stem="heightmap"):
    root = Path(in_dir)
    info = read_json(root / f"{stem}.json")
    q = read_png(root / info.get("file", f"{stem}.png"))
    return Heightmap(_from_uint16(q, info["min"], info["max"]), info["cell_size"], info["datum"],
                     tuple(info["origin"]))


def write_splatmap(splat: Splatmap, out_dir):
    """splat_<k>.png per channel (8 bit) and splat.json listing the channel order."""
    out = Path(out_dir)
    files = []
    for k in range(len(splat.channel_categories)):
        name = f"splat_{k}.png"
        write_png(out / name, to_uint8(splat.channels[..., k]))
        files.append(name)
    write_json(out / "splat.json", {"channel_categories": list(splat.channel_categories), "files": files})


def read_splatmap(in_dir):
    """Channels are renormalized after 8-bit quantization."""
    root = Path(in_dir)
    info = read_json(root / "splat.json")
    w = np.stack([read_png(root / f).astype(float) for f in info["files"]], axis=-1)
    s = w.sum(axis=2, keepdims=True)
    if (s <= 0).any():
        raise InputParseError(root / "splat.json", "splat weights vanish somewhere")
    return Splatmap(w / s, list(info["channel_categories"]))
