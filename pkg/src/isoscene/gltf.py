"""Minimal binary glTF 2.0 writer, reader and structural validator.

Only what the scene exporter needs: indexed triangle meshes with normals and optional
UVs, flat-color or single-texture materials, embedded PNG images and TRS nodes.
Geometry passed in is Z-up world space and is converted to glTF's Y-up frame.
"""

from __future__ import annotations

import json
import struct

import numpy as np

GLB_MAGIC = 0x46546C67
CHUNK_JSON = 0x4E4F534A
CHUNK_BIN = 0x004E4942

FLOAT = 5126
UINT32 = 5125
ARRAY_BUFFER = 34962
ELEMENT_ARRAY_BUFFER = 34963

_NCOMP = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4}
_DTYPE = {FLOAT: np.float32, UINT32: np.uint32, 5123: np.uint16, 5121: np.uint8}


class GlbError(ValueError):
    pass


def zup_to_yup(v):
    """(x, y, z) -> (x, z, -y), a proper rotation so triangle winding is kept."""
    v = np.asarray(v, dtype=float)
    return np.stack([v[..., 0], v[..., 2], -v[..., 1]], axis=-1)


def yaw_quaternion(yaw):
    """Rotation by ``yaw`` about world up, as a glTF (x, y, z, w) quaternion."""
    return [0.0, float(np.sin(yaw / 2.0)), 0.0, float(np.cos(yaw / 2.0))]


class GlbBuilder:
    def __init__(self):
        self.bin = bytearray()
        self.doc = {
            "asset": {"version": "2.0", "generator": "isoscene"},
            "scene": 0,
            "scenes": [{"nodes": []}],
            "nodes": [],
            "meshes": [],
            "materials": [],
            "accessors": [],
            "bufferViews": [],
            "buffers": [],
        }

    def _view(self, data: bytes, target=None):
        while len(self.bin) % 4:
            self.bin.append(0)
        view = {"buffer": 0, "byteOffset": len(self.bin), "byteLength": len(data)}
        if target is not None:
            view["target"] = target
        self.bin.extend(data)
        self.doc["bufferViews"].append(view)
        return len(self.doc["bufferViews"]) - 1

    def _accessor(self, array, kind, component, target, bounds=False):
        arr = np.ascontiguousarray(array, dtype=_DTYPE[component])
        acc = {
            "bufferView": self._view(arr.tobytes(), target),
            "componentType": component,
            "count": int(arr.shape[0]),
            "type": kind,
        }
        if bounds:
            flat = arr.reshape(arr.shape[0], -1)
            acc["min"] = [float(x) for x in flat.min(axis=0)]
            acc["max"] = [float(x) for x in flat.max(axis=0)]
        self.doc["accessors"].append(acc)
        return len(self.doc["accessors"]) - 1

    def add_color_material(self, rgb, name=""):
        self.doc["materials"].append({
            "name": name,
            "pbrMetallicRoughness": {"baseColorFactor": [float(c) for c in rgb] + [1.0],
                                     "metallicFactor": 0.0, "roughnessFactor": 1.0},
        })
        return len(self.doc["materials"]) - 1

    def add_texture_material(self, png: bytes, name=""):
        doc = self.doc
        doc.setdefault("images", []).append({"bufferView": self._view(png), "mimeType": "image/png"})
        doc.setdefault("samplers", []).append({"magFilter": 9729, "minFilter": 9729,
                                               "wrapS": 33071, "wrapT": 33071})
        doc.setdefault("textures", []).append({"source": len(doc["images"]) - 1,
                                               "sampler": len(doc["samplers"]) - 1})
        doc["materials"].append({
            "name": name,
            "pbrMetallicRoughness": {"baseColorTexture": {"index": len(doc["textures"]) - 1},
                                     "metallicFactor": 0.0, "roughnessFactor": 1.0},
        })
        return len(doc["materials"]) - 1

    def add_mesh(self, positions, normals, indices, uvs=None, material=None, name=""):
        """Z-up positions/normals; indices (M, 3)."""
        attrs = {
            "POSITION": self._accessor(zup_to_yup(positions), "VEC3", FLOAT, ARRAY_BUFFER, bounds=True),
            "NORMAL": self._accessor(zup_to_yup(normals), "VEC3", FLOAT, ARRAY_BUFFER),
        }
        if uvs is not None:
            attrs["TEXCOORD_0"] = self._accessor(uvs, "VEC2", FLOAT, ARRAY_BUFFER)
        prim = {"attributes": attrs, "mode": 4,
                "indices": self._accessor(np.asarray(indices).reshape(-1), "SCALAR", UINT32,
                                          ELEMENT_ARRAY_BUFFER)}
        if material is not None:
            prim["material"] = material
        self.doc["meshes"].append({"name": name, "primitives": [prim]})
        return len(self.doc["meshes"]) - 1

    def add_node(self, mesh, name="", translation=None, rotation=None, scale=None):
        """TRS in world (Z-up) terms; ``rotation`` is a yaw angle about up."""
        node = {"mesh": mesh, "name": name}
        if translation is not None:
            node["translation"] = [float(x) for x in zup_to_yup(translation)]
        if rotation is not None:
            node["rotation"] = yaw_quaternion(rotation)
        if scale is not None:
            node["scale"] = [float(scale)] * 3
        self.doc["nodes"].append(node)
        self.doc["scenes"][0]["nodes"].append(len(self.doc["nodes"]) - 1)
        return len(self.doc["nodes"]) - 1

    def to_bytes(self):
        binary = bytes(self.bin) + b"\0" * (-len(self.bin) % 4)
        doc = dict(self.doc)
        doc["buffers"] = [{"byteLength": len(binary)}]
        doc = {k: v for k, v in doc.items() if v != [] or k in ("nodes", "scenes")}
        text = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        text += b" " * (-len(text) % 4)
        total = 12 + 8 + len(text) + 8 + len(binary)
        return b"".join([
            struct.pack("<III", GLB_MAGIC, 2, total),
            struct.pack("<II", len(text), CHUNK_JSON), text,
            struct.pack("<II", len(binary), CHUNK_BIN), binary,
        ])


def read_glb(data: bytes):
    """Split a GLB into (json document, binary chunk)."""
    if len(data) < 20:
        raise GlbError("file too short for a GLB header")
    magic, version, total = struct.unpack_from("<III", data, 0)
    if magic != GLB_MAGIC or version != 2:
        raise GlbError("not a glTF 2.0 binary")
    if total != len(data):
        raise GlbError(f"header length {total} does not match file size {len(data)}")
    jlen, jtype = struct.unpack_from("<II", data, 12)
    if jtype != CHUNK_JSON or 20 + jlen > len(data):
        raise GlbError("missing JSON chunk")
    doc = json.loads(data[20:20 + jlen].decode())
    binary = b""
    off = 20 + jlen
    if off < len(data):
        blen, btype = struct.unpack_from("<II", data, off)
        if btype != CHUNK_BIN or off + 8 + blen > len(data):
            raise GlbError("malformed BIN chunk")
        binary = data[off + 8:off + 8 + blen]
    return doc, binary


def accessor_array(doc, binary, index):
    acc = doc["accessors"][index]
    view = doc["bufferViews"][acc["bufferView"]]
    dtype = np.dtype(_DTYPE[acc["componentType"]])
    n = _NCOMP[acc["type"]]
    start = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
    nbytes = acc["count"] * n * dtype.itemsize
    if start + nbytes > view.get("byteOffset", 0) + view["byteLength"] or start + nbytes > len(binary):
        raise GlbError(f"accessor {index} overruns its buffer view")
    arr = np.frombuffer(binary, dtype=dtype, count=acc["count"] * n, offset=start)
    return arr.reshape(acc["count"], n) if n > 1 else arr


def check_structure(doc, binary, normal_tol=1e-6):
    """Raise GlbError on out-of-range indices, non-unit normals, NaNs or dangling references."""
    problems = []
    n_mesh = len(doc.get("meshes", []))
    for k, node in enumerate(doc.get("nodes", [])):
        if "mesh" in node and not 0 <= node["mesh"] < n_mesh:
            problems.append(f"node {k} references missing mesh {node['mesh']}")
        for key in ("translation", "rotation", "scale"):
            if key in node and not np.all(np.isfinite(node[key])):
                problems.append(f"node {k} has non-finite {key}")
    for mi, mesh in enumerate(doc.get("meshes", [])):
        for prim in mesh["primitives"]:
            attrs = prim["attributes"]
            try:
                pos = accessor_array(doc, binary, attrs["POSITION"])
            except (KeyError, IndexError) as exc:
                problems.append(f"mesh {mi}: missing positions ({exc})")
                continue
            if not np.all(np.isfinite(pos)):
                problems.append(f"mesh {mi}: NaN or infinite positions")
            if "NORMAL" in attrs:
                nrm = accessor_array(doc, binary, attrs["NORMAL"]).astype(float)
                if len(nrm) != len(pos):
                    problems.append(f"mesh {mi}: normal count differs from vertex count")
                elif not np.all(np.isfinite(nrm)):
                    problems.append(f"mesh {mi}: NaN normals")
                else:
                    dev = np.abs(np.linalg.norm(nrm, axis=1) - 1.0).max(initial=0.0)
                    if dev > normal_tol:
                        problems.append(f"mesh {mi}: non-unit normal (deviation {dev:.2e})")
            if "TEXCOORD_0" in attrs:
                uv = accessor_array(doc, binary, attrs["TEXCOORD_0"])
                if not np.all(np.isfinite(uv)):
                    problems.append(f"mesh {mi}: NaN texture coordinates")
            if "indices" in prim:
                idx = accessor_array(doc, binary, prim["indices"])
                if len(idx) % 3:
                    problems.append(f"mesh {mi}: index count not a multiple of 3")
                if len(idx) and idx.max() >= len(pos):
                    problems.append(f"mesh {mi}: index {int(idx.max())} out of range ({len(pos)} vertices)")
            if "material" in prim and not 0 <= prim["material"] < len(doc.get("materials", [])):
                problems.append(f"mesh {mi}: missing material")
    if problems:
        raise GlbError("; ".join(problems))


def validate_glb(data: bytes):
    """Parse and structurally check a GLB; returns the JSON document."""
    doc, binary = read_glb(data)
    check_structure(doc, binary)
    return doc
