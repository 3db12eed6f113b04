import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import RegularGridInterpolator

from isoscene import gltf
from isoscene.assembly import (
    ScatterRule,
    TextureTileLibrary,
    assemble,
    build_glb,
    composite_texture,
    constant_tile,
    default_library,
    export_scene,
    load_manifest,
    load_obj,
    place_objects,
    scatter_vegetation,
    splitmix64,
    terrain_mesh,
)
from isoscene.files import InputParseError, write_png
from isoscene.fixtures import footprint_raster, make_scene, render_bev, render_isometric
from isoscene.scene import Footprint, Heightmap, ObjectPlacement, Splatmap
from isoscene.understanding import understand
from conftest import scene_and_frame


def uniform_splat(shape, cat="grass", cats=("grass", "rock")):
    ch = np.zeros(shape + (len(cats),))
    ch[..., cats.index(cat)] = 1.0
    return Splatmap(ch, list(cats))


def two_tile_library(a=(1.0, 0.0, 0.0), b=(0.0, 0.0, 1.0)):
    return TextureTileLibrary({"grass": [constant_tile(a)], "rock": [constant_tile(b)]},
                              {"grass": 4.0, "rock": 4.0})


# ---------------------------------------------------------------- terrain mesh


def test_flat_normals_exact():
    m = terrain_mesh(Heightmap(np.full((5, 6), 2.0)))
    assert np.array_equal(m.normals, np.tile([0.0, 0.0, 1.0], (30, 1)))


def test_grid_counts():
    m = terrain_mesh(Heightmap(np.zeros((3, 3))))
    assert m.positions.shape == (9, 3) and m.indices.shape == (8, 3)
    m = terrain_mesh(Heightmap(np.zeros((4, 7))))
    assert len(m.indices) == 3 * 6 * 2 and m.indices.max() < len(m.positions)


def test_small_grid_error():
    with pytest.raises(ValueError):
        terrain_mesh(Heightmap(np.zeros((1, 5))))


@pytest.mark.parametrize("sx,sy,cs", [(0.3, -0.1, 1.0), (1.5, 0.0, 0.5), (-0.2, 0.7, 2.0)])
def test_inclined_plane_normals(sx, sy, cs):
    j, i = np.mgrid[0:6, 0:8]
    m = terrain_mesh(Heightmap(sx * i * cs + sy * j * cs, cs))
    n = np.array([-sx, -sy, 1.0]) / np.sqrt(sx**2 + sy**2 + 1)
    assert np.abs(m.normals - n).max() <= 1e-6


def test_triangles_face_up():
    m = terrain_mesh(Heightmap(np.zeros((4, 4))))
    p = m.positions[m.indices]
    assert np.all(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])[:, 2] > 0)


# ---------------------------------------------------------------- texture compositing


def test_one_hot_reproduces_tile(rng):
    tile = rng.random((8, 8, 3))
    lib = TextureTileLibrary({"grass": [tile], "rock": [constant_tile((0, 0, 0))]}, {"grass": 8.0, "rock": 4.0})
    # texel centers land on tile texel centers: exact texel values
    out = composite_texture(uniform_splat((9, 9)), lib, (9, 9), cell_size=1.0, origin=(0.5, 0.5))
    assert np.array_equal(out[:8, :8], tile)


def test_fifty_fifty_blend():
    ch = np.full((5, 5, 2), 0.5)
    lib = two_tile_library((0.8, 0.2, 0.0), (0.2, 0.4, 1.0))
    out = composite_texture(Splatmap(ch, ["grass", "rock"]), lib, (17, 17))
    q = np.rint(out * 255)
    assert np.abs(q - np.array([0.5, 0.3, 0.5]) * 255).max() <= 1


def test_composite_linear_and_permutation(rng):
    w = rng.random((6, 6, 2))
    w /= w.sum(-1, keepdims=True)
    lib = TextureTileLibrary({"grass": [rng.random((4, 4, 3))], "rock": [rng.random((4, 4, 3))]},
                             {"grass": 3.0, "rock": 5.0})
    a = composite_texture(Splatmap(w, ["grass", "rock"]), lib, (11, 11))
    e0 = composite_texture(uniform_splat((6, 6), "grass"), lib, (11, 11))
    e1 = composite_texture(uniform_splat((6, 6), "rock"), lib, (11, 11))
    from isoscene.scene import bilinear
    from isoscene.assembly import texture_grid
    FX, FY, _, _ = texture_grid((6, 6), (11, 11))
    ww = bilinear(w, FX, FY)
    assert np.abs(a - (ww[..., :1] * e0 + ww[..., 1:] * e1)).max() <= 1e-12
    b = composite_texture(Splatmap(w[..., ::-1].copy(), ["rock", "grass"]), lib, (11, 11))
    assert np.abs(a - b).max() <= 1e-12


def test_missing_tile():
    with pytest.raises(KeyError, match="no texture tile for rock"):
        composite_texture(uniform_splat((3, 3)), TextureTileLibrary({"grass": [constant_tile((1, 1, 1))]},
                                                                    {"grass": 1.0}), (3, 3))


@pytest.mark.parametrize("seed", [0, 6, 13])
def test_fixture_bev_color(seed):
    scene, _ = scene_and_frame(seed)
    color, _, _ = render_bev(scene)
    out = composite_texture(scene.splat, default_library(), scene.terrain.shape)
    assert np.abs(out - color).mean() <= 2 / 255


# ---------------------------------------------------------------- scatter


def test_splitmix64_reference():
    # first outputs of the reference generator seeded with 0
    state, ref = 0, []
    for _ in range(3):
        state = (state + 0x9E3779B97F4A7C15) & (2**64 - 1)
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & (2**64 - 1)
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & (2**64 - 1)
        ref.append(z ^ (z >> 31))
    got = [int(splitmix64(np.uint64(k * 0x9E3779B97F4A7C15 % 2**64))) for k in range(3)]
    assert got == ref
    assert ref[0] == 0xE220A8397B1DCDAF


def test_zero_density_empty():
    lib = two_tile_library()
    lib.scatter = {"grass": [ScatterRule("tuft", 0.0)]}
    hm = Heightmap(np.zeros((11, 11)))
    assert scatter_vegetation(uniform_splat((11, 11)), hm, lib, 3) == []


def test_scatter_count_expectation():
    lib = two_tile_library()
    lib.scatter = {"grass": [ScatterRule("tuft", 0.1)]}
    hm = Heightmap(np.zeros((101, 101)))
    splat = uniform_splat((101, 101))
    for seed in range(20):
        n = len(scatter_vegetation(splat, hm, lib, seed))
        assert 900 <= n <= 1100


def test_scatter_dense_rule_subgrid():
    lib = two_tile_library()
    lib.scatter = {"grass": [ScatterRule("tuft", 3.0)]}
    n = len(scatter_vegetation(uniform_splat((21, 21)), Heightmap(np.zeros((21, 21))), lib, 0))
    assert abs(n - 1200) <= 0.1 * 1200


def test_scatter_respects_dominant_channel():
    ch = np.zeros((21, 21, 2))
    ch[:, :10, 0] = 1
    ch[:, 10:, 1] = 1
    lib = two_tile_library()
    lib.scatter = {"grass": [ScatterRule("tuft", 0.5)]}
    out = scatter_vegetation(Splatmap(ch, ["grass", "rock"]), Heightmap(np.zeros((21, 21))), lib, 1)
    assert out and all(s.position[0] <= 10.0 for s in out)


def test_scatter_deterministic_and_on_surface(rng):
    values = rng.normal(size=(16, 16)).cumsum(0)
    hm = Heightmap(values, 0.5, 3.0, (2.0, -1.0))
    lib = default_library()
    splat = uniform_splat((16, 16), "grass", ("grass", "rock", "sand", "road", "water"))
    a = scatter_vegetation(splat, hm, lib, 9)
    assert a == scatter_vegetation(splat, hm, lib, 9)
    assert a != scatter_vegetation(splat, hm, lib, 10)
    xs = 2.0 + 0.5 * np.arange(16)
    ys = -1.0 + 0.5 * np.arange(16)
    interp = RegularGridInterpolator((ys, xs), values + 3.0)
    pts = np.array([s.position for s in a])
    assert np.abs(interp(pts[:, [1, 0]]) - pts[:, 2]).max() <= 1e-3


# ---------------------------------------------------------------- object proxies


def building(fp, h, iid=1, cat="building", base=0.0):
    return ObjectPlacement(iid, cat, fp, h, base)


@pytest.mark.parametrize("mesh", ["box", "gable"])
def test_proxy_extents(mesh):
    lib = default_library()
    lib.meshes["building"] = mesh
    meshes, diags = place_objects([building(Footprint(1.0, 5.0, 2.0, 8.0), 3.0, base=1.25)], lib)
    lo, hi = meshes[0].aabb()
    assert np.abs((hi - lo) - [4, 6, 3]).max() <= 1e-6
    assert np.abs(lo - [1.0, 2.0, 1.25]).max() <= 1e-6
    assert diags[0]["status"] == "ok"
    assert np.abs(np.linalg.norm(meshes[0].normals, axis=1) - 1).max() <= 1e-12


def test_disjoint_footprints_disjoint_meshes():
    meshes, _ = place_objects([building(Footprint(0.0, 2.0, 0.0, 2.0), 2.0, 1),
                               building(Footprint(3.0, 5.0, 0.5, 1.5), 1.0, 2)], default_library())
    (alo, ahi), (blo, bhi) = meshes[0].aabb(), meshes[1].aabb()
    assert ahi[0] < blo[0] or bhi[0] < alo[0] or ahi[1] < blo[1] or bhi[1] < alo[1]


def test_unknown_category_fallback():
    meshes, diags = place_objects([building(Footprint(0.0, 2.0, 0.0, 2.0), 2.0, 7, "windmill")],
                                  default_library())
    assert len(meshes) == 1 and diags[0]["status"] == "fallback" and "windmill" in diags[0]["message"]


def test_obj_proxy(tmp_path):
    (tmp_path / "tent.obj").write_text("v 0 0 0\nv 2 0 0\nv 2 2 0\nv 0 2 0\nv 1 1 5\n"
                                       "f 1 4 3 2\nf 1 2 5\nf 2 3 5\nf 3 4 5\nf 4 1 5\n")
    v, faces = load_obj(tmp_path / "tent.obj")
    assert v.min(axis=0).tolist() == [-0.5, -0.5, 0.0] and v.max(axis=0).tolist() == [0.5, 0.5, 1.0]
    lib = default_library()
    lib.meshes["building"] = str(tmp_path / "tent.obj")
    meshes, _ = place_objects([building(Footprint(0.0, 4.0, 0.0, 2.0), 6.0)], lib)
    lo, hi = meshes[0].aabb()
    assert np.allclose(hi - lo, [4, 2, 6])
    (tmp_path / "bad.obj").write_text("v 0 0\n")
    with pytest.raises(InputParseError, match="bad.obj"):
        load_obj(tmp_path / "bad.obj")


@pytest.mark.parametrize("seed", [1, 2, 3, 4])
def test_round_trip_proxy_bev_iou(seed):
    scene, frame = scene_and_frame(seed)
    u = understand(frame)
    meshes, _ = place_objects(u.placements, default_library())
    boxes = [m.aabb() for m in meshes]
    got = footprint_raster([Footprint(lo[0], hi[0], lo[1], hi[1]) for lo, hi in boxes], scene.terrain)
    truth = footprint_raster([o.footprint for o in scene.objects], scene.terrain)
    assert (got & truth).sum() / (got | truth).sum() >= 0.8


# ---------------------------------------------------------------- export


def minimal_scene():
    return make_scene(np.zeros((4, 4)), image_size=64)


def test_minimal_export_valid(tmp_path):
    scene = minimal_scene()
    mesh, tex, scatter, objects, _ = assemble(scene)
    path = export_scene(tmp_path, mesh, tex, scatter, objects, scene)
    doc = gltf.validate_glb(path.read_bytes())
    assert doc["asset"]["version"] == "2.0"
    for name in ("scene.json", "heightmap.png", "heightmap.json", "splat.json", "splat_0.png", "diagnostics.json"):
        assert (tmp_path / name).is_file()


def test_export_deterministic(tmp_path):
    scene, _ = scene_and_frame(2)
    parts = assemble(scene, seed=5)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = export_scene(tmp_path / "a", *parts[:4], scene).read_bytes()
    b = export_scene(tmp_path / "b", *assemble(scene, seed=5)[:4], scene).read_bytes()
    assert a == b


def test_node_count(tmp_path):
    scene, _ = scene_and_frame(8)
    mesh, tex, scatter, objects, _ = assemble(scene, seed=1)
    doc = gltf.validate_glb(export_scene(tmp_path, mesh, tex, scatter, objects, scene).read_bytes())
    assert len(doc["nodes"]) == 1 + len(scene.objects) + len(scatter)
    assert json.loads((tmp_path / "diagnostics.json").read_text())["nodes"] == len(doc["nodes"])


def test_unwritable_path(tmp_path):
    scene = minimal_scene()
    with pytest.raises(FileNotFoundError):
        export_scene(tmp_path / "missing", *assemble(scene)[:4], scene)


def test_self_check_rejects_bad_index():
    m = terrain_mesh(Heightmap(np.zeros((3, 3))))
    b = gltf.GlbBuilder()
    b.add_node(b.add_mesh(m.positions, m.normals, m.indices + 5))
    with pytest.raises(gltf.GlbError, match="out of range"):
        gltf.validate_glb(b.to_bytes())


def test_self_check_rejects_non_unit_normal():
    m = terrain_mesh(Heightmap(np.zeros((3, 3))))
    b = gltf.GlbBuilder()
    b.add_node(b.add_mesh(m.positions, m.normals * 1.01, m.indices))
    with pytest.raises(gltf.GlbError, match="non-unit normal"):
        gltf.validate_glb(b.to_bytes())


def test_glb_header_checks():
    data = bytearray(build_glb(terrain_mesh(Heightmap(np.zeros((2, 2)))), np.zeros((2, 2, 3)), [], []))
    with pytest.raises(gltf.GlbError):
        gltf.validate_glb(bytes(data[:-4]))
    data[0] = 0
    with pytest.raises(gltf.GlbError):
        gltf.validate_glb(bytes(data))


def test_glb_positions_yup():
    m = terrain_mesh(Heightmap(np.array([[0.0, 1.0], [2.0, 3.0]])))
    doc, binary = gltf.read_glb(build_glb(m, np.zeros((2, 2, 3)), [], []))
    pos = gltf.accessor_array(doc, binary, doc["meshes"][0]["primitives"][0]["attributes"]["POSITION"])
    assert np.allclose(pos, np.stack([m.positions[:, 0], m.positions[:, 2], -m.positions[:, 1]], -1))


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.floats(-3, 3), st.floats(0.25, 2))
def test_random_terrain_exports_clean(ny, nx, amp, cs):
    v = amp * np.sin(np.add.outer(np.arange(ny), 0.7 * np.arange(nx)))
    m = terrain_mesh(Heightmap(v, cs))
    gltf.validate_glb(build_glb(m, np.zeros((ny, nx, 3)), [], []))


# ---------------------------------------------------------------- manifests


def test_manifest_loading(tmp_path):
    write_png(tmp_path / "g1.png", np.full((4, 4, 3), 200, dtype=np.uint8))
    (tmp_path / "house.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 2 3 4\nf 3 1 4\n")
    (tmp_path / "assets.json").write_text(json.dumps({
        "categories": {"grass": {"tiles": ["g1.png"], "tile_size": 2,
                                 "scatter": [{"kind": "tuft", "density": 0.2, "color": [10, 200, 10]}]},
                       "rock": {"color": [100, 100, 100]}},
        "objects": {"building": {"mesh": "house.obj", "color": [255, 0, 0]}},
    }))
    lib = load_manifest(tmp_path / "assets.json")
    assert lib.ids("grass") == ["g1"] and lib.tile_size["grass"] == 2.0
    assert lib.scatter["grass"][0] == ScatterRule("tuft", 0.2)
    assert np.allclose(lib.tile("rock")[0, 0], 100 / 255)
    assert lib.meshes["building"].endswith("house.obj")


def test_manifest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nope.json")
    (tmp_path / "m.json").write_text('{"categories": {"grass": {"scatter": [{"density": 1}]}}}')
    with pytest.raises(InputParseError, match="m.json"):
        load_manifest(tmp_path / "m.json")


def test_tile_choice_seeded():
    lib = default_library()
    lib.tiles["grass"] = [constant_tile((0, 1, 0)), constant_tile((0, 0.5, 0)), constant_tile((0, 0.2, 0))]
    assert lib.choose_tiles(3) == lib.choose_tiles(3)
    picks = {lib.choose_tiles(s)["grass"] for s in range(30)}
    assert picks == {"grass_01", "grass_02", "grass_03"}
