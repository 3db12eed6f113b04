import numpy as np
import pytest

from isoscene import files
from isoscene.scene import Heightmap, Splatmap
from isoscene.sketch import SketchMap
from conftest import scene_and_frame


def test_frame_round_trip(tmp_path):
    _, f = scene_and_frame(1)
    files.write_frame(f, tmp_path)
    g = files.read_frame(tmp_path)
    assert np.array_equal(g.valid, f.valid) and np.array_equal(g.semantic, f.semantic)
    span = f.depth[f.valid].max() - f.depth[f.valid].min()
    assert np.abs(g.depth - f.depth)[f.valid].max() <= span / 65534 * 0.5 + 1e-9
    assert np.abs(g.color - f.color).max() <= 0.5 / 255 + 1e-12
    assert [(i.instance_id, i.category) for i in g.instances] == [(i.instance_id, i.category) for i in f.instances]
    assert all(np.array_equal(a.mask, b.mask) for a, b in zip(g.instances, f.instances))
    assert g.camera == f.camera and g.meta == f.meta


def test_write_deterministic(tmp_path):
    _, f = scene_and_frame(1)
    files.write_frame(f, tmp_path / "a")
    files.write_frame(f, tmp_path / "b")
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_heightmap_round_trip(tmp_path, rng):
    hm = Heightmap(rng.normal(size=(9, 7)) * 3, 0.5, 1.25, (2.0, -3.0))
    files.write_heightmap(hm, tmp_path)
    back = files.read_heightmap(tmp_path)
    assert np.abs(back.values - hm.values).max() <= np.ptp(hm.values) / 65535
    assert (back.cell_size, back.datum, back.origin) == (0.5, 1.25, (2.0, -3.0))


def test_splatmap_round_trip(tmp_path, rng):
    w = rng.random((6, 5, 3))
    w /= w.sum(-1, keepdims=True)
    files.write_splatmap(Splatmap(w, ["grass", "rock", "sand"]), tmp_path)
    back = files.read_splatmap(tmp_path)
    assert back.channel_categories == ["grass", "rock", "sand"]
    assert np.abs(back.channels.sum(-1) - 1).max() <= 1e-12
    assert np.abs(back.channels - w).max() <= 3 / 255


def test_sketch_round_trip(tmp_path, rng):
    s = SketchMap((rng.random((8, 9, 2)) < 0.5).astype(np.uint8), ["water", "road"])
    files.write_sketch(s, tmp_path)
    back = files.read_sketch(tmp_path)
    assert back.category_names == ["water", "road"] and np.array_equal(back.channels, s.channels)


def test_corrupt_png_names_file(tmp_path):
    _, f = scene_and_frame(1)
    files.write_frame(f, tmp_path)
    (tmp_path / "depth.png").write_bytes(b"\x89PNG\r\n\x1a\nnot really")
    with pytest.raises(files.InputParseError, match="depth.png"):
        files.read_frame(tmp_path)


def test_missing_and_bad_json(tmp_path):
    with pytest.raises(FileNotFoundError):
        files.read_png(tmp_path / "none.png")
    (tmp_path / "x.json").write_text("{oops")
    with pytest.raises(files.InputParseError, match="x.json"):
        files.read_json(tmp_path / "x.json")


def test_mismatched_raster_sizes(tmp_path):
    _, f = scene_and_frame(1)
    files.write_frame(f, tmp_path)
    files.write_png(tmp_path / "color.png", np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(files.InputParseError, match="different sizes"):
        files.read_frame(tmp_path)
