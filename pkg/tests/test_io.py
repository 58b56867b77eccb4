import struct

import numpy as np
import pytest

from jppf import io
from jppf.errors import BadMagic, FieldOverflow, TruncatedPayload, UnsupportedVersion
from jppf.synth import NoiseModel, generate, random_scene_spec
from jppf.taxonomy import PanopticPartMap, encode_array


def test_tensor_round_trip(tmp_path, rng):
    for arr in (rng.random((3, 4, 5)).astype(np.float32), rng.integers(0, 2**32, (7, 2), dtype=np.uint32)):
        io.write_tensor(arr, tmp_path / "t.jppt")
        back = io.read_tensor(tmp_path / "t.jppt")
        assert back.dtype == arr.dtype and back.tobytes() == arr.tobytes()


def test_tensor_header_layout(tmp_path):
    io.write_tensor(np.zeros((2, 3), np.float32), tmp_path / "t.jppt")
    raw = (tmp_path / "t.jppt").read_bytes()
    assert raw[:4] == b"JPPT"
    assert struct.unpack("<HBB2I", raw[4:16]) == (1, 1, 2, 2, 3)
    assert len(raw) == 16 + 24


def test_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(BadMagic):
        io.read_tensor(tmp_path / "x")


def test_truncated_payload(tmp_path):
    io.write_tensor(np.zeros((4, 4), np.float32), tmp_path / "t.jppt")
    data = (tmp_path / "t.jppt").read_bytes()
    (tmp_path / "t.jppt").write_bytes(data[:-3])
    with pytest.raises(TruncatedPayload):
        io.read_tensor(tmp_path / "t.jppt")


def test_unknown_version(tmp_path):
    io.write_tensor(np.zeros(2, np.float32), tmp_path / "t.jppt")
    data = bytearray((tmp_path / "t.jppt").read_bytes())
    data[4] = 9
    (tmp_path / "t.jppt").write_bytes(bytes(data))
    with pytest.raises(UnsupportedVersion):
        io.read_tensor(tmp_path / "t.jppt")


def test_labelmap_round_trip(tmp_path, rng):
    s = rng.integers(1, 256, (9, 11))
    i = rng.integers(0, 65536, (9, 11))
    p = rng.integers(0, 256, (9, 11))
    m = PanopticPartMap.from_components(s, i, p, rng.random((9, 11)) < 0.2)
    io.write_labelmap_png(m, tmp_path / "m.png")
    assert io.read_labelmap_png(tmp_path / "m.png") == m


def test_void_pixels_are_black(tmp_path):
    io.write_labelmap_png(PanopticPartMap.void(2, 3), tmp_path / "m.png")
    rgb = io.png.Reader(filename=str(tmp_path / "m.png")).asDirect()
    rows = [list(r) for r in rgb[2]]
    assert all(v == 0 for row in rows for v in row)


def test_instance_id_overflow(rng):
    rgb = np.zeros((1, 1, 3), np.int64)
    rgb[0, 0] = (24, 70000, 0)
    with pytest.raises(FieldOverflow):
        io.labelmap_from_rgb(rgb)


def test_render_void_is_black():
    assert not io.render(PanopticPartMap.void(4, 4)).any()


def test_render_deterministic(tmp_path, cpp):
    m = generate(random_scene_spec(cpp, 2, 32, 32), cpp).gt
    io.write_png_rgb8(io.render(m, cpp), tmp_path / "a.png")
    io.write_png_rgb8(io.render(m, cpp), tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    assert io.read_png_rgb8(tmp_path / "a.png").shape == (32, 32, 3)


def test_render_instances_share_hue_not_outline():
    s = np.full((6, 12), 7)
    i = np.zeros((6, 12), int)
    s[1:5, 1:5] = s[1:5, 7:11] = 26
    i[1:5, 1:5], i[1:5, 7:11] = 1, 2
    img = io.render(PanopticPartMap(encode_array(s, i, 0)))
    assert np.array_equal(img[2, 2], img[2, 8])  # interiors: same class colour
    assert not np.array_equal(img[1, 1], img[1, 7])  # outlines differ per instance
    assert not np.array_equal(img[1, 1], img[2, 2])


def test_scene_directory_round_trip(tmp_path, cpp):
    scene = generate(random_scene_spec(cpp, 6, 32, 32, noise=NoiseModel(temperature=0.3)), cpp)
    io.write_scene(tmp_path / "s", scene, cpp)
    meta = io.read_channel_meta(tmp_path / "s", cpp)
    S = io.read_logits(tmp_path / "s" / io.SEMANTIC_FILE, meta["semantic"])
    assert S.values.tobytes() == scene.semantic.values.tobytes()
    preds = io.read_instances(tmp_path / "s" / io.INSTANCES_FILE)
    assert [(p.box, p.class_id, p.confidence) for p in preds] == [(p.box, p.class_id, p.confidence) for p in scene.instances]
    assert all(a.mask.tobytes() == b.mask.tobytes() for a, b in zip(preds, scene.instances))
    assert io.read_labelmap_png(tmp_path / "s" / io.GT_FILE) == scene.gt
    assert np.array_equal(io.read_part_group_png(tmp_path / "s" / "parts_gt.png"), scene.part_gt)
