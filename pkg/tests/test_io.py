"""On-disk formats: KFSC maps, flow binaries, PGM/PPM images and PLY clouds."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scfusion import io
from scfusion.geometry import CoordStateMap, FlowField


def _f32_map(rng, h, w):
    coords = rng.normal(size=(h, w, 3)).astype(np.float32).astype(np.float64)
    logvar = rng.uniform(-9, 1, (h, w)).astype(np.float32).astype(np.float64)
    return CoordStateMap(coords, logvar, rng.random((h, w)) < 0.7)


class TestCoordMapFormat:
    def test_header_layout(self, rng):
        m = _f32_map(rng, 3, 5)
        data = io.coord_map_to_bytes(m)
        assert data[:4] == b"KFSC"
        assert struct.unpack("<II", data[4:12]) == (3, 5)
        assert len(data) == 12 + 15 * (12 + 4 + 1)

    def test_planes_in_order(self):
        coords = np.arange(2 * 2 * 3, dtype=np.float64).reshape(2, 2, 3)
        m = CoordStateMap(coords, np.full((2, 2), -1.0), np.ones((2, 2), bool))
        data = io.coord_map_to_bytes(m)
        np.testing.assert_array_equal(np.frombuffer(data, "<f4", 12, 12), coords.ravel())
        np.testing.assert_array_equal(np.frombuffer(data, "<f4", 4, 60), -1.0)
        np.testing.assert_array_equal(np.frombuffer(data, "u1", 4, 76), 1)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 9))
    def test_round_trip_bit_exact(self, seed, h, w):
        m = _f32_map(np.random.default_rng(seed), h, w)
        back = io.coord_map_from_bytes(io.coord_map_to_bytes(m))
        assert back.equals(m)
        assert io.coord_map_to_bytes(back) == io.coord_map_to_bytes(m)

    def test_file_round_trip(self, rng, tmp_path):
        m = _f32_map(rng, 4, 4)
        io.write_coord_map(tmp_path / "m.kfsc", m)
        assert io.read_coord_map(tmp_path / "m.kfsc").equals(m)

    def test_bad_magic(self, rng):
        data = bytearray(io.coord_map_to_bytes(_f32_map(rng, 2, 2)))
        data[:4] = b"XXXX"
        with pytest.raises(ValueError):
            io.coord_map_from_bytes(bytes(data))

    def test_truncated(self, rng):
        with pytest.raises(ValueError):
            io.coord_map_from_bytes(io.coord_map_to_bytes(_f32_map(rng, 2, 2))[:-1])


class TestFlowFormat:
    def test_round_trip(self, rng):
        off = rng.normal(size=(4, 6, 2)).astype(np.float32).astype(np.float64)
        f = FlowField(off, rng.random((4, 6)) < 0.5, stride=8)
        back = io.flow_from_bytes(io.flow_to_bytes(f), stride=8)
        np.testing.assert_array_equal(back.valid, f.valid)
        np.testing.assert_array_equal(back.offsets, f.offsets)


class TestImages:
    def test_pgm_round_trip(self, rng, tmp_path):
        img = np.round(rng.random((7, 9)) * 65535) / 65535
        io.write_pgm(tmp_path / "a.pgm", img)
        np.testing.assert_array_equal(io.read_pgm(tmp_path / "a.pgm"), img)

    def test_pgm_8bit_with_comment(self, tmp_path):
        (tmp_path / "b.pgm").write_bytes(b"P5\n# hi\n2 1\n255\n" + bytes([0, 255]))
        np.testing.assert_array_equal(io.read_pgm(tmp_path / "b.pgm"), [[0.0, 1.0]])

    def test_flow_rgb_invalid_black(self):
        f = FlowField(np.ones((2, 2, 2)), [[True, False], [True, True]])
        rgb = io.flow_to_rgb(f)
        assert rgb.shape == (2, 2, 3) and rgb.dtype == np.uint8
        np.testing.assert_array_equal(rgb[0, 1], 0)


class TestPly:
    def test_round_trip_and_header(self, rng, tmp_path):
        pts = rng.normal(size=(10, 3))
        n = io.write_ply(tmp_path / "c.ply", pts, rng.random(10))
        assert n == 10
        text = (tmp_path / "c.ply").read_text()
        assert text.startswith("ply\nformat ascii 1.0\nelement vertex 10\n")
        np.testing.assert_allclose(io.read_ply_points(tmp_path / "c.ply"), pts, atol=1e-6)

    def test_grayscale_from_variance_rank(self, tmp_path):
        io.write_ply(tmp_path / "g.ply", np.zeros((3, 3)), [0.3, 0.1, 0.2])
        body = (tmp_path / "g.ply").read_text().splitlines()[-3:]
        assert [int(line.split()[3]) for line in body] == [0, 255, 128]

    def test_empty_cloud_is_header_only(self, tmp_path):
        assert io.write_ply(tmp_path / "e.ply", np.zeros((0, 3))) == 0
        assert (tmp_path / "e.ply").read_text().splitlines()[-1] == "end_header"
        assert io.read_ply_points(tmp_path / "e.ply").shape == (0, 3)
