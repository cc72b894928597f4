import json

import numpy as np
import pytest

from dynsyn import fileio
from dynsyn.synergy import GroupingResult, TrajectoryBuffer


def make_buffer(n=50, m=3, seed=0):
    rng = np.random.default_rng(seed)
    data = 1.0 + 0.1 * rng.random((n, m))
    return TrajectoryBuffer(data, dt=0.01, model_name="toy", seed=seed)


def grouping():
    return GroupingResult(groups=((0, 2), (1,)), medoids=(0, 1), seed=3,
                          n_muscles=3, cost=0.25)


class TestTrajectoryFile:
    def test_roundtrip_bitwise(self, tmp_path):
        buf = make_buffer()
        path = tmp_path / "t.traj"
        fileio.save_trajectory(buf, path)
        back = fileio.load_trajectory(path)
        assert np.array_equal(back.lengths, buf.lengths)
        assert back.dt == buf.dt and back.model_name == "toy" and back.seed == 0

    def test_header_layout(self, tmp_path):
        buf = make_buffer(n=7, m=2)
        path = tmp_path / "t.traj"
        fileio.save_trajectory(buf, path)
        raw = path.read_bytes()
        assert raw[:12] == b"DYNSYNTRAJ1\x00"
        assert len(raw) == 64 + 7 * 2 * 8

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.traj"
        path.write_bytes(b"NOTATRAJFILE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            fileio.load_trajectory(path)

    def test_truncated(self, tmp_path):
        buf = make_buffer()
        path = tmp_path / "t.traj"
        fileio.save_trajectory(buf, path)
        path.write_bytes(path.read_bytes()[:100])
        with pytest.raises(ValueError):
            fileio.load_trajectory(path)


class TestGroupingFile:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "g.json"
        fileio.save_grouping(grouping(), path, model="toy")
        back = fileio.load_grouping(path)
        assert back.groups == ((0, 2), (1,))
        assert back.medoids == (0, 1)
        assert back.seed == 3 and back.n_muscles == 3

    def test_digest_detects_tampering(self, tmp_path):
        path = tmp_path / "g.json"
        fileio.save_grouping(grouping(), path)
        doc = json.loads(path.read_text())
        doc["groups"] = [[0], [1, 2]]
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError):
            fileio.load_grouping(path)

    def test_digest_stable(self):
        assert fileio.grouping_digest(grouping()) == fileio.grouping_digest(grouping())

    def test_not_a_grouping(self, tmp_path):
        path = tmp_path / "g.json"
        path.write_text("{}")
        with pytest.raises(ValueError):
            fileio.load_grouping(path)


class TestMatrixCsv:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        mat = rng.standard_normal((4, 3))
        path = tmp_path / "m.csv"
        fileio.save_matrix_csv(mat, path, ["a", "b", "c"])
        back, names = fileio.load_matrix_csv(path)
        assert names == ["a", "b", "c"]
        assert np.array_equal(back, mat)  # repr round-trip is exact

    def test_name_mismatch(self, tmp_path):
        with pytest.raises(ValueError):
            fileio.save_matrix_csv(np.ones((2, 2)), tmp_path / "m.csv", ["a"])


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        arrays = {"w": rng.standard_normal((3, 4)), "b": rng.standard_normal(4),
                  "scalar": np.array(2.5)}
        meta = {"step": 123, "note": "hello"}
        path = tmp_path / "c.ckpt"
        fileio.save_checkpoint(path, arrays, meta)
        back, meta2 = fileio.load_checkpoint(path)
        assert meta2 == meta
        for k, v in arrays.items():
            assert np.array_equal(back[k], v)

    def test_checksum_detects_corruption(self, tmp_path):
        path = tmp_path / "c.ckpt"
        fileio.save_checkpoint(path, {"w": np.ones(4)}, {"step": 0})
        raw = bytearray(path.read_bytes())
        raw[40] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError):
            fileio.load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "c.ckpt"
        path.write_bytes(b"junk")
        with pytest.raises(ValueError):
            fileio.load_checkpoint(path)


class TestCurveCsv:
    def test_roundtrip(self, tmp_path):
        from dynsyn.sac import CurvePoint
        pts = [CurvePoint(step=0, mean_return=1.25, std_return=0.5,
                          alpha=0.3, clip_c=0.0),
               CurvePoint(step=100, mean_return=-2.0, std_return=0.1,
                          alpha=0.2, clip_c=0.5)]
        path = tmp_path / "curve.csv"
        fileio.write_curve_csv(pts, path)
        rows = fileio.read_curve_csv(path)
        assert rows[0]["step"] == 0 and rows[1]["mean_return"] == -2.0
        assert rows[1]["clip_c"] == 0.5
