import json

import numpy as np
import pytest

from physedit.errors import DomainError, ShapeError
from physedit.raster import CameraSpec, rasterize_frame, read_pgm, write_pgm
from physedit.trajectory import (Trajectory, export_trajectory, frame_bytes,
                                 parse_frame_bytes, read_trajectory,
                                 verify_trajectory)
from oracles import pixel_oracle


def make_traj(rng, frames=3, n=20):
    pos = rng.uniform(-1, 1, size=(frames, n, 3)).astype(np.float32)
    oid = np.concatenate([np.zeros(n // 2, dtype=np.int32),
                          np.ones(n - n // 2, dtype=np.int32)])
    return Trajectory.from_frames(pos, 24.0, oid,
                                  edit_log=[{"t": 0.1, "property": "gravity"}],
                                  scene_hash="abc", config_hash="def")


class TestExport:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        traj = make_traj(rng)
        export_trajectory(traj, tmp_path)
        back = read_trajectory(tmp_path)
        assert np.array_equal(back.positions, traj.positions)
        assert back.positions.dtype == np.float32
        assert back.fps == traj.fps
        assert np.array_equal(back.object_id, traj.object_id)
        assert back.edit_log == traj.edit_log
        assert back.scene_hash == "abc"

    def test_single_frame_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        traj = make_traj(rng, frames=1)
        export_trajectory(traj, tmp_path)
        back = read_trajectory(tmp_path)
        assert np.array_equal(back.positions, traj.positions)

    def test_manifest_lists_frames_in_order(self, tmp_path):
        rng = np.random.default_rng(2)
        traj = make_traj(rng, frames=48)
        manifest = export_trajectory(traj, tmp_path)
        assert manifest["frames"] == 48
        assert manifest["files"] == [f"frames/frame_{k:04d}.trjf"
                                     for k in range(48)]
        assert len(manifest["frame_sha256"]) == 48
        report = verify_trajectory(tmp_path)
        assert report["ok"]

    def test_tamper_detected(self, tmp_path):
        rng = np.random.default_rng(3)
        export_trajectory(make_traj(rng), tmp_path)
        victim = tmp_path / "frames" / "frame_0001.trjf"
        raw = bytearray(victim.read_bytes())
        raw[-1] ^= 0xFF
        victim.write_bytes(bytes(raw))
        report = verify_trajectory(tmp_path)
        assert not report["ok"]
        assert any("frame_0001" in e for e in report["errors"])

    def test_manifest_bytes_deterministic(self, tmp_path):
        rng = np.random.default_rng(4)
        traj = make_traj(rng)
        export_trajectory(traj, tmp_path / "a")
        export_trajectory(traj, tmp_path / "b")
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
            (tmp_path / "b" / "manifest.json").read_bytes()

    def test_frame_header_fields(self):
        pos = np.array([[1, 2, 3]], dtype=np.float32)
        raw = frame_bytes(pos, 7)
        idx, back = parse_frame_bytes(raw)
        assert idx == 7
        assert np.array_equal(back, pos)

    def test_centroids_and_aabbs(self):
        rng = np.random.default_rng(5)
        traj = make_traj(rng, frames=2, n=10)
        mask = traj.object_id == 0
        want = traj.positions[0, mask].astype(np.float64).mean(axis=0)
        assert np.allclose(traj.centroids[0, 0], want)
        assert np.all(traj.aabbs[:, :, 0] <= traj.aabbs[:, :, 1])

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            Trajectory.from_frames(np.zeros((2, 3)), 24.0, np.zeros(3))


class TestRaster:
    def axis_cam(self, **kw):
        base = dict(fx=100.0, fy=100.0, cx=32.0, cy=32.0, width=64, height=64)
        base.update(kw)
        return CameraSpec(**base)

    def test_optical_axis_projection(self):
        cam = self.axis_cam()
        frame = rasterize_frame(np.array([[0.0, 0.0, 1.0]]), cam)
        assert frame.index[32, 32] == 0
        assert not frame.empty
        occupied = np.argwhere(frame.index >= 0)
        assert np.all(np.abs(occupied - 32) <= cam.splat_radius)

    def test_zbuffer_prefers_near(self):
        cam = self.axis_cam()
        pts = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]])
        frame = rasterize_frame(pts, cam)
        assert frame.index[32, 32] == 1
        assert frame.depth[32, 32] == 1.0

    def test_tie_breaks_lower_index(self):
        cam = self.axis_cam()
        pts = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        frame = rasterize_frame(pts, cam)
        assert frame.index[32, 32] == 0

    def test_matches_pixel_oracle_100_points(self):
        rng = np.random.default_rng(6)
        cam = self.axis_cam(width=48, height=40, cx=24.0, cy=20.0,
                            splat_radius=1.5)
        pts = rng.uniform(-0.3, 0.3, size=(100, 3)) + [0, 0, 1.5]
        frame = rasterize_frame(pts, cam)
        depth, index = pixel_oracle(pts, cam)
        assert np.array_equal(frame.index, index)
        finite = np.isfinite(depth)
        assert np.array_equal(np.isfinite(frame.depth), finite)
        assert np.allclose(frame.depth[finite], depth[finite])

    def test_input_order_independence(self):
        rng = np.random.default_rng(7)
        cam = self.axis_cam()
        pts = rng.uniform(-0.2, 0.2, size=(50, 3)) + [0, 0, 1.2]
        a = rasterize_frame(pts, cam)
        perm = rng.permutation(50)
        b = rasterize_frame(pts[perm], cam)
        # same pixels hit, same depths (indices permute)
        assert np.array_equal(a.index >= 0, b.index >= 0)
        assert np.allclose(a.depth, b.depth, equal_nan=True)
        hit = a.index >= 0
        assert np.array_equal(b.index[hit], perm.argsort()[a.index[hit]])

    def test_behind_camera_culled(self):
        cam = self.axis_cam()
        frame = rasterize_frame(np.array([[0.0, 0.0, -1.0]]), cam)
        assert frame.empty
        assert frame.image.sum() == 0

    def test_translation_invariance(self):
        rng = np.random.default_rng(8)
        pts = rng.uniform(-0.2, 0.2, size=(30, 3)) + [0, 0, 1.5]
        shift = np.array([10.0, -3.0, 7.0])
        cam_a = CameraSpec.look_at(eye=(0.4, 0.3, -0.2), target=(0, 0, 1.5),
                                   fx=90.0, fy=90.0, cx=24.0, cy=24.0,
                                   width=48, height=48)
        cam_b = CameraSpec.look_at(eye=np.array((0.4, 0.3, -0.2)) + shift,
                                   target=np.array((0, 0, 1.5)) + shift,
                                   fx=90.0, fy=90.0, cx=24.0, cy=24.0,
                                   width=48, height=48)
        a = rasterize_frame(pts, cam_a)
        b = rasterize_frame(pts + shift, cam_b)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.index, b.index)

    def test_depth_mapping_monotone(self):
        cam = self.axis_cam()
        pts = np.array([[0.0, 0.0, 1.0], [0.2, 0.0, 2.0], [-0.2, 0.0, 3.0]])
        frame = rasterize_frame(pts, cam)
        vals = []
        for i in range(3):
            mask = frame.index == i
            assert mask.any()
            vals.append(int(frame.image[mask][0]))
        assert vals[0] == 255 and vals[2] == 1  # near bright, far dim
        assert vals[0] > vals[1] > vals[2] >= 1

    def test_object_id_mode(self):
        cam = self.axis_cam(color_mode="object_id")
        pts = np.array([[0.0, 0.0, 1.0], [0.1, 0.0, 1.0]])
        frame = rasterize_frame(pts, cam, object_id=np.array([0, 4]))
        assert set(np.unique(frame.image)) == {0, 1, 5}
        with pytest.raises(DomainError):
            rasterize_frame(pts, cam)

    def test_fixed_depth_range(self):
        cam = self.axis_cam(depth_range=(1.0, 3.0))
        frame = rasterize_frame(np.array([[0.0, 0.0, 2.0]]), cam)
        hit = frame.index >= 0
        assert np.all(frame.image[hit] == 1 + round(254 * 0.5))

    def test_camera_validation(self):
        with pytest.raises(DomainError):
            self.axis_cam(fx=-1.0).validate()
        with pytest.raises(DomainError):
            self.axis_cam(width=8).validate()
        with pytest.raises(DomainError):
            self.axis_cam(color_mode="rainbow").validate()

    def test_pgm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(9)
        img = rng.integers(0, 256, size=(40, 48)).astype(np.uint8)
        write_pgm(img, tmp_path / "x.pgm")
        assert np.array_equal(read_pgm(tmp_path / "x.pgm"), img)
        # byte-stable
        write_pgm(img, tmp_path / "y.pgm")
        assert (tmp_path / "x.pgm").read_bytes() == \
            (tmp_path / "y.pgm").read_bytes()
