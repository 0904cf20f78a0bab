"""Scenes, trajectories, rendering, degradations and the sequence manifest."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pinhole
from scfusion.errors import EmptyView
from scfusion.geometry import CameraIntrinsics, Pose, cell_centers, project
from scfusion.process import warp_state
from scfusion.simulator import (
    BLURRED,
    TRIMMED_RESTART,
    DegradationConfig,
    Plane,
    SceneModel,
    Trajectory,
    apply_motion_blur,
    cast_rays,
    default_camera,
    generate_sequence,
    load_sequence,
    make_default_scene,
    make_trajectory,
    motion_blur_kernel,
    render_frame,
    save_sequence,
    static_trajectory,
    translation_trajectory,
)

K500 = CameraIntrinsics(500.0, 500.0, 64.0, 48.0, 128, 96)
WALL = SceneModel([Plane((-10, -10, 2.0), (20, 0, 0), (0, 20, 0), texture_seed=3)])


@pytest.fixture(scope="module")
def default_frames():
    scene = make_default_scene(0)
    return scene, generate_sequence(scene, make_trajectory(4, speed=2), default_camera(), seed=0)


class TestRenderExamples:
    def test_fronto_parallel_plane_depth(self):
        fr = render_frame(WALL, Pose.identity(), K500)
        z = fr.gt_coords.coords[fr.gt_coords.valid, 2]
        assert fr.gt_coords.valid.all()
        np.testing.assert_allclose(z, 2.0, atol=1e-6)

    def test_identical_poses_give_zero_flow(self):
        fr = render_frame(WALL, Pose.identity(), K500, 0.1, Pose.identity(), 0.0)
        assert fr.gt_flow.valid.any()
        np.testing.assert_array_equal(fr.gt_flow.offsets[fr.gt_flow.valid], 0.0)

    def test_translation_flow_matches_projection_oracle(self):
        frames = generate_sequence(WALL, translation_trajectory(2, (0.01, 0, 0)), K500)
        f = frames[1].gt_flow
        np.testing.assert_allclose(f.offsets[f.valid, 0], -0.01 * 500 / 2, atol=1e-9)
        np.testing.assert_allclose(f.offsets[f.valid, 1], 0.0, atol=1e-9)
        # per-pixel oracle: flow = current pixel - projection into the previous camera
        u, v = cell_centers(*f.shape)
        prev = frames[0].gt_pose
        assert not f.valid[:, -1].any()  # sources beyond the right border
        ii, jj = np.nonzero(f.valid)
        for i, j in zip(ii[::501], jj[::501]):
            X = frames[1].gt_coords.coords[i, j]
            pu = pinhole(prev.R @ X + prev.translation, 500, 500, 64, 48)
            np.testing.assert_allclose(f.offsets[i, j], np.array([u[i, j], v[i, j]]) - pu, atol=1e-9)

    def test_empty_view(self):
        small = SceneModel([Plane((-0.05, -0.05, 2.0), (0.1, 0, 0), (0, 0.1, 0))])
        with pytest.raises(EmptyView):
            render_frame(small, Pose.identity(), K500)

    def test_intensities_in_unit_interval(self, default_frames):
        _, frames = default_frames
        for fr in frames:
            assert fr.image.min() >= 0 and fr.image.max() <= 1


class TestReprojectionConsistency:
    def test_labels_project_to_their_pixels(self, default_frames):
        _, frames = default_frames
        K = default_camera()
        for fr in frames:
            m = fr.gt_coords
            u, v = cell_centers(*m.shape)
            ii, jj = np.nonzero(m.valid)
            for i, j in zip(ii[::97], jj[::97]):
                pix, _ = project(m.coords[i, j], fr.gt_pose, K)
                assert np.linalg.norm(pix - (u[i, j], v[i, j])) <= 0.51


class TestFlowConsistency:
    """The flow label points each static surface pixel at the exact previous
    location of the same world point."""

    def test_ray_cast_at_flow_source_recovers_point(self, default_frames):
        scene, frames = default_frames
        K = default_camera()
        for a, b in zip(frames[:-1], frames[1:]):
            f = b.gt_flow
            static = f.valid & (b.gt_object_id < len(scene.planes))
            u, v = cell_centers(*f.shape)
            hits = cast_rays(scene, a.gt_pose, K, (u - f.offsets[..., 0])[static], (v - f.offsets[..., 1])[static], a.timestamp)
            err = np.linalg.norm(hits.points - b.gt_coords.coords[static], axis=-1)
            assert err.max() < 1e-9

    def test_bilinear_warp_exact_on_fronto_parallel_plane(self):
        frames = generate_sequence(WALL, translation_trajectory(2, (0.013, -0.004, 0)), K500, label_stride=8)
        warped = warp_state(frames[0].gt_coords, frames[1].gt_flow)
        ok = warped.valid
        assert ok.sum() > 0.7 * ok.size
        np.testing.assert_allclose(warped.coords[ok], frames[1].gt_coords.coords[ok], atol=1e-9)

    def test_dynamic_object_flow_follows_object(self, default_frames):
        scene, frames = default_frames
        K = default_camera()
        a, b = frames[0], frames[1]
        f = b.gt_flow
        moving = f.valid & (b.gt_object_id >= len(scene.planes))
        assert moving.any()
        u, v = cell_centers(*f.shape)
        hits = cast_rays(scene, a.gt_pose, K, (u - f.offsets[..., 0])[moving], (v - f.offsets[..., 1])[moving], a.timestamp)
        assert np.all(hits.object_id == b.gt_object_id[moving])


class TestMotionBlurExamples:
    def test_unit_kernel_is_identity(self, rng):
        fr = render_frame(WALL, Pose.identity(), K500)
        out = apply_motion_blur(fr, 1, (1, 1))
        np.testing.assert_array_equal(out.image, fr.image)
        assert BLURRED in out.degradation_tags

    @pytest.mark.parametrize("k", [2, 7, 30])
    def test_constant_image_unchanged(self, k):
        fr = render_frame(WALL, Pose.identity(), K500)
        const = type(fr)(np.full_like(fr.image, 0.37), fr.gt_coords, fr.gt_flow, fr.gt_pose)
        np.testing.assert_allclose(apply_motion_blur(const, k, (0.3, 1.0)).image, 0.37, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.floats(0, 2 * np.pi))
    def test_mean_preserved(self, seed, k, angle):
        img = np.random.default_rng(seed).random((48, 64))
        fr = render_frame(WALL, Pose.identity(), CameraIntrinsics(50, 50, 32, 24, 64, 48))
        fr = type(fr)(img, fr.gt_coords, fr.gt_flow, fr.gt_pose)
        out = apply_motion_blur(fr, k, (np.cos(angle), np.sin(angle)))
        assert abs(out.image.mean() - img.mean()) < 1e-6

    def test_kernel_is_normalized_line(self):
        ker = motion_blur_kernel(9, (1, 0))
        assert abs(ker.sum() - 1) < 1e-12
        rows = np.nonzero(ker.sum(axis=1))[0]
        assert len(rows) == 1  # horizontal line
        assert np.count_nonzero(ker) == 9

    def test_labels_untouched(self):
        fr = render_frame(WALL, Pose.identity(), K500)
        out = apply_motion_blur(fr, 15)
        assert out.gt_coords is fr.gt_coords and out.gt_flow is fr.gt_flow

    def test_rejects_zero_kernel(self):
        with pytest.raises(ValueError):
            motion_blur_kernel(0, (1, 0))


class TestGenerateSequenceExamples:
    def test_static_sequence(self):
        frames = generate_sequence(WALL, static_trajectory(10), K500)
        assert len(frames) == 10
        for fr in frames:
            np.testing.assert_array_equal(fr.gt_flow.offsets[fr.gt_flow.valid], 0.0)

    def test_trim_counts_and_tags(self):
        frames = generate_sequence(WALL, static_trajectory(10), K500, DegradationConfig(trim_range=(4, 6)))
        assert len(frames) == 7
        assert [TRIMMED_RESTART in fr.degradation_tags for fr in frames] == [False] * 4 + [True] + [False] * 2
        assert frames[4].timestamp == pytest.approx(7 / 30)

    def test_blur_every_n(self):
        traj = translation_trajectory(25, (0.01, 0, 0))
        frames = generate_sequence(WALL, traj, K500, DegradationConfig(blur_kernel_px=5, blur_every_n=10))
        assert [k for k, fr in enumerate(frames) if BLURRED in fr.degradation_tags] == [9, 19]

    def test_deterministic(self):
        traj = make_trajectory(3)
        deg = DegradationConfig(blur_kernel_px=9, blur_every_n=2, occluder_count=2)
        a = generate_sequence(make_default_scene(1), traj, default_camera(), deg, seed=5, label_stride=8)
        b = generate_sequence(make_default_scene(1), traj, default_camera(), deg, seed=5, label_stride=8)
        for x, y in zip(a, b):
            assert x.image.tobytes() == y.image.tobytes()
            assert x.gt_coords.equals(y.gt_coords)

    def test_occluders_depend_on_seed(self):
        traj = static_trajectory(1)
        deg = DegradationConfig(occluder_count=3)
        a = generate_sequence(make_default_scene(0), traj, default_camera(), deg, seed=1, label_stride=8)
        b = generate_sequence(make_default_scene(0), traj, default_camera(), deg, seed=2, label_stride=8)
        assert a[0].image.tobytes() != b[0].image.tobytes()

    def test_empty_trajectory(self):
        with pytest.raises(ValueError):
            generate_sequence(WALL, Trajectory([], []), K500)

    def test_empty_view_carries_frame_index(self):
        away = Pose.from_rotvec((0, np.pi, 0), (0, 0, 0))
        traj = Trajectory([Pose.identity(), away], [0.0, 0.1])
        with pytest.raises(EmptyView) as info:
            generate_sequence(WALL, traj, K500)
        assert info.value.frame_index == 1


class TestTrajectory:
    def test_velocity_limits_enforced(self):
        poses = [Pose.identity(), Pose.from_center(np.eye(3), (1.0, 0, 0))]
        with pytest.raises(ValueError):
            Trajectory(poses, [0.0, 0.1], max_linear_velocity=1.0)
        Trajectory(poses, [0.0, 1.0], max_linear_velocity=1.0)

    def test_timestamps_strictly_increasing(self):
        with pytest.raises(ValueError):
            Trajectory([Pose.identity()] * 2, [0.0, 0.0])

    def test_default_trajectory_is_smooth(self):
        traj = make_trajectory(100, speed=2)
        Trajectory(traj.poses, traj.timestamps, max_angular_velocity=1.0, max_linear_velocity=1.0)


class TestManifest:
    def test_round_trip(self, tmp_path):
        K = default_camera(64, 48)
        frames = generate_sequence(make_default_scene(0), make_trajectory(3), K, DegradationConfig(blur_kernel_px=3, blur_every_n=2), label_stride=8)
        save_sequence(frames, K, tmp_path)
        back, K2 = load_sequence(tmp_path)
        assert K2 == K and len(back) == 3
        for a, b in zip(frames, back):
            np.testing.assert_allclose(b.image, a.image, atol=1 / 65535)
            np.testing.assert_allclose(b.gt_coords.coords, a.gt_coords.coords, atol=1e-6, equal_nan=True)
            np.testing.assert_array_equal(b.gt_flow.valid, a.gt_flow.valid)
            assert b.degradation_tags == a.degradation_tags
            np.testing.assert_allclose(b.gt_pose.as_array(), a.gt_pose.as_array(), atol=1e-15)
