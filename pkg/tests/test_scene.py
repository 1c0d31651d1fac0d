"""Procedural scene and oracle renderer tests."""

import math

import numpy as np
import pytest

from fovex.errors import ConfigError, SceneError
from fovex.geometry import Intrinsics, extend_intrinsics, level_pose
from fovex.imgio import central_crop, to_uint8
from fovex.scene import (
    Box,
    Scene,
    Texture,
    build_scene,
    raycast,
    render_ground_truth,
    sample_test_paths,
    sample_training_trajectory,
    walkable_area,
)


def constant_scene(color=(0.5, 0.5, 0.5), size=(4.0, 4.0, 2.5), obstacles=()):
    """Hand-built scene where every face shows one flat color."""
    tex = Texture("checker", color, color, 1.0, 0)
    return Scene(
        room=Box(np.zeros(3), np.asarray(size)),
        obstacles=tuple(obstacles),
        room_faces=(tex,) * 6,
        obstacle_faces=((tex,) * 6,) * len(obstacles),
        seed=0,
    )


class TestTextures:
    def test_checker_parity(self):
        tex = Texture("checker", (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 1.0, 0)
        u = np.array([0.5, 1.5, 0.5, 1.5, -0.5])
        v = np.array([0.5, 0.5, 1.5, 1.5, 0.5])
        got = tex.eval(u, v)[:, 0]
        np.testing.assert_array_equal(got, [0.0, 1.0, 1.0, 0.0, 1.0])

    def test_stripes_ignore_v(self):
        tex = Texture("stripes", (0.2, 0.2, 0.2), (0.9, 0.9, 0.9), 0.5, 0)
        got = tex.eval(np.array([0.1, 0.6, 0.1]), np.array([0.0, 0.0, 7.3]))[:, 0]
        np.testing.assert_array_equal(got, [0.2, 0.9, 0.2])

    def test_gradient_triangle_wave(self):
        tex = Texture("gradient", (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 1.0, 0)
        # u + v = 0, 0.5, 1.0, 1.5, 2.0 -> t = 0, 0.5, 1, 0.5, 0.
        u = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
        got = tex.eval(u, np.zeros(5))[:, 0]
        np.testing.assert_allclose(got, [0.0, 0.5, 1.0, 0.5, 0.0], atol=1e-12)

    def test_noise_in_range_and_deterministic(self):
        tex = Texture("noise", (0.1, 0.2, 0.3), (0.9, 0.8, 0.7), 0.3, 42)
        u = np.linspace(-5, 5, 101)
        v = np.linspace(3, -7, 101)
        a = tex.eval(u, v)
        b = tex.eval(u, v)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0

    def test_noise_seeds_differ(self):
        u = np.linspace(0, 3, 50)
        a = Texture("noise", (0, 0, 0), (1, 1, 1), 0.3, 1).eval(u, u)
        b = Texture("noise", (0, 0, 0), (1, 1, 1), 0.3, 2).eval(u, u)
        assert np.abs(a - b).max() > 0.05

    def test_rejects_bad_colors(self):
        with pytest.raises(ConfigError):
            Texture("checker", (0.0, 0.0, 1.5), (0, 0, 0), 1.0, 0)


class TestBuildScene:
    def test_bare_room(self):
        scene = build_scene(7, n_obstacles=0)
        assert scene.obstacles == ()
        assert len(scene.room_faces) == 6

    def test_same_seed_byte_identical(self):
        a = build_scene(7).to_json()
        b = build_scene(7).to_json()
        assert a == b

    def test_different_seed_differs(self):
        assert build_scene(7).to_json() != build_scene(8).to_json()

    def test_three_obstacles_pairwise_disjoint(self):
        scene = build_scene(7, n_obstacles=3)
        assert len(scene.obstacles) == 3
        for i in range(3):
            for j in range(i + 1, 3):
                a, b = scene.obstacles[i], scene.obstacles[j]
                sep = any(
                    a.hi[d] <= b.lo[d] or b.hi[d] <= a.lo[d] for d in range(3)
                )
                assert sep, f"obstacles {i} and {j} overlap"

    def test_obstacles_inside_room(self):
        scene = build_scene(3, n_obstacles=3)
        for ob in scene.obstacles:
            assert (ob.lo[:2] > scene.room.lo[:2]).all()
            assert (ob.hi[:2] < scene.room.hi[:2]).all()
            assert ob.hi[2] < scene.room.hi[2]

    def test_face_textures_all_distinct(self):
        scene = build_scene(5, n_obstacles=2)
        dicts = [t.to_dict() for t in scene.room_faces]
        for fs in scene.obstacle_faces:
            dicts += [t.to_dict() for t in fs]
        as_strs = [str(d) for d in dicts]
        assert len(set(as_strs)) == len(as_strs)

    def test_room_too_small_rejected(self):
        with pytest.raises(ConfigError):
            build_scene(1, room_size=(2.0, 4.0, 2.5))

    def test_json_round_trip(self):
        scene = build_scene(11)
        again = Scene.from_json(scene.to_json())
        assert again.to_json() == scene.to_json()


class TestRenderer:
    def test_constant_wall_image_and_depth(self):
        # Camera at room center looking straight at the +x wall 2 m away.
        scene = constant_scene(color=(0.3, 0.6, 0.9))
        pose = level_pose([2.0, 2.0, 1.25], 0.0)
        intr = Intrinsics(16.0, 16, 16)
        img, depth = render_ground_truth(scene, pose, intr)
        np.testing.assert_allclose(img, np.broadcast_to([0.3, 0.6, 0.9], img.shape), atol=1e-12)
        # Depth = L / cos(angle to the wall normal) for every pixel.
        from fovex.geometry import pixel_rays

        _, dirs = pixel_rays(intr, pose)
        expected = 2.0 / dirs[:, 0].reshape(16, 16)
        np.testing.assert_allclose(depth, expected, atol=1e-10)

    def test_checker_wall_phase(self):
        # Checker with 1 m cells on the +x wall, camera 2 m away, 90 deg fov.
        check = Texture("checker", (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 1.0, 0)
        flat = Texture("checker", (0.5, 0.5, 0.5), (0.5, 0.5, 0.5), 1.0, 0)
        faces = [flat] * 6
        faces[1] = check  # +x face
        scene = Scene(Box(np.zeros(3), np.array([4.0, 4.0, 2.5])), (), tuple(faces), (), 0)
        pose = level_pose([2.0, 2.0, 1.25], 0.0)
        intr = Intrinsics(32.0, 64, 64)
        img, _ = render_ground_truth(scene, pose, intr)
        # Closed-form: pixel (px, py) hits the wall at
        # (u, v) = (y, z) = (2 - 2*(px+0.5-32)/32, 1.25 - 2*(py+0.5-32)/32).
        for px, py in [(5, 20), (16, 20), (40, 45)]:
            u = 2.0 - 2.0 * (px + 0.5 - 32.0) / 32.0
            v = 1.25 - 2.0 * (py + 0.5 - 32.0) / 32.0
            # Probe rays must reach the +x wall before floor or ceiling.
            assert 0.0 < u < 4.0 and 0.0 < v < 2.5
            parity = (math.floor(u) + math.floor(v)) % 2
            np.testing.assert_allclose(img[py, px], [float(parity)] * 3, atol=1e-12)

    def test_crop_identity_bit_exact(self):
        scene = build_scene(21, n_obstacles=2)
        pose = level_pose([1.2, 2.7, 1.5], 0.8)
        small = Intrinsics(32.0, 64, 64)
        large = extend_intrinsics(small, 126.87)
        img_s, _ = render_ground_truth(scene, pose, small)
        img_l, _ = render_ground_truth(scene, pose, large)
        assert np.array_equal(to_uint8(central_crop(img_l, 64, 64)), to_uint8(img_s))

    def test_render_deterministic(self):
        scene = build_scene(13, n_obstacles=3)
        pose = level_pose([2.0, 1.0, 1.5], 2.2)
        intr = Intrinsics(24.0, 48, 48)
        a_img, a_d = render_ground_truth(scene, pose, intr)
        b_img, b_d = render_ground_truth(scene, pose, intr)
        assert np.array_equal(a_img, b_img) and np.array_equal(a_d, b_d)

    def test_obstacle_occludes_wall(self):
        ob = Box(np.array([2.5, 1.5, 0.0]), np.array([3.0, 2.5, 2.0]))
        scene = constant_scene(obstacles=(ob,))
        pose = level_pose([1.0, 2.0, 1.0], 0.0)
        intr = Intrinsics(32.0, 32, 32)
        _, depth = render_ground_truth(scene, pose, intr)
        # Central ray hits the obstacle front face 1.5 m ahead, not the wall.
        assert abs(depth[16, 16] - 1.5) < 0.05

    def test_depth_consistency_between_views(self):
        scene = build_scene(9, n_obstacles=3)
        intr = Intrinsics(32.0, 64, 64)
        pose_a = level_pose([1.0, 1.2, 1.5], 0.5)
        pose_b = level_pose([1.5, 1.0, 1.5], 0.9)
        _, depth_a = render_ground_truth(scene, pose_a, intr)
        from fovex.geometry import pixel_rays

        origins, dirs = pixel_rays(intr, pose_a)
        pts = origins + dirs * depth_a.reshape(-1, 1)
        to_b = pts - pose_b.translation
        dist_b = np.linalg.norm(to_b, axis=1)
        t_b, _, _ = raycast(scene, np.broadcast_to(pose_b.translation, pts.shape), to_b / dist_b[:, None])
        unoccluded = t_b >= dist_b - 1e-6
        assert unoccluded.mean() > 0.5
        np.testing.assert_allclose(t_b[unoccluded], dist_b[unoccluded], atol=1e-4)

    def test_invalid_poses_rejected(self):
        scene = build_scene(17, n_obstacles=3)
        intr = Intrinsics(8.0, 8, 8)
        with pytest.raises(SceneError):
            render_ground_truth(scene, level_pose([-1.0, 2.0, 1.5], 0.0), intr)
        inside = scene.obstacles[0].lo + 0.01
        with pytest.raises(SceneError):
            render_ground_truth(scene, level_pose(inside, 0.0), intr)


class TestWalkableArea:
    def test_bare_room_walkable_inside_margin(self):
        scene = constant_scene()
        area = walkable_area(scene, cell_size=0.5, camera_height=1.5, wall_margin=0.2)
        # 4 m / 0.5 m = 8 cells per side; border cells violate the margin.
        assert area.grid.shape == (8, 8)
        assert area.grid[1:7, 1:7].all()
        assert not area.grid[0].any() and not area.grid[:, 0].any()

    def test_obstacle_blocks_cells(self):
        ob = Box(np.array([1.5, 1.5, 0.0]), np.array([2.5, 2.5, 1.0]))
        scene = constant_scene(obstacles=(ob,))
        area = walkable_area(scene, cell_size=0.5)
        ax, ay = 4, 4  # cell [2.0, 2.5) x [2.0, 2.5) overlaps the box
        assert not area.grid[ay, ax]

    def test_tall_hanging_box_does_not_block(self):
        # A box entirely above camera height leaves the floor walkable.
        ob = Box(np.array([1.5, 1.5, 2.0]), np.array([2.5, 2.5, 2.4]))
        scene = constant_scene(obstacles=(ob,))
        blocked = walkable_area(constant_scene(obstacles=(Box(np.array([1.5, 1.5, 0.0]), np.array([2.5, 2.5, 2.0])),)), cell_size=0.5)
        free = walkable_area(scene, cell_size=0.5)
        assert free.n_walkable > blocked.n_walkable
        assert free.grid[4, 4]

    def test_bounds_cover_walkable_cells(self):
        scene = build_scene(2, n_obstacles=2)
        area = walkable_area(scene, cell_size=0.25)
        lo, hi = area.bounds()
        for ix, iy in area.walkable_cells():
            c = area.cell_center(ix, iy)
            assert (c >= lo).all() and (c <= hi).all()


class TestTrajectories:
    def test_training_positions_walkable_and_valid(self):
        scene = build_scene(4, n_obstacles=3)
        area = walkable_area(scene)
        poses = sample_training_trajectory(scene, area, 200, seed=1)
        assert len(poses) == 200
        for p in poses:
            x, y, z = p.translation
            assert z == area.camera_height
            assert area.contains_position(x, y)
            assert scene.camera_ok(p.translation)

    def test_training_deterministic(self):
        scene = build_scene(4, n_obstacles=2)
        area = walkable_area(scene)
        a = sample_training_trajectory(scene, area, 50, seed=9)
        b = sample_training_trajectory(scene, area, 50, seed=9)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.rotation, pb.rotation)
            assert np.array_equal(pa.translation, pb.translation)

    def test_yaw_uniformity_chi_square(self):
        scene = build_scene(4, n_obstacles=0)
        area = walkable_area(scene)
        poses = sample_training_trajectory(scene, area, 10_000, seed=5)
        from fovex.geometry import yaw_of_pose

        yaws = np.array([yaw_of_pose(p) % (2.0 * np.pi) for p in poses])
        counts, _ = np.histogram(yaws, bins=36, range=(0.0, 2.0 * np.pi))
        expected = 10_000 / 36.0
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        # Critical value of chi-square with 35 dof at the 1% level.
        assert chi2 < 57.342

    def test_path_counts_and_step_lengths(self):
        scene = build_scene(6, n_obstacles=3)
        area = walkable_area(scene)
        poses = sample_test_paths(scene, area, paths=8, per_path=25, seed=2, step=0.15)
        assert len(poses) == 200
        for k in range(8):
            chunk = poses[k * 25 : (k + 1) * 25]
            for a, b in zip(chunk, chunk[1:]):
                d = np.linalg.norm(b.translation - a.translation)
                assert d <= 0.15 + 1e-12
            for p in chunk:
                assert area.contains_position(p.translation[0], p.translation[1])

    def test_paper_scale_counts(self):
        # 40 paths x 50 frames = 2000 test views; desk scale 8 x 25 = 200.
        assert 40 * 50 == 2000
        assert 8 * 25 == 200

    def test_rejects_bad_counts(self):
        scene = build_scene(4, n_obstacles=0)
        area = walkable_area(scene)
        with pytest.raises(ConfigError):
            sample_training_trajectory(scene, area, 0, seed=1)
        with pytest.raises(ConfigError):
            sample_test_paths(scene, area, 0, 5, seed=1)
