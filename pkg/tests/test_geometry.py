"""Camera model and rigid transform tests."""

import math

import numpy as np
import pytest

from fovex.errors import ConfigError
from fovex.geometry import (
    Intrinsics,
    Pose,
    camera_ray_dirs,
    central_crop_bounds,
    extend_intrinsics,
    fov_deg,
    level_pose,
    perturb_pose,
    pixel_rays,
    project,
    rodrigues,
    yaw_of_pose,
    yaw_rotation,
)

RNG = np.random.default_rng(20240817)


def random_pose(rng) -> Pose:
    r = rodrigues(rng.normal(size=3))
    return Pose(r, rng.normal(size=3))


class TestIntrinsics:
    def test_fov_square_camera(self):
        # 2 * atan(256 / (2 * 128)) = 2 * atan(1) = 90 degrees exactly.
        assert fov_deg(256, 128.0) == pytest.approx(90.0, abs=1e-12)

    def test_fov_extended_camera(self):
        # 2 * atan(512 / (2 * 128)) = 2 * atan(2).
        expected = math.degrees(2.0 * math.atan(2.0))
        assert fov_deg(512, 128.0) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(126.86989764584402, abs=1e-9)

    def test_extend_keeps_focal_and_doubles_width(self):
        small = Intrinsics(128.0, 256, 256)
        large = extend_intrinsics(small, math.degrees(2.0 * math.atan(2.0)))
        assert large.focal_px == 128.0
        assert (large.width, large.height) == (512, 512)

    def test_extend_result_is_even(self):
        small = Intrinsics(100.0, 200, 200)
        for target in (95.0, 110.0, 123.4, 150.0):
            large = extend_intrinsics(small, target)
            assert large.width % 2 == 0 and large.height % 2 == 0
            # Achieved fov is within half a pixel of the request.
            achieved = math.tan(math.radians(large.fov_x_deg) / 2.0) * small.focal_px
            wanted = math.tan(math.radians(target) / 2.0) * small.focal_px
            assert abs(achieved - wanted) <= 0.5

    def test_extend_rejects_shrinking(self):
        with pytest.raises(ConfigError):
            extend_intrinsics(Intrinsics(128.0, 256, 256), 45.0)

    def test_principal_point_centered(self):
        intr = Intrinsics(64.0, 128, 96)
        assert intr.cx == 64.0 and intr.cy == 48.0

    def test_dict_round_trip(self):
        intr = Intrinsics(32.0, 64, 64)
        assert Intrinsics.from_dict(intr.to_dict()) == intr


class TestRays:
    def test_corner_ray_direction(self):
        # Pixel (0, 0) of a 256x256 f=128 camera samples at (0.5, 0.5):
        # direction proportional to ((0.5 - 128)/128, (0.5 - 128)/128, 1).
        dirs = camera_ray_dirs(Intrinsics(128.0, 256, 256))
        expected = np.array([-0.99609375, -0.99609375, 1.0])
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(dirs[0], expected, atol=1e-14)

    def test_center_pixels_straddle_axis(self):
        # Even sizes put the optical axis between the four central pixels.
        intr = Intrinsics(128.0, 256, 256)
        dirs = camera_ray_dirs(intr).reshape(256, 256, 3)
        mean_dir = dirs[127:129, 127:129].mean(axis=(0, 1))
        np.testing.assert_allclose(mean_dir[:2], 0.0, atol=1e-12)

    def test_rays_are_unit_and_row_major(self):
        intr = Intrinsics(16.0, 8, 4)
        origins, dirs = pixel_rays(intr, level_pose([1.0, 2.0, 3.0], 0.3))
        assert origins.shape == dirs.shape == (32, 3)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
        # Row-major: entry for pixel (x=3, y=1) sits at index 1*8 + 3.
        single = camera_ray_dirs(intr).reshape(4, 8, 3)
        np.testing.assert_allclose(dirs[11], yaw_rotation(0.3) @ single[1, 3], atol=1e-12)

    def test_extended_camera_center_rays_match_original(self):
        small = Intrinsics(128.0, 256, 256)
        large = extend_intrinsics(small, 126.87)
        x0, y0, x1, y1 = central_crop_bounds(large, small)
        assert (x0, y0, x1, y1) == (128, 128, 384, 384)
        ds = camera_ray_dirs(small).reshape(256, 256, 3)
        dl = camera_ray_dirs(large).reshape(large.height, large.width, 3)
        np.testing.assert_array_equal(ds, dl[y0:y1, x0:x1])


class TestProjection:
    def test_project_inverts_rays(self):
        rng = np.random.default_rng(7)
        intr = Intrinsics(40.0, 64, 48)
        pose = random_pose(rng)
        origins, dirs = pixel_rays(intr, pose)
        depths = rng.uniform(0.5, 5.0, size=len(dirs))
        pts = origins + dirs * depths[:, None]
        xy, valid = project(intr, pose, pts)
        assert valid.all()
        gx, gy = np.meshgrid(np.arange(64), np.arange(48))
        expected = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1).astype(float)
        np.testing.assert_allclose(xy, expected, atol=1e-9)

    def test_behind_camera_invalid(self):
        intr = Intrinsics(40.0, 64, 64)
        pose = level_pose([0.0, 0.0, 0.0], 0.0)
        # Forward is +x at yaw 0, so a point at -x is behind.
        xy, valid = project(intr, pose, np.array([[-1.0, 0.0, 0.0]]))
        assert not valid[0]
        assert np.isnan(xy[0]).all()


class TestPose:
    def test_yaw_zero_faces_plus_x(self):
        r = yaw_rotation(0.0)
        np.testing.assert_allclose(r[:, 2], [1.0, 0.0, 0.0], atol=1e-15)  # forward
        np.testing.assert_allclose(r[:, 1], [0.0, 0.0, -1.0], atol=1e-15)  # down
        np.testing.assert_allclose(r[:, 0], [0.0, -1.0, 0.0], atol=1e-15)  # right

    def test_yaw_rotation_is_right_handed(self):
        for yaw in np.linspace(-math.pi, math.pi, 17):
            r = yaw_rotation(yaw)
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
            np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-14)

    def test_yaw_round_trip(self):
        for yaw in (-3.0, -1.2, 0.0, 0.7, 2.9):
            assert yaw_of_pose(level_pose([0, 0, 1.5], yaw)) == pytest.approx(yaw, abs=1e-12)

    def test_compose_inverse(self):
        rng = np.random.default_rng(11)
        a, b = random_pose(rng), random_pose(rng)
        pts = rng.normal(size=(10, 3))
        np.testing.assert_allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)
        ident = a.compose(a.inverse())
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(ident.translation, 0.0, atol=1e-12)

    def test_dict_round_trip(self):
        pose = random_pose(np.random.default_rng(3))
        again = Pose.from_dict(pose.to_dict())
        np.testing.assert_array_equal(again.rotation, pose.rotation)
        np.testing.assert_array_equal(again.translation, pose.translation)


class TestRodrigues:
    def test_quarter_turn_about_z(self):
        r = rodrigues([0.0, 0.0, math.pi / 2.0])
        np.testing.assert_allclose(r @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)

    def test_zero_is_identity(self):
        np.testing.assert_array_equal(rodrigues([0.0, 0.0, 0.0]), np.eye(3))

    def test_small_angle_matches_series(self):
        # The Taylor branch and the closed form agree around the switch point.
        for theta in (1e-9, 1e-8, 1e-7):
            axis = np.array([1.0, 2.0, 2.0]) / 3.0
            r = rodrigues(axis * theta)
            np.testing.assert_allclose(r, np.eye(3) + theta * np.array(
                [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
            ), atol=1e-14)

    def test_matches_scipy_free_reference(self):
        # Quaternion-based reference, independently coded.
        rng = np.random.default_rng(5)
        for _ in range(20):
            omega = rng.normal(size=3)
            theta = np.linalg.norm(omega)
            axis = omega / theta
            w, (x, y, z) = math.cos(theta / 2), axis * math.sin(theta / 2)
            ref = np.array(
                [
                    [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                    [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                    [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
                ]
            )
            np.testing.assert_allclose(rodrigues(omega), ref, atol=1e-12)


class TestPerturb:
    def test_zero_twist_is_identity(self):
        pose = random_pose(np.random.default_rng(13))
        out = perturb_pose(pose, np.zeros(6))
        np.testing.assert_array_equal(out.rotation, pose.rotation)
        np.testing.assert_array_equal(out.translation, pose.translation)

    def test_translation_part_adds(self):
        pose = level_pose([1.0, 2.0, 1.5], 0.4)
        out = perturb_pose(pose, np.array([0, 0, 0, 0.1, -0.2, 0.3]))
        np.testing.assert_allclose(out.translation, [1.1, 1.8, 1.8], atol=1e-15)
        np.testing.assert_array_equal(out.rotation, pose.rotation)

    def test_rotation_part_premultiplies(self):
        pose = level_pose([0.0, 0.0, 1.5], 0.0)
        out = perturb_pose(pose, np.array([0, 0, math.pi / 2, 0, 0, 0]))
        # Forward +x rotates to +y under a quarter turn about world z.
        np.testing.assert_allclose(out.rotation[:, 2], [0.0, 1.0, 0.0], atol=1e-12)
