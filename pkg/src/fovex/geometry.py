"""Camera models and rigid transforms.

Conventions used everywhere in this package:

* Camera frame: +x right, +y down, +z forward (right handed). A pixel at
  integer index ``(x, y)`` has its sample point at ``(x + 0.5, y + 0.5)``
  on the image plane; pixel ``(0, 0)`` is the top-left corner.
* Pinhole intrinsics: square pixels, single focal length in pixels,
  principal point at the image center (``cx = width / 2``).
* World frame: z is up. A yaw of 0 faces +x; yaw increases counter
  clockwise when viewed from above (right handed about +z).
* ``Pose`` stores the camera-to-world transform: ``p_world = R @ p_cam + t``.

Angles are radians unless a name says ``deg``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics with a centered principal point."""

    focal_px: float
    width: int
    height: int

    def __post_init__(self):
        if self.focal_px <= 0:
            raise ConfigError(f"focal_px must be positive, got {self.focal_px}")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    @property
    def fov_x_deg(self) -> float:
        return fov_deg(self.width, self.focal_px)

    @property
    def fov_y_deg(self) -> float:
        return fov_deg(self.height, self.focal_px)

    def to_dict(self) -> dict:
        return {"focal_px": float(self.focal_px), "width": int(self.width), "height": int(self.height)}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        try:
            return cls(float(d["focal_px"]), int(d["width"]), int(d["height"]))
        except KeyError as e:
            raise FormatError(f"intrinsics dict missing key {e}") from e


def fov_deg(extent_px: int, focal_px: float) -> float:
    """Full field of view in degrees across an image extent."""
    return math.degrees(2.0 * math.atan(extent_px / (2.0 * focal_px)))


def extend_intrinsics(intr: Intrinsics, target_fov_deg: float) -> Intrinsics:
    """Widen a camera to a target field of view, keeping the focal length.

    The new width and height are ``2 * round(f * tan(fov / 2))`` so they are
    always even and the principal point stays centered. The original pixel
    grid is reproduced exactly in the center of the extended image: rays for
    the central crop coincide with the original camera's rays.
    """
    if not 0.0 < target_fov_deg < 180.0:
        raise ConfigError(f"target fov must be in (0, 180) deg, got {target_fov_deg}")
    half = math.tan(math.radians(target_fov_deg) / 2.0) * intr.focal_px
    side = 2 * round(half)
    if side < max(intr.width, intr.height):
        raise ConfigError(
            f"target fov {target_fov_deg:.2f} deg does not extend the {intr.width}x{intr.height} camera"
        )
    return Intrinsics(intr.focal_px, side, side)


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray  # (3, 3) float64
    translation: np.ndarray  # (3,) float64

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ConfigError(f"bad pose shapes {r.shape}, {t.shape}")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def compose(self, other: "Pose") -> "Pose":
        """Return self * other (apply ``other`` first, then ``self``)."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points (..., 3) from camera to world coordinates."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        try:
            r = np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3)
            t = np.asarray(d["translation"], dtype=np.float64)
        except (KeyError, ValueError) as e:
            raise FormatError(f"bad pose dict: {e}") from e
        return cls(r, t)

    def canonical_bytes(self) -> bytes:
        """Stable byte key for ordering poses independently of file layout."""
        return np.ascontiguousarray(self.rotation, dtype=np.float64).tobytes() + np.ascontiguousarray(
            self.translation, dtype=np.float64
        ).tobytes()


def yaw_rotation(yaw: float) -> np.ndarray:
    """Rotation of a level camera (no pitch or roll) heading at ``yaw``.

    Columns are the camera axes in world coordinates: right, down, forward.
    Forward is horizontal, down is -z (world z is up).
    """
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [s, 0.0, c],
            [-c, 0.0, s],
            [0.0, -1.0, 0.0],
        ],
        dtype=np.float64,
    )


def level_pose(position, yaw: float) -> Pose:
    """Pose of a level camera at ``position`` heading at ``yaw``."""
    return Pose(yaw_rotation(yaw), np.asarray(position, dtype=np.float64))


def yaw_of_pose(pose: Pose) -> float:
    """Heading angle of the camera's forward axis projected to the floor."""
    fwd = pose.rotation[:, 2]
    return math.atan2(fwd[1], fwd[0])


def rodrigues(omega: np.ndarray) -> np.ndarray:
    """Rotation matrix for an axis-angle vector (matrix exponential of [w]x)."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    wx, wy, wz = omega
    k = np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])
    if theta < 1e-8:
        # Second order Taylor expansion, exact to machine precision here.
        a = 1.0 - theta * theta / 6.0
        b = 0.5 - theta * theta / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def perturb_pose(pose: Pose, twist: np.ndarray) -> Pose:
    """Apply a small world-frame perturbation to a pose.

    ``twist`` is ``(wx, wy, wz, vx, vy, vz)``: the rotation part premultiplies
    (``R' = exp([w]x) @ R``) and the translation part is added (``t' = t + v``).
    The zero twist is the identity.
    """
    twist = np.asarray(twist, dtype=np.float64)
    if twist.shape != (6,):
        raise ConfigError(f"twist must have shape (6,), got {twist.shape}")
    return Pose(rodrigues(twist[:3]) @ pose.rotation, pose.translation + twist[3:])


def pixel_grid(intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Sample-point coordinates (x + 0.5, y + 0.5) for every pixel, row major."""
    xs = np.arange(intr.width, dtype=np.float64) + 0.5
    ys = np.arange(intr.height, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    return gx.reshape(-1), gy.reshape(-1)


def camera_ray_dirs(intr: Intrinsics) -> np.ndarray:
    """Unit ray directions in the camera frame, one per pixel, row major."""
    gx, gy = pixel_grid(intr)
    d = np.stack(
        [(gx - intr.cx) / intr.focal_px, (gy - intr.cy) / intr.focal_px, np.ones_like(gx)],
        axis=1,
    )
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def pixel_rays(intr: Intrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """World-space rays for every pixel.

    Returns ``(origins, dirs)`` with shape (H*W, 3) each, row-major pixel
    order. Directions are unit length.
    """
    dirs = camera_ray_dirs(intr) @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    return origins, dirs


def project(intr: Intrinsics, pose: Pose, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project world points into continuous pixel-index coordinates.

    Returns ``(xy, valid)`` where ``xy[i]`` is the pixel-index position (a
    point on the sample grid of pixel ``(i, j)`` projects to exactly
    ``(i, j)``) and ``valid[i]`` is False for points at or behind the camera.
    Projections of invalid points are NaN.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = (pts - pose.translation) @ pose.rotation
    z = cam[:, 2]
    valid = z > 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        x = intr.focal_px * cam[:, 0] / z + intr.cx - 0.5
        y = intr.focal_px * cam[:, 1] / z + intr.cy - 0.5
    xy = np.stack([x, y], axis=1)
    xy[~valid] = np.nan
    return xy, valid


def slab_intervals(origins: np.ndarray, dirs: np.ndarray, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis ray/box parameter intervals for the slab method.

    Returns ``(tmin, tmax)`` of shape (N, 3). A ray intersects the box where
    ``max(tmin, axis=1) <= min(tmax, axis=1)``. Rays parallel to an axis get
    the full line when inside that slab and an empty interval otherwise.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origins) * inv
        t2 = (hi - origins) * inv
    par = dirs == 0.0
    if par.any():
        inside = (origins >= lo) & (origins <= hi)
        t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
    return np.minimum(t1, t2), np.maximum(t1, t2)


def central_crop_bounds(large: Intrinsics, small: Intrinsics) -> tuple[int, int, int, int]:
    """Pixel bounds (x0, y0, x1, y1) of the small camera inside the large one.

    Both cameras must share the focal length and the size difference must be
    even on both axes, which the intrinsics extension guarantees.
    """
    if large.focal_px != small.focal_px:
        raise ConfigError("central crop requires matching focal lengths")
    dx, dy = large.width - small.width, large.height - small.height
    if dx < 0 or dy < 0 or dx % 2 or dy % 2:
        raise ConfigError(f"size difference {dx}x{dy} is not a centered crop")
    return dx // 2, dy // 2, dx // 2 + small.width, dy // 2 + small.height
