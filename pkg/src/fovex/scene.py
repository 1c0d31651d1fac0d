"""Procedural ground-truth scene and exact ray-cast renderer.

A scene is a closed axis-aligned room with textured interior faces plus a
few axis-aligned box obstacles resting on the floor. Rendering casts one ray
per pixel with the slab method and shades the nearest hit with an unlit,
view-independent texture color, so every image is an exact function of the
scene and the camera. The same module derives the walkable floor area and
samples training/test camera trajectories on it.

Face indexing for any box: ``face = 2 * axis + side`` with side 0 at the low
coordinate and 1 at the high coordinate. Face (u, v) coordinates are the two
in-plane world coordinates in ascending axis order, so textures are pure
functions of the hit point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, SceneError
from .geometry import Intrinsics, Pose, level_pose, pixel_rays, slab_intervals

TEXTURE_KINDS = ("checker", "stripes", "gradient", "noise")

# Clearances used when placing obstacles, in meters. They keep a connected
# walkable ring around and between obstacles at the default 0.2 m margin.
_WALL_CLEARANCE = 0.6
_PAIR_CLEARANCE = 0.5
_PLACE_ATTEMPTS = 200


@dataclass(frozen=True)
class Box:
    lo: np.ndarray  # (3,) float64
    hi: np.ndarray  # (3,) float64

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ConfigError(f"bad box shapes {lo.shape}, {hi.shape}")
        if not (lo < hi).all():
            raise ConfigError(f"degenerate box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, p, strict: bool = False) -> bool:
        p = np.asarray(p, dtype=np.float64)
        if strict:
            return bool((p > self.lo).all() and (p < self.hi).all())
        return bool((p >= self.lo).all() and (p <= self.hi).all())

    def to_dict(self) -> dict:
        return {"lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(np.asarray(d["lo"]), np.asarray(d["hi"]))


@dataclass(frozen=True)
class Texture:
    """Procedural surface color, a pure function of face (u, v) in meters."""

    kind: str
    color_a: tuple[float, float, float]
    color_b: tuple[float, float, float]
    scale: float
    seed: int

    def __post_init__(self):
        if self.kind not in TEXTURE_KINDS:
            raise ConfigError(f"unknown texture kind {self.kind!r}")
        if self.scale <= 0:
            raise ConfigError("texture scale must be positive")
        for c in (*self.color_a, *self.color_b):
            if not 0.0 <= c <= 1.0:
                raise ConfigError("texture colors must lie in [0, 1]")

    def eval(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Colors (N, 3) for surface coordinates in meters."""
        u = np.asarray(u, dtype=np.float64) / self.scale
        v = np.asarray(v, dtype=np.float64) / self.scale
        a = np.asarray(self.color_a, dtype=np.float64)
        b = np.asarray(self.color_b, dtype=np.float64)
        if self.kind == "checker":
            parity = (np.floor(u) + np.floor(v)) % 2.0
            return np.where(parity[:, None] < 0.5, a, b)
        if self.kind == "stripes":
            parity = np.floor(u) % 2.0
            return np.where(parity[:, None] < 0.5, a, b)
        if self.kind == "gradient":
            # Triangle wave over u + v, period two scale lengths.
            frac = np.mod(u + v, 2.0)
            t = np.where(frac < 1.0, frac, 2.0 - frac)
            return a + t[:, None] * (b - a)
        t = _value_noise(u, v, self.seed)
        return a + t[:, None] * (b - a)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "color_a": [float(c) for c in self.color_a],
            "color_b": [float(c) for c in self.color_b],
            "scale": float(self.scale),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Texture":
        return cls(d["kind"], tuple(d["color_a"]), tuple(d["color_b"]), d["scale"], d["seed"])


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice hash to [0, 1), splitmix64 style."""
    with np.errstate(over="ignore"):
        x = ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        x ^= iy.astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)
        x += np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        x ^= x >> np.uint64(30)
        x *= np.uint64(0xBF58476D1CE4E5B9)
        x ^= x >> np.uint64(27)
        x *= np.uint64(0x94D049BB133111EB)
        x ^= x >> np.uint64(31)
    return (x >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(u: np.ndarray, v: np.ndarray, seed: int) -> np.ndarray:
    iu, iv = np.floor(u), np.floor(v)
    fu, fv = u - iu, v - iv
    iu = iu.astype(np.int64)
    iv = iv.astype(np.int64)
    n00 = _hash01(iu, iv, seed)
    n10 = _hash01(iu + 1, iv, seed)
    n01 = _hash01(iu, iv + 1, seed)
    n11 = _hash01(iu + 1, iv + 1, seed)
    top = n00 + fu * (n10 - n00)
    bot = n01 + fu * (n11 - n01)
    return top + fv * (bot - top)


@dataclass(frozen=True)
class Scene:
    room: Box
    obstacles: tuple[Box, ...]
    room_faces: tuple[Texture, ...]  # 6 textures
    obstacle_faces: tuple[tuple[Texture, ...], ...]  # 6 per obstacle
    seed: int

    def __post_init__(self):
        if len(self.room_faces) != 6 or any(len(f) != 6 for f in self.obstacle_faces):
            raise ConfigError("every box needs exactly 6 face textures")
        if len(self.obstacle_faces) != len(self.obstacles):
            raise ConfigError("texture sets do not match obstacle count")

    def camera_ok(self, position) -> bool:
        """True when a camera may sit at this world position."""
        p = np.asarray(position, dtype=np.float64)
        if not self.room.contains(p, strict=True):
            return False
        return not any(o.contains(p) for o in self.obstacles)

    def to_json(self) -> str:
        d = {
            "seed": int(self.seed),
            "room": self.room.to_dict(),
            "obstacles": [b.to_dict() for b in self.obstacles],
            "room_faces": [t.to_dict() for t in self.room_faces],
            "obstacle_faces": [[t.to_dict() for t in fs] for fs in self.obstacle_faces],
        }
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        try:
            d = json.loads(text)
            return cls(
                room=Box.from_dict(d["room"]),
                obstacles=tuple(Box.from_dict(b) for b in d["obstacles"]),
                room_faces=tuple(Texture.from_dict(t) for t in d["room_faces"]),
                obstacle_faces=tuple(tuple(Texture.from_dict(t) for t in fs) for fs in d["obstacle_faces"]),
                seed=int(d["seed"]),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise FormatError(f"bad scene JSON: {e}") from e

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_json(Path(path).read_text())


def _random_texture(rng: np.random.Generator, face_seed: int) -> Texture:
    kind = TEXTURE_KINDS[int(rng.integers(len(TEXTURE_KINDS)))]
    # Draw two well-separated colors so face content stays discriminable.
    a = rng.uniform(0.05, 0.95, size=3)
    b = rng.uniform(0.05, 0.95, size=3)
    while float(np.abs(a - b).sum()) < 0.6:
        b = rng.uniform(0.05, 0.95, size=3)
    scale = float(rng.uniform(0.25, 0.8))
    return Texture(kind, tuple(float(x) for x in a), tuple(float(x) for x in b), scale, face_seed)


def build_scene(seed: int, room_size=(4.0, 4.0, 2.5), n_obstacles: int = 3) -> Scene:
    """Construct a deterministic scene from a seed.

    Obstacles rest on the floor, keep clearance from the walls and from each
    other, and every face of every box gets its own texture.
    """
    size = np.asarray(room_size, dtype=np.float64)
    if size[0] < 3.0 or size[1] < 3.0 or size[2] < 2.5:
        raise ConfigError(f"room must be at least 3x3x2.5 m, got {size}")
    if n_obstacles < 0:
        raise ConfigError("obstacle count must be >= 0")
    rng = np.random.default_rng(seed)
    room = Box(np.zeros(3), size)

    obstacles: list[Box] = []
    for _ in range(n_obstacles):
        placed = False
        for _attempt in range(_PLACE_ATTEMPTS):
            fx, fy = rng.uniform(0.4, 0.9, size=2)
            hz = float(rng.uniform(0.6, min(1.8, size[2] - 0.5)))
            cx = rng.uniform(_WALL_CLEARANCE + fx / 2, size[0] - _WALL_CLEARANCE - fx / 2)
            cy = rng.uniform(_WALL_CLEARANCE + fy / 2, size[1] - _WALL_CLEARANCE - fy / 2)
            cand = Box(np.array([cx - fx / 2, cy - fy / 2, 0.0]), np.array([cx + fx / 2, cy + fy / 2, hz]))
            if all(_footprint_gap(cand, o) >= _PAIR_CLEARANCE for o in obstacles):
                obstacles.append(cand)
                placed = True
                break
        if not placed:
            raise SceneError(f"could not place obstacle {len(obstacles)} after {_PLACE_ATTEMPTS} attempts")

    # Face seeds are unique per face so all textures differ.
    room_faces = tuple(_random_texture(rng, seed * 1000 + f) for f in range(6))
    obstacle_faces = tuple(
        tuple(_random_texture(rng, seed * 1000 + 100 * (k + 1) + f) for f in range(6))
        for k in range(n_obstacles)
    )
    return Scene(room, tuple(obstacles), room_faces, obstacle_faces, seed)


def _footprint_gap(a: Box, b: Box) -> float:
    """Horizontal gap between two box footprints (negative when overlapping)."""
    gx = max(a.lo[0] - b.hi[0], b.lo[0] - a.hi[0])
    gy = max(a.lo[1] - b.hi[1], b.lo[1] - a.hi[1])
    return max(gx, gy)


def _slab(origins, dirs, box: Box):
    return slab_intervals(origins, dirs, box.lo, box.hi)


def raycast(scene: Scene, origins: np.ndarray, dirs: np.ndarray):
    """Cast rays from inside the room.

    Returns ``(t, box_idx, face)`` where ``t`` is the hit distance along each
    (unit) ray, ``box_idx`` is -1 for the room and the obstacle index
    otherwise, and ``face`` is the face id of the hit box.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(origins)

    # Room: the camera is inside, so the hit is the exit point.
    tmin, tmax = _slab(origins, dirs, scene.room)
    t_exit = tmax.min(axis=1)
    exit_axis = tmax.argmin(axis=1)
    best_t = t_exit.copy()
    best_box = np.full(n, -1, dtype=np.int64)
    side = (np.take_along_axis(dirs, exit_axis[:, None], axis=1)[:, 0] > 0).astype(np.int64)
    best_face = 2 * exit_axis + side

    for k, ob in enumerate(scene.obstacles):
        tmin, tmax = _slab(origins, dirs, ob)
        enter = tmin.max(axis=1)
        leave = tmax.min(axis=1)
        hit = (enter <= leave) & (enter > 1e-12) & (enter < best_t)
        if not hit.any():
            continue
        axis = tmin.argmax(axis=1)
        sd = (np.take_along_axis(dirs, axis[:, None], axis=1)[:, 0] < 0).astype(np.int64)
        best_t = np.where(hit, enter, best_t)
        best_box = np.where(hit, k, best_box)
        best_face = np.where(hit, 2 * axis + sd, best_face)
    return best_t, best_box, best_face


_FACE_UV_AXES = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


def shade(scene: Scene, points: np.ndarray, box_idx: np.ndarray, face: np.ndarray) -> np.ndarray:
    """Texture colors (N, 3) for hit points grouped by box and face."""
    colors = np.zeros((len(points), 3), dtype=np.float64)
    for b in range(-1, len(scene.obstacles)):
        faces = scene.room_faces if b == -1 else scene.obstacle_faces[b]
        in_box = box_idx == b
        if not in_box.any():
            continue
        for f in range(6):
            mask = in_box & (face == f)
            if not mask.any():
                continue
            ua, va = _FACE_UV_AXES[f // 2]
            colors[mask] = faces[f].eval(points[mask, ua], points[mask, va])
    return colors


def render_ground_truth(scene: Scene, pose: Pose, intr: Intrinsics):
    """Render the exact image and depth for a camera.

    Returns ``(image, depth)``: image (H, W, 3) float64 in [0, 1], depth
    (H, W) float64 in meters measured along the (unit-length) pixel ray.
    """
    if not scene.room.contains(pose.translation, strict=True):
        raise SceneError(f"camera {pose.translation} is not inside the room")
    if any(o.contains(pose.translation) for o in scene.obstacles):
        raise SceneError(f"camera {pose.translation} is inside an obstacle")
    origins, dirs = pixel_rays(intr, pose)
    t, box_idx, face = raycast(scene, origins, dirs)
    pts = origins + dirs * t[:, None]
    colors = shade(scene, pts, box_idx, face)
    h, w = intr.height, intr.width
    return colors.reshape(h, w, 3), t.reshape(h, w)


@dataclass(frozen=True)
class WalkableArea:
    """Occupancy grid over the room floor.

    A cell is walkable when every point of the cell keeps the wall margin and
    the vertical camera column over the cell, from the floor up to the camera
    height, meets no obstacle. Sampling anywhere inside a walkable cell then
    always yields a valid camera position.
    """

    origin: np.ndarray  # (2,) floor coordinates of cell (0, 0) corner
    cell_size: float
    grid: np.ndarray  # (ny, nx) bool, True = walkable
    camera_height: float

    @property
    def n_walkable(self) -> int:
        return int(self.grid.sum())

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        return self.origin + (np.array([ix, iy], dtype=np.float64) + 0.5) * self.cell_size

    def walkable_cells(self) -> np.ndarray:
        """Indices (K, 2) of walkable cells as (ix, iy), row-major order."""
        iy, ix = np.nonzero(self.grid)
        return np.stack([ix, iy], axis=1)

    def contains_position(self, x: float, y: float) -> bool:
        ix = int(np.floor((x - self.origin[0]) / self.cell_size))
        iy = int(np.floor((y - self.origin[1]) / self.cell_size))
        if 0 <= ix < self.grid.shape[1] and 0 <= iy < self.grid.shape[0]:
            return bool(self.grid[iy, ix])
        return False

    def bounds(self):
        """Axis-aligned (lo, hi) of the union of walkable cells."""
        cells = self.walkable_cells()
        if len(cells) == 0:
            raise SceneError("walkable area is empty")
        lo = self.origin + cells.min(axis=0) * self.cell_size
        hi = self.origin + (cells.max(axis=0) + 1.0) * self.cell_size
        return lo, hi


def walkable_area(
    scene: Scene,
    cell_size: float = 0.1,
    camera_height: float = 1.5,
    wall_margin: float = 0.2,
) -> WalkableArea:
    """Derive the walkable floor grid for a scene."""
    if not 0 < camera_height < scene.room.hi[2]:
        raise ConfigError(f"camera height {camera_height} outside the room")
    size = scene.room.hi[:2] - scene.room.lo[:2]
    nx = int(np.ceil(size[0] / cell_size - 1e-9))
    ny = int(np.ceil(size[1] / cell_size - 1e-9))
    x0 = scene.room.lo[0] + np.arange(nx) * cell_size
    y0 = scene.room.lo[1] + np.arange(ny) * cell_size
    cx0, cy0 = np.meshgrid(x0, y0)
    cx1, cy1 = cx0 + cell_size, cy0 + cell_size

    ok = (
        (cx0 >= scene.room.lo[0] + wall_margin)
        & (cx1 <= scene.room.hi[0] - wall_margin)
        & (cy0 >= scene.room.lo[1] + wall_margin)
        & (cy1 <= scene.room.hi[1] - wall_margin)
    )
    for ob in scene.obstacles:
        if ob.lo[2] < camera_height and ob.hi[2] > 0.0:
            overlap = (cx1 > ob.lo[0]) & (cx0 < ob.hi[0]) & (cy1 > ob.lo[1]) & (cy0 < ob.hi[1])
            ok &= ~overlap
    return WalkableArea(scene.room.lo[:2].copy(), float(cell_size), ok, float(camera_height))


def sample_training_trajectory(scene: Scene, area: WalkableArea, n: int, seed: int) -> list[Pose]:
    """Poses uniformly random over walkable cells at a fixed height.

    Positions are uniform within the chosen cell; yaw is uniform over the
    full circle; pitch and roll are zero.
    """
    if n <= 0:
        raise ConfigError(f"need a positive number of poses, got {n}")
    cells = area.walkable_cells()
    if len(cells) == 0:
        raise SceneError("walkable area is empty")
    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(n):
        ix, iy = cells[int(rng.integers(len(cells)))]
        off = rng.uniform(0.0, area.cell_size, size=2)
        x = area.origin[0] + ix * area.cell_size + off[0]
        y = area.origin[1] + iy * area.cell_size + off[1]
        yaw = float(rng.uniform(0.0, 2.0 * np.pi))
        poses.append(level_pose([x, y, area.camera_height], yaw))
    return poses


def sample_test_paths(
    scene: Scene,
    area: WalkableArea,
    paths: int,
    per_path: int,
    seed: int,
    step: float = 0.15,
    max_turn_deg: float = 20.0,
) -> list[Pose]:
    """Random-walk test trajectories over the walkable area.

    Each path starts at a random walkable position with a random heading and
    advances by ``step`` meters per frame, turning by a uniform increment in
    ``[-max_turn_deg, max_turn_deg]``. Steps leaving the walkable area are
    re-drawn with a fresh turn; after a few failures the walker reverses.
    """
    if paths <= 0 or per_path <= 0:
        raise ConfigError("path counts must be positive")
    cells = area.walkable_cells()
    if len(cells) == 0:
        raise SceneError("walkable area is empty")
    rng = np.random.default_rng(seed)
    max_turn = np.radians(max_turn_deg)
    poses = []
    for _ in range(paths):
        ix, iy = cells[int(rng.integers(len(cells)))]
        off = rng.uniform(0.0, area.cell_size, size=2)
        x = area.origin[0] + ix * area.cell_size + off[0]
        y = area.origin[1] + iy * area.cell_size + off[1]
        yaw = float(rng.uniform(0.0, 2.0 * np.pi))
        poses.append(level_pose([x, y, area.camera_height], yaw))
        for _ in range(per_path - 1):
            placed = False
            for retry in range(8):
                turn = float(rng.uniform(-max_turn, max_turn))
                cand_yaw = yaw + turn + (np.pi if retry >= 4 else 0.0)
                nx_, ny_ = x + step * np.cos(cand_yaw), y + step * np.sin(cand_yaw)
                if area.contains_position(nx_, ny_):
                    x, y, yaw = nx_, ny_, cand_yaw % (2.0 * np.pi)
                    placed = True
                    break
            if not placed:
                # Stay in place but keep turning; the path stays valid.
                yaw = (yaw + np.pi / 2.0) % (2.0 * np.pi)
            poses.append(level_pose([x, y, area.camera_height], yaw))
    return poses
