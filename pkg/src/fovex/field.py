"""Voxel radiance field: differentiable volume rendering and fitting.

The field is a dense node-centered voxel grid over an axis-aligned box.
Node ``(i, j, k)`` sits at ``lo + (i, j, k) * (hi - lo) / (dims - 1)``. Both
grids hold raw values; queries interpolate the raw grids trilinearly and
then activate: density through softplus (so sigma >= 0 everywhere) and
color through the logistic function (so channels stay in (0, 1)). Points
outside the bounds have zero density by definition.

Rendering integrates the standard emission-absorption quadrature over
midpoint samples:

    delta = (far - near) / samples,  t_i = near + (i + 0.5) * delta
    T_i   = prod_{j<i} (1 - alpha_j),  alpha_i = 1 - exp(-sigma_i * delta)
    w_i   = T_i * alpha_i
    color = sum_i w_i c_i + T_final * background

with ``sum_i w_i + T_final = 1`` by construction. Fitting minimizes the
mean squared error of rendered against observed pixel colors with Adam;
gradients flow analytically through the quadrature, the activations, and
the trilinear weights. Hot paths run in compiled kernels (``_kernels``);
:meth:`VoxelRadianceField.query` and :func:`volume_render` are plain numpy
references used to cross-check them.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import fit_forward_backward_kernel, render_rays_kernel
from .errors import ConfigError, FitError, FormatError
from .geometry import Intrinsics, Pose, pixel_rays, slab_intervals
from .optim import Adam

_MAGIC = b"NEOF"
_VERSION = 1


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def logistic(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus_inverse(y: float) -> float:
    if y <= 0:
        raise ConfigError("softplus inverse needs a positive value")
    return float(np.log(np.expm1(y)))


def logit(y: float) -> float:
    if not 0 < y < 1:
        raise ConfigError("logit needs a value in (0, 1)")
    return float(np.log(y / (1.0 - y)))


@dataclass(frozen=True)
class RenderConfig:
    samples: int = 128
    near: float = 0.05
    far: float = 8.0
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # With auto_far each ray integrates only to its exit from the field
    # bounds (capped by ``far``), keeping the step size near the voxel size.
    auto_far: bool = False
    # Stop integrating once transmittance drops below this; 0 disables.
    early_stop: float = 0.0

    def __post_init__(self):
        if self.samples < 2:
            raise ConfigError(f"need at least 2 samples per ray, got {self.samples}")
        if not 0 <= self.near < self.far:
            raise ConfigError(f"need 0 <= near < far, got {self.near}, {self.far}")
        if self.early_stop < 0:
            raise ConfigError("early_stop must be >= 0")


@dataclass(frozen=True)
class FitConfig:
    schedule: tuple[tuple[int, int], ...]  # (grid resolution, iterations) phases
    render: RenderConfig
    rays_per_batch: int = 4096
    lr: float = 0.1
    lr_final_scale: float = 0.1  # exponential decay target within each phase
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    tv_weight: float = 1e-6

    def __post_init__(self):
        if not self.schedule:
            raise ConfigError("fit schedule must have at least one phase")
        res = [r for r, _ in self.schedule]
        if any(r < 2 for r in res) or any(a > b for a, b in zip(res, res[1:])):
            raise ConfigError(f"schedule resolutions must be >= 2 and non-decreasing: {res}")
        if any(it < 0 for _, it in self.schedule):
            raise ConfigError("schedule iteration counts must be >= 0")
        if self.rays_per_batch <= 0 or self.lr <= 0 or not 0 < self.lr_final_scale <= 1:
            raise ConfigError("rays_per_batch, lr, lr_final_scale must be positive")
        if self.tv_weight < 0:
            raise ConfigError("tv_weight must be >= 0")


@dataclass
class VoxelRadianceField:
    lo: np.ndarray  # (3,) float64
    hi: np.ndarray  # (3,) float64
    density_raw: np.ndarray  # (D0, D1, D2) float32
    color_raw: np.ndarray  # (D0, D1, D2, 3) float32

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        self.density_raw = np.ascontiguousarray(self.density_raw, dtype=np.float32)
        self.color_raw = np.ascontiguousarray(self.color_raw, dtype=np.float32)
        if self.lo.shape != (3,) or self.hi.shape != (3,) or not (self.lo < self.hi).all():
            raise ConfigError("field bounds must be a non-degenerate box")
        if self.density_raw.ndim != 3 or min(self.density_raw.shape) < 2:
            raise ConfigError(f"density grid must be at least 2^3, got {self.density_raw.shape}")
        if self.color_raw.shape != self.density_raw.shape + (3,):
            raise ConfigError("color grid shape must match density grid plus a channel axis")
        if not (np.isfinite(self.density_raw).all() and np.isfinite(self.color_raw).all()):
            raise ConfigError("field grids must be finite")

    @classmethod
    def create(cls, lo, hi, dims, init_density: float = 0.01, init_color: float = 0.5):
        """Constant-initialized field with the given activated values."""
        dims = tuple(int(d) for d in (dims if np.ndim(dims) else (dims,) * 3))
        d = np.full(dims, softplus_inverse(init_density), dtype=np.float32)
        c = np.full(dims + (3,), logit(init_color), dtype=np.float32)
        return cls(np.asarray(lo), np.asarray(hi), d, c)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.density_raw.shape

    @property
    def scale(self) -> np.ndarray:
        """Grid-index units per meter along each axis."""
        return (np.array(self.dims, dtype=np.float64) - 1.0) / (self.hi - self.lo)

    def copy(self) -> "VoxelRadianceField":
        return VoxelRadianceField(self.lo.copy(), self.hi.copy(), self.density_raw.copy(), self.color_raw.copy())

    def query(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Reference query: (sigma (N,), color (N, 3)) at world points.

        Out-of-bounds points return sigma 0 and the neutral color 0.5.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        dims = np.array(self.dims)
        g = (pts - self.lo) * self.scale
        oob = (g < 0.0).any(axis=1) | (g > dims - 1.0).any(axis=1)
        gc = np.clip(g, 0.0, dims - 1.0)
        idx = np.minimum(gc.astype(np.int64), dims - 2)
        f = gc - idx
        draw = np.zeros(len(pts))
        craw = np.zeros((len(pts), 3))
        dgrid = self.density_raw
        cgrid = self.color_raw
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1.0 - f[:, 0]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1.0 - f[:, 1]
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1.0 - f[:, 2]
                    w = wx * wy * wz
                    ii, jj, kk = idx[:, 0] + dx, idx[:, 1] + dy, idx[:, 2] + dz
                    draw += w * dgrid[ii, jj, kk]
                    craw += w[:, None] * cgrid[ii, jj, kk]
        sigma = softplus(draw)
        color = logistic(craw)
        sigma[oob] = 0.0
        color[oob] = 0.5
        return sigma, color

    def resampled(self, new_dims) -> "VoxelRadianceField":
        """Trilinearly resample the raw grids to a new resolution."""
        new_dims = tuple(int(d) for d in (new_dims if np.ndim(new_dims) else (new_dims,) * 3))
        if any(d < 2 for d in new_dims):
            raise ConfigError(f"resample target too small: {new_dims}")
        d = self.density_raw.astype(np.float64)
        c = self.color_raw.astype(np.float64)
        for axis in range(3):
            d = _resample_axis(d, axis, new_dims[axis])
            c = _resample_axis(c, axis, new_dims[axis])
        return VoxelRadianceField(self.lo.copy(), self.hi.copy(), d.astype(np.float32), c.astype(np.float32))

    def save(self, path) -> None:
        """Write the checkpoint: magic, version, bounds, dims, raw grids."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = struct.pack("<4sI", _MAGIC, _VERSION)
        header += self.lo.astype("<f8").tobytes() + self.hi.astype("<f8").tobytes()
        header += np.array(self.dims, dtype="<u4").tobytes()
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.density_raw.astype("<f4").tobytes())
            fh.write(self.color_raw.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "VoxelRadianceField":
        blob = Path(path).read_bytes()
        if len(blob) < 8 + 48 + 12:
            raise FormatError(f"field checkpoint {path} is truncated")
        magic, version = struct.unpack_from("<4sI", blob, 0)
        if magic != _MAGIC:
            raise FormatError(f"bad magic {magic!r} in {path}")
        if version != _VERSION:
            raise FormatError(f"unsupported field checkpoint version {version}")
        lo = np.frombuffer(blob, dtype="<f8", count=3, offset=8).astype(np.float64)
        hi = np.frombuffer(blob, dtype="<f8", count=3, offset=32).astype(np.float64)
        dims = np.frombuffer(blob, dtype="<u4", count=3, offset=56).astype(np.int64)
        n = int(dims.prod())
        expected = 68 + 4 * n + 4 * 3 * n
        if len(blob) != expected:
            raise FormatError(f"field checkpoint {path} has {len(blob)} bytes, expected {expected}")
        d = np.frombuffer(blob, dtype="<f4", count=n, offset=68).reshape(tuple(dims))
        c = np.frombuffer(blob, dtype="<f4", count=3 * n, offset=68 + 4 * n).reshape(tuple(dims) + (3,))
        return cls(lo, hi, d.copy(), c.copy())


def _resample_axis(arr: np.ndarray, axis: int, n_new: int) -> np.ndarray:
    n_old = arr.shape[axis]
    if n_new == n_old:
        return arr
    pos = np.linspace(0.0, n_old - 1.0, n_new)
    i0 = np.minimum(np.floor(pos).astype(np.int64), n_old - 2)
    f = pos - i0
    a0 = np.take(arr, i0, axis=axis)
    a1 = np.take(arr, i0 + 1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = n_new
    f = f.reshape(shape)
    return a0 * (1.0 - f) + a1 * f


def ray_fars(field: VoxelRadianceField, origins: np.ndarray, dirs: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    """Per-ray far plane: bounds exit distance when auto_far, else cfg.far."""
    n = len(origins)
    if not cfg.auto_far:
        return np.full(n, cfg.far, dtype=np.float64)
    _, tmax = slab_intervals(origins, dirs, field.lo, field.hi)
    t_exit = tmax.min(axis=1)
    return np.clip(t_exit, cfg.near + 1e-6, cfg.far)


def render_rays(field: VoxelRadianceField, origins: np.ndarray, dirs: np.ndarray, cfg: RenderConfig):
    """Render a batch of rays. Returns (colors (N, 3), transmittance (N,))."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    fars = ray_fars(field, origins, dirs, cfg)
    out_rgb = np.empty((len(origins), 3), dtype=np.float64)
    out_t = np.empty(len(origins), dtype=np.float64)
    d0, d1, d2 = field.dims
    s = field.scale
    render_rays_kernel(
        field.density_raw.ravel(),
        field.color_raw.ravel(),
        d0,
        d1,
        d2,
        field.lo[0],
        field.lo[1],
        field.lo[2],
        s[0],
        s[1],
        s[2],
        origins,
        dirs,
        fars,
        cfg.near,
        cfg.samples,
        cfg.background[0],
        cfg.background[1],
        cfg.background[2],
        cfg.early_stop,
        out_rgb,
        out_t,
    )
    return out_rgb, out_t


def volume_render(field: VoxelRadianceField, origin, direction, cfg: RenderConfig):
    """Reference single-ray renderer in plain numpy.

    Same quadrature as the compiled kernel, kept independent so the two
    can be cross-checked. Returns (color (3,), final transmittance).
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    far = float(ray_fars(field, origin[None], direction[None], cfg)[0])
    delta = (far - cfg.near) / cfg.samples
    ts = cfg.near + (np.arange(cfg.samples) + 0.5) * delta
    sigma, color = field.query(origin + ts[:, None] * direction)
    alpha = -np.expm1(-sigma * delta)
    t_acc = 1.0
    rgb = np.zeros(3)
    for i in range(cfg.samples):
        w = t_acc * alpha[i]
        rgb += w * color[i]
        t_acc -= w
        if t_acc < cfg.early_stop:
            break
    return rgb + t_acc * np.asarray(cfg.background), t_acc


def render_view(field: VoxelRadianceField, pose: Pose, intr: Intrinsics, cfg: RenderConfig) -> np.ndarray:
    """Render a full image (H, W, 3) float64 for a camera."""
    origins, dirs = pixel_rays(intr, pose)
    rgb, _ = render_rays(field, origins, dirs, cfg)
    return rgb.reshape(intr.height, intr.width, 3)


def render_weights(field: VoxelRadianceField, origins: np.ndarray, dirs: np.ndarray, cfg: RenderConfig):
    """Per-sample quadrature weights, for inspecting normalization.

    Returns ``(weights (N, S), final transmittance (N,))`` computed with the
    reference query path. ``sum(weights, axis=1) + T`` is 1 up to rounding.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    fars = ray_fars(field, origins, dirs, cfg)
    n, s = len(origins), cfg.samples
    deltas = (fars - cfg.near) / s
    ts = cfg.near + (np.arange(s, dtype=np.float64) + 0.5)[None, :] * deltas[:, None]
    pts = origins[:, None, :] + dirs[:, None, :] * ts[:, :, None]
    sigma, _ = field.query(pts.reshape(-1, 3))
    alpha = -np.expm1(-sigma.reshape(n, s) * deltas[:, None])
    t_acc = np.ones(n)
    weights = np.empty((n, s))
    for i in range(s):
        w = t_acc * alpha[:, i]
        weights[:, i] = w
        t_acc -= w
    return weights, t_acc


def _tv_loss_and_grad(raw: np.ndarray, weight: float, grad: np.ndarray) -> float:
    """Squared-difference total variation on a raw grid; adds into grad."""
    total = 0.0
    for axis in range(3):
        diff = np.diff(raw, axis=axis)
        total += float(np.square(diff, dtype=np.float64).sum())
        sl_hi = [slice(None)] * 3
        sl_lo = [slice(None)] * 3
        sl_hi[axis] = slice(1, None)
        sl_lo[axis] = slice(None, -1)
        step = (2.0 * weight) * diff
        grad[tuple(sl_hi)] += step
        grad[tuple(sl_lo)] -= step
    return weight * total


def _view_key(view) -> bytes:
    img, pose, intr = view
    return (
        pose.canonical_bytes()
        + struct.pack("<dII", intr.focal_px, intr.width, intr.height)
        + np.ascontiguousarray(img, dtype=np.float64).tobytes()
    )


def _ray_pool(field, views, cfg: RenderConfig):
    """Stack all pixel rays of all views in a canonical order."""
    ordered = sorted(views, key=_view_key)
    origins, dirs, targets = [], [], []
    for img, pose, intr in ordered:
        img = np.asarray(img, dtype=np.float64)
        if img.shape != (intr.height, intr.width, 3):
            raise ConfigError(f"view image shape {img.shape} does not match {intr.width}x{intr.height}")
        o, d = pixel_rays(intr, pose)
        origins.append(o)
        dirs.append(d)
        targets.append(img.reshape(-1, 3))
    origins = np.concatenate(origins)
    dirs = np.concatenate(dirs)
    targets = np.concatenate(targets)
    fars = ray_fars(field, origins, dirs, cfg)
    return origins, dirs, targets, fars


def fit(field: VoxelRadianceField, views, cfg: FitConfig, seed: int):
    """Fit the field to posed views. Returns (fitted field, loss trace).

    ``views`` is a sequence of ``(image, pose, intrinsics)``. Ray batches
    are drawn from the pooled pixels of all views; the pool order is
    canonical in the poses, so results do not depend on the order views are
    passed in. The batch for iteration ``i`` of phase ``p`` depends only on
    ``(seed, p, i)``.
    """
    if len(views) < 2:
        raise ConfigError(f"fitting needs at least 2 views, got {len(views)}")
    for _, pose, _ in views:
        p = pose.translation
        if not ((p >= field.lo).all() and (p <= field.hi).all()):
            raise ConfigError(f"view pose {p} outside field bounds")

    work = field.copy()
    origins, dirs, targets, fars = _ray_pool(work, views, cfg.render)
    n_rays = len(origins)
    trace = []
    rc = cfg.render
    for phase, (res, iters) in enumerate(cfg.schedule):
        if (res, res, res) != work.dims:
            work = work.resampled(res)
        if iters == 0:
            continue
        dens = work.density_raw
        col = work.color_raw
        opt = Adam([dens, col], cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        # Gradients accumulate in float64; parameters and moments stay float32.
        gd = np.zeros(dens.shape, dtype=np.float64)
        gc = np.zeros(col.shape, dtype=np.float64)
        d0, d1, d2 = work.dims
        s = work.scale
        for it in range(iters):
            rng = np.random.default_rng([seed, phase, it])
            idx = rng.integers(0, n_rays, size=cfg.rays_per_batch)
            gd[...] = 0.0
            gc[...] = 0.0
            mse = fit_forward_backward_kernel(
                dens.ravel(),
                col.ravel(),
                d0,
                d1,
                d2,
                work.lo[0],
                work.lo[1],
                work.lo[2],
                s[0],
                s[1],
                s[2],
                np.ascontiguousarray(origins[idx]),
                np.ascontiguousarray(dirs[idx]),
                np.ascontiguousarray(fars[idx]),
                np.ascontiguousarray(targets[idx]),
                rc.near,
                rc.samples,
                rc.background[0],
                rc.background[1],
                rc.background[2],
                rc.early_stop,
                gd.ravel(),
                gc.ravel(),
            )
            tv = _tv_loss_and_grad(dens, cfg.tv_weight, gd) if cfg.tv_weight > 0 else 0.0
            total = mse + tv
            if not math.isfinite(total):
                raise FitError("fit loss is not finite", iteration=len(trace))
            lr_scale = cfg.lr_final_scale ** (it / max(1, iters - 1))
            opt.step([gd, gc], lr_scale)
            trace.append(total)
    return work, np.asarray(trace)


def grad_check(
    field: VoxelRadianceField,
    origins: np.ndarray,
    dirs: np.ndarray,
    targets: np.ndarray,
    cfg: RenderConfig,
    n_params: int = 256,
    seed: int = 0,
    corrupt: bool = False,
) -> float:
    """Max relative error of analytic vs central finite-difference gradients.

    The loss is the rendering MSE over the ray batch. Finite differences use
    a step of 1e-4 on raw grid values; the divisor is the actually realized
    float32 step. Checked parameters are drawn at random from those the
    batch touches (all others have exactly zero gradient along both routes).
    The relative error uses an absolute floor of 1e-3 times the largest
    gradient magnitude: below that scale a 1e-4 step cannot resolve the
    difference quotient in float64 and the comparison would measure rounding
    noise. With ``corrupt`` the largest analytic gradient entry is doubled
    first, which must make the check fail.
    """
    if cfg.early_stop != 0.0:
        raise ConfigError("grad_check requires early_stop 0 (truncation breaks finite differences)")
    work = field.copy()
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    fars = ray_fars(work, origins, dirs, cfg)
    dens = work.density_raw
    col = work.color_raw
    gd = np.zeros(dens.shape, dtype=np.float64)
    gc = np.zeros(col.shape, dtype=np.float64)
    d0, d1, d2 = work.dims
    s = work.scale
    fit_forward_backward_kernel(
        dens.ravel(),
        col.ravel(),
        d0,
        d1,
        d2,
        work.lo[0],
        work.lo[1],
        work.lo[2],
        s[0],
        s[1],
        s[2],
        origins,
        dirs,
        fars,
        targets,
        cfg.near,
        cfg.samples,
        cfg.background[0],
        cfg.background[1],
        cfg.background[2],
        0.0,
        gd.ravel(),
        gc.ravel(),
    )
    analytic = np.concatenate([gd.ravel(), gc.ravel()])
    if corrupt:
        analytic[int(np.argmax(np.abs(analytic)))] *= 2.0

    gmax = float(np.abs(analytic).max())
    if gmax == 0.0:
        return 0.0
    candidates = np.flatnonzero(np.abs(analytic) > 1e-4 * gmax)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(candidates, size=min(n_params, len(candidates)), replace=False)

    def loss_of() -> float:
        rgb, _ = render_rays(work, origins, dirs, cfg)
        return float(np.mean((rgb - targets) ** 2))

    h = 1e-4
    floor = 1e-3 * gmax
    n_dens = dens.size
    worst = 0.0
    dflat = dens.ravel()
    cflat = col.ravel()
    for p in chosen:
        arr, i = (dflat, p) if p < n_dens else (cflat, p - n_dens)
        old = arr[i]
        arr[i] = np.float32(float(old) + h)
        xp = float(arr[i])
        lp = loss_of()
        arr[i] = np.float32(float(old) - h)
        xm = float(arr[i])
        lm = loss_of()
        arr[i] = old
        fd = (lp - lm) / (xp - xm)
        a = float(analytic[p])
        err = abs(a - fd) / max(abs(a), abs(fd), floor)
        worst = max(worst, err)
    return worst
