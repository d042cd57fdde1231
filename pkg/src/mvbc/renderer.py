"""Deterministic ray-cast RGB-D renderer over analytic primitives.

One primary ray per pixel center, nearest hit wins, flat Lambertian shading
with a fixed ambient term.  Outputs the 64x48 RGB image, a camera-frame-z
depth buffer (+inf sentinel for misses), and a per-pixel object-id buffer
used as ground truth by the feature analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraModel, Pose3, apply, inverse

FAR_CLIP = 3.0
AMBIENT = 0.3
BACKGROUND = np.array([0.7, 0.8, 0.9])

_EPS = 1e-12


@dataclass(frozen=True)
class Box:
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise ValueError("box half-extents must be positive")


@dataclass(frozen=True)
class Cylinder:
    radius: float
    half_height: float

    def __post_init__(self):
        if self.radius <= 0 or self.half_height <= 0:
            raise ValueError("cylinder dimensions must be positive")


@dataclass(frozen=True)
class GroundPlane:
    """The z = 0 plane of the primitive's local frame, extending infinitely."""


Shape = Box | Cylinder | GroundPlane


@dataclass
class Primitive:
    id: int
    shape: Shape
    pose: Pose3
    color: np.ndarray

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("primitive ids must be >= 0")
        self.color = np.clip(np.asarray(self.color, dtype=float).reshape(3), 0.0, 1.0)


@dataclass
class FrameBuffers:
    rgb: np.ndarray  # (48, 64, 3) uint8
    depth: np.ndarray  # (48, 64) float32, camera-frame z, +inf on miss
    object_id: np.ndarray  # (48, 64) int32, -1 on miss


# ---------------------------------------------------------------------------
# intersection kernels: rays from one origin, many directions, local frame


def _box_intersect(o: np.ndarray, d: np.ndarray, h: np.ndarray):
    """Slab test.  Returns (t, normal, hit) with t the nearest nonnegative root."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-h - o) * inv
        t2 = (h - o) * inv
    # Parallel rays: inside the slab -> (-inf, +inf); outside -> forced miss.
    par = np.abs(d) < _EPS
    if np.any(par):
        inside = np.abs(o) <= h
        lo = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        hi = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    else:
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
    tmin = lo.max(axis=-1)
    tmax = hi.min(axis=-1)
    enter = tmin >= 0.0
    hit = (tmax >= np.maximum(tmin, 0.0)) & np.isfinite(np.where(enter, tmin, tmax))
    t = np.where(enter, tmin, tmax)

    axis_in = lo.argmax(axis=-1)
    axis_out = hi.argmin(axis=-1)
    axis = np.where(enter, axis_in, axis_out)
    n = np.zeros_like(d)
    rows = np.arange(d.shape[0])
    sign = np.where(enter, -np.sign(d[rows, axis]), np.sign(d[rows, axis]))
    n[rows, axis] = np.where(sign == 0.0, 1.0, sign)
    return t, n, hit


def _cylinder_intersect(o: np.ndarray, d: np.ndarray, radius: float, hh: float):
    n_rays = d.shape[0]
    big = np.inf
    cand_t = np.full((4, n_rays), big)
    # Side surface.
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (o[0] * d[:, 0] + o[1] * d[:, 1])
    c = o[0] ** 2 + o[1] ** 2 - radius**2
    disc = b**2 - 4.0 * a * c
    ok = (disc >= 0.0) & (a > _EPS)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for k, root in enumerate([(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]):
            z = o[2] + root * d[:, 2]
            valid = ok & (root >= 0.0) & (np.abs(z) <= hh)
            cand_t[k] = np.where(valid, root, big)
        # Caps.
        for k, zcap in enumerate([hh, -hh]):
            tc = (zcap - o[2]) / d[:, 2]
            x = o[0] + tc * d[:, 0]
            y = o[1] + tc * d[:, 1]
            valid = (np.abs(d[:, 2]) > _EPS) & (tc >= 0.0) & (x**2 + y**2 <= radius**2)
            cand_t[2 + k] = np.where(valid, tc, big)
    which = cand_t.argmin(axis=0)
    t = cand_t[which, np.arange(n_rays)]
    hit = np.isfinite(t)
    p = o[None, :] + np.where(hit, t, 0.0)[:, None] * d
    n = np.zeros_like(d)
    side = which < 2
    with np.errstate(invalid="ignore"):
        n[side, 0] = p[side, 0] / radius
        n[side, 1] = p[side, 1] / radius
    n[~side, 2] = np.where(which[~side] == 2, 1.0, -1.0)
    return t, n, hit


def _plane_intersect(o: np.ndarray, d: np.ndarray):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -o[2] / d[:, 2]
    hit = (np.abs(d[:, 2]) > _EPS) & (t >= 0.0)
    n = np.zeros_like(d)
    n[:, 2] = 1.0 if o[2] >= 0.0 else -1.0
    return np.where(hit, t, np.inf), n, hit


def _intersect_rays(origin: np.ndarray, dirs: np.ndarray, prim: Primitive):
    """Intersect world-frame rays with one primitive.  Directions must be unit."""
    inv_pose = inverse(prim.pose)
    r_inv = inv_pose.rotation_matrix()
    o_l = apply(inv_pose, origin)
    d_l = dirs @ r_inv.T
    if isinstance(prim.shape, Box):
        t, n_l, hit = _box_intersect(o_l, d_l, np.asarray(prim.shape.half_extents))
    elif isinstance(prim.shape, Cylinder):
        t, n_l, hit = _cylinder_intersect(o_l, d_l, prim.shape.radius, prim.shape.half_height)
    elif isinstance(prim.shape, GroundPlane):
        t, n_l, hit = _plane_intersect(o_l, d_l)
    else:
        raise TypeError(f"unknown shape {type(prim.shape)!r}")
    n_w = n_l @ prim.pose.rotation_matrix().T
    return t, n_w, hit


def ray_intersect(origin, direction, prim: Primitive):
    """Nearest nonnegative intersection of a single unit ray; None on miss."""
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    t, n, hit = _intersect_rays(np.asarray(origin, dtype=float), direction[None, :], prim)
    if not hit[0]:
        return None
    nrm = n[0]
    nn = np.linalg.norm(nrm)
    return float(t[0]), (nrm / nn if nn > 0 else nrm)


# ---------------------------------------------------------------------------
# signed-distance oracle (independent of the ray intersection path)


def signed_distance(prim: Primitive, p_world: np.ndarray) -> float:
    p = apply(inverse(prim.pose), np.asarray(p_world, dtype=float))
    if isinstance(prim.shape, Box):
        q = np.abs(p) - np.asarray(prim.shape.half_extents)
        return float(np.linalg.norm(np.maximum(q, 0.0)) + min(q.max(), 0.0))
    if isinstance(prim.shape, Cylinder):
        dr = math.hypot(p[0], p[1]) - prim.shape.radius
        dz = abs(p[2]) - prim.shape.half_height
        q = np.array([dr, dz])
        return float(np.linalg.norm(np.maximum(q, 0.0)) + min(q.max(), 0.0))
    if isinstance(prim.shape, GroundPlane):
        return float(p[2])
    raise TypeError(f"unknown shape {type(prim.shape)!r}")


# ---------------------------------------------------------------------------
# rendering


def pixel_ray_directions(cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Unit camera-frame ray directions through pixel centers.

    Returns (dirs (H*W, 3), z_factor (H*W,)) where depth = t * z_factor.
    """
    xs = (np.arange(cam.width) + 0.5 - cam.cx) / cam.fx
    ys = (np.arange(cam.height) + 0.5 - cam.cy) / cam.fy
    gx, gy = np.meshgrid(xs, ys)
    d = np.stack([gx, gy, np.ones_like(gx)], axis=-1).reshape(-1, 3)
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    d /= norms
    return d, d[:, 2].copy()


def render(
    scene: list[Primitive],
    camera_world: Pose3,
    cam: CameraModel,
    light_dir: np.ndarray = (-0.3, 0.2, -0.93),
) -> FrameBuffers:
    ids = [p.id for p in scene]
    if len(set(ids)) != len(ids):
        raise ValueError("scene primitive ids must be unique")
    light = np.asarray(light_dir, dtype=float)
    light = light / np.linalg.norm(light)

    d_cam, z_factor = pixel_ray_directions(cam)
    r_wc = camera_world.rotation_matrix()
    dirs = d_cam @ r_wc.T
    origin = camera_world.position

    n_rays = dirs.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_id = np.full(n_rays, -1, dtype=np.int32)
    best_shade = np.empty((n_rays, 3))
    best_shade[:] = BACKGROUND

    for prim in scene:
        t, n_w, hit = _intersect_rays(origin, dirs, prim)
        closer = hit & (t < best_t)
        if not np.any(closer):
            continue
        nn = np.linalg.norm(n_w[closer], axis=1, keepdims=True)
        nrm = n_w[closer] / np.where(nn > 0, nn, 1.0)
        diffuse = np.maximum(0.0, nrm @ (-light))
        best_shade[closer] = prim.color[None, :] * (AMBIENT + 0.7 * diffuse[:, None])
        best_t[closer] = t[closer]
        best_id[closer] = prim.id

    depth = best_t * z_factor
    miss = ~np.isfinite(depth) | (depth > FAR_CLIP)
    depth = np.where(miss, np.inf, depth)
    best_id = np.where(miss, np.int32(-1), best_id)
    best_shade[miss] = BACKGROUND

    rgb = np.rint(255.0 * np.clip(best_shade, 0.0, 1.0)).astype(np.uint8)
    return FrameBuffers(
        rgb=rgb.reshape(cam.height, cam.width, 3),
        depth=depth.reshape(cam.height, cam.width).astype(np.float32),
        object_id=best_id.reshape(cam.height, cam.width),
    )


# ---------------------------------------------------------------------------
# debug image dumps


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def write_pgm16(path, depth: np.ndarray) -> None:
    """Depth in meters scaled to millimeters; misses and overflow clamp to 65535."""
    mm = np.where(np.isfinite(depth), np.rint(np.asarray(depth) * 1000.0), 65535.0)
    mm = np.clip(mm, 0, 65535).astype(">u2")
    h, w = mm.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(mm.tobytes())


def dump_frame(directory, stem: str, buffers: FrameBuffers) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ppm = directory / f"{stem}.ppm"
    pgm = directory / f"{stem}.pgm"
    write_ppm(ppm, buffers.rgb)
    write_pgm16(pgm, buffers.depth)
    return ppm, pgm
