"""Self-contained verification suites: gradients, renderer, base sampler.

Each suite re-derives expected values through an independent route (finite
differences, signed-distance functions, closed-form circle constraints) so a
regression in the main implementation cannot hide in its own arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geom
from . import nn, renderer
from .seeding import stream


@dataclass
class VerifyResult:
    name: str
    passed: bool
    metric: float
    bound: float
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} (metric {self.metric:.3g}, bound {self.bound:.3g})"


# ---------------------------------------------------------------------------
# gradient checking


def _loss_for(params, images, proprio, targets, arch):
    out = nn.forward(params, images, proprio, arch)
    loss, _ = nn.mse_loss(out, targets)
    return loss


def gradcheck_full(
    tol: float = 1e-4, seed: int = 0, samples_per_block: int = 25, h: float = 1e-5
) -> VerifyResult:
    """Central finite differences against analytic gradients, float64."""
    arch = nn.GRADCHECK_ARCH
    rng = stream(seed, "gradcheck")
    params = nn.init_policy(arch, seed, dtype=np.float64)
    bsz = 3
    images = rng.uniform(0.0, 1.0, (bsz, arch.image_h, arch.image_w, arch.image_channels))
    proprio = rng.standard_normal((bsz, arch.proprio_dim))
    targets = rng.standard_normal((bsz, arch.action_dim))

    out, cache = nn.forward(params, images, proprio, arch, want_cache=True)
    _, dout = nn.mse_loss(out, targets)
    grads = nn.backward(params, cache, dout, arch)

    max_rel = 0.0
    worst = ""
    for name in nn.PARAM_ORDER:
        p = params[name]
        g = grads[name]
        k = min(samples_per_block, p.size)
        flat_idx = rng.choice(p.size, size=k, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, p.shape)
            orig = p[idx]
            p[idx] = orig + h
            lp = _loss_for(params, images, proprio, targets, arch)
            p[idx] = orig - h
            lm = _loss_for(params, images, proprio, targets, arch)
            p[idx] = orig
            fd = (lp - lm) / (2.0 * h)
            an = g[idx]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-10)
            if rel > max_rel:
                max_rel = rel
                worst = f"{name}{tuple(int(i) for i in idx)}"
    return VerifyResult(
        "gradcheck",
        max_rel < tol,
        max_rel,
        tol,
        f"max relative error {max_rel:.3g} at {worst or 'n/a'}",
    )


def ssam_invariants(seed: int = 0) -> VerifyResult:
    """Softmax weights sum to one; small temperature recovers the argmax."""
    rng = stream(seed, "ssam-verify")
    a = rng.standard_normal((4, 9, 13, 6)) * 3.0
    # separate the per-channel max so the small-temperature limit is unambiguous
    flat_view = a.reshape(a.shape[0], -1, a.shape[3])
    top = flat_view.argmax(axis=1)
    for b in range(a.shape[0]):
        for c in range(a.shape[3]):
            flat_view[b, top[b, c], c] += 0.5
    _, smax, _ = nn.spatial_soft_argmax(a, temperature=1.0)
    sum_err = float(np.abs(smax.sum(axis=1) - 1.0).max())

    coords, _, _ = nn.spatial_soft_argmax(a, temperature=1e-3)
    h, w = a.shape[1], a.shape[2]
    gx = np.linspace(-1.0, 1.0, w)
    gy = np.linspace(-1.0, 1.0, h)
    flat = a.reshape(a.shape[0], h * w, a.shape[3])
    arg = flat.argmax(axis=1)
    expect_x = gx[arg % w]
    expect_y = gy[arg // w]
    expected = np.stack([expect_x, expect_y], axis=-1).reshape(a.shape[0], -1)
    arg_err = float(np.abs(coords - expected).max())

    metric = max(sum_err / 1e-9, arg_err / 1e-3)
    return VerifyResult(
        "ssam-invariants",
        sum_err <= 1e-9 and arg_err <= 1e-3,
        metric,
        1.0,
        f"weight-sum error {sum_err:.3g} (bound 1e-9), argmax gap {arg_err:.3g} (bound 1e-3)",
    )


# ---------------------------------------------------------------------------
# renderer backprojection against signed-distance oracles


def _sdf_box(p: np.ndarray, half: np.ndarray) -> float:
    q = np.abs(p) - half
    outside = np.linalg.norm(np.maximum(q, 0.0))
    inside = min(q.max(), 0.0)
    return float(outside + inside)


def _sdf_cylinder(p: np.ndarray, radius: float, half_height: float) -> float:
    d = np.array([math.hypot(p[0], p[1]) - radius, abs(p[2]) - half_height])
    outside = np.linalg.norm(np.maximum(d, 0.0))
    inside = min(d.max(), 0.0)
    return float(outside + inside)


def _sdf_local(shape, p: np.ndarray) -> float:
    if isinstance(shape, renderer.Box):
        return _sdf_box(p, np.asarray(shape.half_extents))
    if isinstance(shape, renderer.Cylinder):
        return _sdf_cylinder(p, shape.radius, shape.half_height)
    if isinstance(shape, renderer.GroundPlane):
        return float(p[2])
    raise TypeError(f"unknown shape {type(shape)!r}")


def _random_pose3(rng: np.random.Generator, lo, hi) -> geom.Pose3:
    pos = rng.uniform(lo, hi)
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return geom.Pose3(position=pos, orientation=q)


def _random_scene(rng: np.random.Generator) -> list[renderer.Primitive]:
    prims = [
        renderer.Primitive(0, renderer.GroundPlane(), geom.identity_pose(), np.array([0.4, 0.4, 0.4]))
    ]
    n = int(rng.integers(3, 7))
    for i in range(n):
        pose = _random_pose3(rng, [0.2, -0.5, 0.05], [1.0, 0.5, 0.6])
        color = rng.uniform(0.1, 1.0, 3)
        if rng.uniform() < 0.5:
            shape = renderer.Box(tuple(rng.uniform(0.03, 0.25, 3)))
        else:
            shape = renderer.Cylinder(float(rng.uniform(0.02, 0.15)), float(rng.uniform(0.05, 0.3)))
        prims.append(renderer.Primitive(i + 1, shape, pose, color))
    return prims


def renderer_backprojection(
    n_scenes: int = 20, min_pixels: int = 10_000, tol: float = 1e-4, seed: int = 0
) -> VerifyResult:
    """Every hit pixel, pushed back out through its depth, must land on the
    reported primitive's surface (signed distance ~ 0)."""
    cam = geom.default_camera()
    max_err = 0.0
    n_checked = 0
    for s in range(n_scenes):
        rng = stream(seed, "render-verify", s)
        scene = _random_scene(rng)
        aim = np.mean([p.pose.position for p in scene[1:]], axis=0)
        sampler = geom.BaseSamplerConfig(
            center=aim,
            horizontal_distance=float(rng.uniform(0.7, 1.2)),
            phi_min=-math.pi,
            phi_max=math.pi,
        )
        base = geom.base_pose_for_phi(sampler, cam, float(rng.uniform(-math.pi, math.pi)))
        camera_world = geom.camera_pose_world(base, cam)
        fb = renderer.render(scene, camera_world, cam)
        by_id = {p.id: p for p in scene}
        hit_v, hit_u = np.nonzero(fb.object_id >= 0)
        for v, u in zip(hit_v, hit_u):
            depth = float(fb.depth[v, u])
            p_cam = geom.backproject(cam, u + 0.5, v + 0.5, depth)
            world = geom.apply(camera_world, p_cam)
            prim = by_id[int(fb.object_id[v, u])]
            local = geom.apply(geom.inverse(prim.pose), world)
            err = abs(_sdf_local(prim.shape, local))
            if err > max_err:
                max_err = err
            n_checked += 1
    passed = max_err <= tol and n_checked >= min_pixels
    return VerifyResult(
        "render-backprojection",
        passed,
        max_err,
        tol,
        f"max surface distance {max_err:.3g} m over {n_checked} pixels in {n_scenes} scenes",
    )


# ---------------------------------------------------------------------------
# base-pose sampler constraints


def sampler_constraints(n_poses: int = 1000, tol: float = 1e-9, seed: int = 0) -> VerifyResult:
    """Pre-noise poses: camera on the view circle, optical axis through center."""
    cam = geom.default_camera()
    rng = stream(seed, "sampler-verify")
    max_err = 0.0
    for _ in range(n_poses):
        center = rng.uniform([0.3, -0.3, 0.2], [1.0, 0.3, 0.6])
        dist = float(rng.uniform(0.4, 1.0))
        sampler = geom.BaseSamplerConfig(
            center=center, horizontal_distance=dist, phi_min=-math.pi, phi_max=math.pi
        )
        phi = float(rng.uniform(-math.pi, math.pi))
        pose = geom.base_pose_for_phi(sampler, cam, phi)
        camera_world = geom.camera_pose_world(pose, cam)
        cam_xy = camera_world.position[:2]
        dist_err = abs(np.linalg.norm(center[:2] - cam_xy) - dist)
        p_cam = geom.apply(geom.inverse(camera_world), center)
        u, _ = geom.project(cam, p_cam)
        axis_err = abs(u - cam.cx)
        heading_err = abs(
            (pose.phi - phi + math.pi) % (2.0 * math.pi) - math.pi
        )
        max_err = max(max_err, dist_err, axis_err, heading_err)
    return VerifyResult(
        "sampler-constraints",
        max_err <= tol,
        max_err,
        tol,
        f"max circle/axis error {max_err:.3g} over {n_poses} poses",
    )


def sampler_uniformity(n_samples: int = 100_000, bound: float = 0.01, seed: int = 0) -> VerifyResult:
    """KS statistic of the pre-noise heading against U(phi_min, phi_max)."""
    cam = geom.default_camera()
    sampler = geom.BaseSamplerConfig(
        center=np.array([0.67, 0.0, 0.30]), horizontal_distance=0.57, phi_min=-0.6, phi_max=0.2
    )
    rng = stream(seed, "sampler-ks")
    phis = np.empty(n_samples)
    for i in range(n_samples):
        _, phis[i] = geom.sample_base_pose_with_phi(sampler, cam, rng)
    u = np.sort((phis - sampler.phi_min) / (sampler.phi_max - sampler.phi_min))
    n = n_samples
    steps = np.arange(1, n + 1) / n
    ks = float(max((steps - u).max(), (u - (steps - 1.0 / n)).max()))
    return VerifyResult(
        "sampler-uniformity",
        ks < bound,
        ks,
        bound,
        f"KS statistic {ks:.4g} over {n_samples} headings",
    )


def run_all(fast: bool = False) -> list[VerifyResult]:
    n_scenes = 4 if fast else 20
    min_pixels = 2_000 if fast else 10_000
    n_ks = 20_000 if fast else 100_000
    return [
        gradcheck_full(),
        ssam_invariants(),
        renderer_backprojection(n_scenes=n_scenes, min_pixels=min_pixels),
        sampler_constraints(),
        sampler_uniformity(n_samples=n_ks),
    ]
