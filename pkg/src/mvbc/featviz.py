"""Spatial-consistency analysis of the policy's soft-argmax features.

Around the first gripper closing of each rollout, member 0's spatial
soft-argmax outputs are converted back to pixels, backprojected to 3D through
the depth buffer, and associated with scene objects via the object-id buffer.
Channels that land on the same object in at least ``min_hits`` of the recorded
slots are ranked by activation, and the spread of their 3D point clouds is
summarized by sample covariances.

Frame choice: door-target points stay in the world frame (the door is
world-anchored around grasp time); gripper-target points are expressed in the
gripper frame at their own timestep, since the gripper moves between slots.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geom
from . import nn, renderer, sim
from . import dataset as ds_mod
from .seeding import stream

TARGET_IDS = {
    "lift": {"block": (sim.LIFT_BLOCK_ID,), "gripper": sim.GRIPPER_IDS["lift"]},
    "door": {"door": sim.DOOR_IDS, "gripper": sim.GRIPPER_IDS["door"]},
    "stack": {"block": (sim.STACK_BLUE_ID,), "gripper": sim.GRIPPER_IDS["stack"]},
}
DEFAULT_TARGETS = ("door", "gripper")

MARKER_PALETTE = np.array(
    [
        [255, 64, 64],
        [64, 160, 255],
        [255, 224, 64],
        [64, 255, 128],
        [224, 64, 255],
        [255, 144, 32],
    ],
    dtype=np.uint8,
)


@dataclass
class SSAMRecord:
    episode_index: int
    time_step: int
    channel: int
    pixel: tuple[int, int]
    activation: float
    world_point: np.ndarray | None
    object_id: int
    label: str
    ee_pose: geom.Pose3
    camera_world: geom.Pose3


@dataclass
class SelectedFeature:
    channel: int
    target: str
    hits: int
    mean_activation: float
    records: list[SSAMRecord]

    @property
    def points(self) -> np.ndarray:
        return np.array([r.world_point for r in self.records])


@dataclass
class SpreadResult:
    channel: int
    target: str
    n_points: int
    covariance: np.ndarray
    semi_axes: np.ndarray
    trace: float
    sqrt_det: float


class FeatvizError(RuntimeError):
    pass


def receptive_field_centers(arch: nn.ArchDescriptor) -> tuple[float, float]:
    """Image-pixel center of conv-stack output index i is jump * i + offset."""
    offset = 0.0
    jump = 1.0
    for k, s in zip(arch.conv_kernels, arch.conv_strides):
        offset += (k - 1) / 2.0 * jump
        jump *= s
    return jump, offset


def coords_to_pixels(coords: np.ndarray, arch: nn.ArchDescriptor) -> np.ndarray:
    """Map interleaved soft-argmax coordinates in [-1, 1] to integer pixels.

    Returns an (n_channels, 2) array of (u, v) pixel indices, using the
    receptive-field center of each feature-map cell and nearest rounding.
    """
    h3, w3 = arch.feature_map_sizes()[-1]
    jump, offset = receptive_field_centers(arch)
    xy = coords.reshape(-1, 2)
    j3 = (xy[:, 0] + 1.0) / 2.0 * (w3 - 1)
    i3 = (xy[:, 1] + 1.0) / 2.0 * (h3 - 1)
    u = np.rint(jump * j3 + offset).astype(int)
    v = np.rint(jump * i3 + offset).astype(int)
    return np.stack([u, v], axis=1)


def _label_for(object_id: int, id_map: dict[str, tuple]) -> str:
    for name, ids in id_map.items():
        if object_id in ids:
            return name
    return ""


def _rollout_with_features(
    policy: nn.PolicyEnsemble, cfg: sim.EpisodeConfig, rng: np.random.Generator
):
    """Run one greedy rollout, keeping per-step buffers and grip commands."""
    stats = policy.norm_stats
    state, _ = sim.reset(cfg, rng)
    camera_world = geom.camera_pose_world(state.base, cfg.camera)
    steps = []
    done = False
    while not done:
        fb = sim.observe_buffers(state, cfg.camera)
        obs = sim.observation_from_buffers(state, fb)
        img = ds_mod.normalize_image(obs.rgb, obs.depth, stats)[None]
        prop = ds_mod.normalize_proprio(obs.proprio_vector()[None, :], stats)
        out = nn.ensemble_forward(policy, img, prop)[0]
        action = ds_mod.denormalize_action(out, stats)
        steps.append(
            {
                "depth": fb.depth,
                "object_id": fb.object_id,
                "img": img,
                "prop": prop,
                "grip": float(action[-1]),
                "ee_pose": state.ee_pose_world.copy(),
            }
        )
        state, _, done = sim.step(state, sim.Action.from_vector(action, cfg.task), cfg)
    return steps, camera_world


def _first_grip_crossing(grips: list[float]) -> int | None:
    for t in range(1, len(grips)):
        if grips[t] > 0.0 and grips[t - 1] <= 0.0:
            return t
    return None


def record_ssam(
    policy: nn.PolicyEnsemble,
    task: str,
    view_mode: str,
    n_episodes: int = 5,
    n_steps: int = 5,
    seed: int = 0,
    max_attempts: int | None = None,
) -> list[SSAMRecord]:
    """Record member 0's soft-argmax points around each first gripper closing.

    Episodes where the grip command never crosses from <= 0 to > 0 early
    enough to leave a full window (one step before the crossing through
    ``n_steps - 2`` after) are re-drawn, up to ``max_attempts`` tries.
    """
    if task not in TARGET_IDS:
        raise ValueError(f"unknown task {task!r}")
    id_map = TARGET_IDS[task]
    cfg = sim.make_episode_config(task, view_mode)
    cam = cfg.camera
    arch = policy.arch
    member = policy.members[0]
    budget = max_attempts if max_attempts is not None else 10 * n_episodes
    records: list[SSAMRecord] = []
    collected = 0
    attempt = 0
    while collected < n_episodes:
        if attempt >= budget:
            raise FeatvizError(
                f"retry bound exhausted: {collected}/{n_episodes} episodes with a "
                f"usable gripper closing after {attempt} attempts"
            )
        rng = stream(seed, "featviz", attempt)
        attempt += 1
        steps, camera_world = _rollout_with_features(policy, cfg, rng)
        t0 = _first_grip_crossing([s["grip"] for s in steps])
        if t0 is None or t0 + n_steps - 2 > len(steps) - 1:
            continue
        cam_inv_rot = None
        for t in range(t0 - 1, t0 + n_steps - 1):
            step = steps[t]
            _, coords, mags = nn.forward_features(
                member, step["img"], step["prop"], arch
            )
            pixels = coords_to_pixels(coords[0], arch)
            for c in range(arch.ssam_channels):
                u, v = int(pixels[c, 0]), int(pixels[c, 1])
                depth = float(step["depth"][v, u])
                object_id = int(step["object_id"][v, u])
                if np.isfinite(depth) and object_id >= 0:
                    p_cam = geom.backproject(cam, u + 0.5, v + 0.5, depth)
                    world = geom.apply(camera_world, p_cam)
                    label = _label_for(object_id, id_map)
                else:
                    world = None
                    object_id = -1
                    label = ""
                records.append(
                    SSAMRecord(
                        episode_index=collected,
                        time_step=t,
                        channel=c,
                        pixel=(u, v),
                        activation=float(mags[0, c]),
                        world_point=world,
                        object_id=object_id,
                        label=label,
                        ee_pose=step["ee_pose"],
                        camera_world=camera_world,
                    )
                )
        collected += 1
    return records


def select_features(
    records: list[SSAMRecord],
    targets: tuple[str, ...] = DEFAULT_TARGETS,
    min_hits: int = 20,
    of: int = 25,
    top_k: int = 3,
) -> list[SelectedFeature]:
    """Pick the top channels per target by mean activation among consistent ones.

    A channel is eligible for a target when its point landed on that target in
    at least ``min_hits`` of the ``of`` recorded (episode, step) slots.
    Selection is invariant to record ordering; ties break on channel index.
    """
    ordered = sorted(records, key=lambda r: (r.episode_index, r.time_step, r.channel))
    by_channel: dict[int, list[SSAMRecord]] = {}
    for r in ordered:
        by_channel.setdefault(r.channel, []).append(r)
    for c, recs in by_channel.items():
        if len(recs) != of:
            raise ValueError(f"channel {c} has {len(recs)} records, expected {of}")
    selected = []
    for target in targets:
        eligible = []
        for c in sorted(by_channel):
            recs = by_channel[c]
            hit_recs = [r for r in recs if r.label == target and r.world_point is not None]
            if len(hit_recs) >= min_hits:
                mean_act = float(np.mean([r.activation for r in recs]))
                eligible.append(SelectedFeature(c, target, len(hit_recs), mean_act, hit_recs))
        eligible.sort(key=lambda f: (-f.mean_activation, f.channel))
        selected.extend(eligible[:top_k])
    return selected


def feature_points(feature: SelectedFeature) -> np.ndarray:
    """3D points of a feature in its analysis frame (world, or gripper-local)."""
    if feature.target == "gripper":
        return np.array(
            [geom.apply(geom.inverse(r.ee_pose), r.world_point) for r in feature.records]
        )
    return feature.points


def feature_spread(selected: list[SelectedFeature]) -> list[SpreadResult]:
    results = []
    for feat in selected:
        pts = feature_points(feat)
        if len(pts) < 4:
            raise FeatvizError(
                f"channel {feat.channel} ({feat.target}): {len(pts)} points, need >= 4"
            )
        cov = np.cov(pts, rowvar=False, ddof=1)
        eigvals = np.linalg.eigvalsh(cov)
        semi_axes = 2.0 * np.sqrt(np.clip(eigvals, 0.0, None))
        results.append(
            SpreadResult(
                channel=feat.channel,
                target=feat.target,
                n_points=len(pts),
                covariance=cov,
                semi_axes=semi_axes,
                trace=float(np.trace(cov)),
                sqrt_det=float(np.sqrt(max(np.linalg.det(cov), 0.0))),
            )
        )
    return results


def mean_trace(spreads: list[SpreadResult]) -> float:
    if not spreads:
        raise ValueError("no spread results")
    return float(np.mean([s.trace for s in spreads]))


def analyze_policy(
    policy: nn.PolicyEnsemble,
    task: str,
    view_mode: str,
    seed: int,
    n_episodes: int = 5,
    n_steps: int = 5,
) -> tuple[list[SelectedFeature], list[SpreadResult]]:
    records = record_ssam(policy, task, view_mode, n_episodes, n_steps, seed)
    targets = tuple(TARGET_IDS[task])
    selected = select_features(records, targets, of=n_episodes * n_steps)
    return selected, feature_spread(selected)


# ---------------------------------------------------------------------------
# report export


def _overlay_state(task: str) -> sim.WorldState:
    cfg = sim.make_episode_config(task, "fixed")
    state, _ = sim.reset(cfg, stream(0, "featviz", "overlay"))
    return state


def draw_overlay(
    selected: list[SelectedFeature], task: str, cam: geom.CameraModel | None = None
) -> tuple[np.ndarray, list[tuple[int, int, float, float]]]:
    """Render the canonical fixed view and mark every selected point on it.

    Returns the image and (feature_index, point_index, u, v) marker centers
    in continuous pixel coordinates for the points that fall inside the view.
    """
    cam = cam if cam is not None else geom.default_camera()
    state = _overlay_state(task)
    camera_world = geom.camera_pose_world(state.base, cam)
    fb = renderer.render(sim.build_scene(state), camera_world, cam)
    image = fb.rgb.copy()
    cam_from_world = geom.inverse(camera_world)
    markers = []
    for f_idx, feat in enumerate(selected):
        color = MARKER_PALETTE[f_idx % len(MARKER_PALETTE)]
        for p_idx, point in enumerate(feat.points):
            p_cam = geom.apply(cam_from_world, point)
            if p_cam[2] <= 1e-6:
                continue
            u, v = geom.project(cam, p_cam)
            iu, iv = int(round(u - 0.5)), int(round(v - 0.5))
            if not (0 <= iu < cam.width and 0 <= iv < cam.height):
                continue
            markers.append((f_idx, p_idx, u, v))
            image[max(iv - 1, 0) : iv + 2, max(iu - 1, 0) : iu + 2] = color
    return image, markers


def write_ppm(path: Path, image: np.ndarray) -> None:
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


POINTS_HEADER = [
    "# per-point records of selected soft-argmax features",
    "# columns: channel, target, episode_index, time_step, u, v, x, y, z, activation",
    "# (x, y, z) is the backprojected point in the world frame",
]
METRICS_HEADER = [
    "# per-feature spread metrics; gripper-target covariance is computed in the",
    "# gripper frame at each point's own timestep, door/block targets in world",
    "# columns: channel, target, n_points, trace, sqrt_det, axis_a, axis_b, axis_c",
]


def export_report(
    selected: list[SelectedFeature],
    spreads: list[SpreadResult],
    out_dir: Path,
    task: str = "door",
) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points_path = out_dir / "feature_points.csv"
    lines = list(POINTS_HEADER)
    lines.append("channel,target,episode_index,time_step,u,v,x,y,z,activation")
    for feat in selected:
        for r in feat.records:
            x, y, z = r.world_point
            lines.append(
                f"{feat.channel},{feat.target},{r.episode_index},{r.time_step},"
                f"{r.pixel[0]},{r.pixel[1]},{x:.9g},{y:.9g},{z:.9g},{r.activation:.9g}"
            )
    points_path.write_text("\n".join(lines) + "\n")

    metrics_path = out_dir / "feature_metrics.csv"
    lines = list(METRICS_HEADER)
    lines.append("channel,target,n_points,trace,sqrt_det,axis_a,axis_b,axis_c")
    for s in spreads:
        a, b, c = s.semi_axes
        lines.append(
            f"{s.channel},{s.target},{s.n_points},{s.trace:.9g},{s.sqrt_det:.9g},"
            f"{a:.9g},{b:.9g},{c:.9g}"
        )
    metrics_path.write_text("\n".join(lines) + "\n")

    overlay_path = out_dir / "overlay.ppm"
    image, _ = draw_overlay(selected, task)
    write_ppm(overlay_path, image)
    return {"points": points_path, "metrics": metrics_path, "overlay": overlay_path}
