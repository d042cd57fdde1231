"""Kinematic multiview manipulation environments: Lift, Door, and Stack.

The arm is abstracted as a free-flying gripper confined to a base-frame
workspace box; grasping snaps objects to the gripper within a small radius.
The mobile base (and with it the camera) is randomized between episodes in
multiview mode and pinned to the canonical view-circle pose in fixed mode.
All randomness flows through an explicit generator, so (seed, actions)
fully determines every state and observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geom
from . import renderer as rend
from .geometry import BaseSamplerConfig, CameraModel, Pose2, Pose3

DT = 0.1
LIN_CLAMP = 0.25
ANG_CLAMP = 1.0
FINGER_SPEED = 0.4
FINGER_MAX = 0.08
GRASP_RADIUS = 0.025
PROPRIO_DIM = 13

WORKSPACE_LO = np.array([0.25, -0.40, 0.0])
WORKSPACE_HI = np.array([0.85, 0.40, 0.60])

TABLE_TOP = 0.30
BLOCK_HALF = 0.025

# Training-range heading interval; its 0.8 rad width matches the 45-degree
# between-episode base randomization used for data collection.
PHI_TRAIN_RANGE = (-0.6, 0.2)

HORIZONS = {"lift": 80, "door": 120, "stack": 140}
ACTION_DIMS = {"lift": 4, "door": 7, "stack": 7}

# Door geometry: vertical hinge; the panel swings toward the robot as the
# angle grows.  Free-edge direction at angle a is (-sin a, -cos a).
DOOR_HINGE = np.array([0.78, 0.15])
DOOR_WIDTH = 0.30
DOOR_PANEL_HALF = (0.01, 0.15, 0.25)
DOOR_Z_CENTER = 0.45
DOOR_MAX_ANGLE = 2.0
HANDLE_RADIUS = 0.01
HANDLE_HALF_HEIGHT = 0.04

VIEW_CENTERS = {
    "lift": np.array([0.67, 0.0, TABLE_TOP]),
    "stack": np.array([0.67, 0.0, TABLE_TOP]),
    "door": np.array([0.78, 0.0, DOOR_Z_CENTER]),
}
VIEW_DISTANCES = {"lift": 0.57, "stack": 0.57, "door": 0.55}

LIFT_BLOCK_CENTER = np.array([0.67, 0.0])
LIFT_BLOCK_HALF_RANGE = 0.125  # 25 cm box
STACK_BLOCK_HALF_RANGE = 0.075  # 15 cm box
STACK_MIN_SEPARATION = 0.08
LIFT_EE_START = np.array([0.45, 0.0, 0.50])
STACK_EE_START = np.array([0.45, 0.0, 0.50])
DOOR_EE_CENTER = np.array([0.52, 0.0, 0.48])
DOOR_EE_HALF = np.array([0.06, 0.025, 0.025])  # 12cm x 5cm x 5cm box

# Scene object ids (stable per task; consumed by the feature analysis).
GRIPPER_IDS = {"lift": (3, 4, 5), "stack": (4, 5, 6), "door": (4, 5, 6)}
DOOR_IDS = (2, 3)  # panel, handle
LIFT_BLOCK_ID = 2
STACK_BLUE_ID = 2
STACK_GREEN_ID = 3


class SimError(RuntimeError):
    pass


class ResetError(SimError):
    pass


@dataclass
class Action:
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray
    grip: float

    def __post_init__(self):
        self.linear_velocity = np.asarray(self.linear_velocity, dtype=float).reshape(3)
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float).reshape(3)
        self.grip = float(self.grip)

    def clamped(self, task: str) -> "Action":
        lin = np.clip(self.linear_velocity, -LIN_CLAMP, LIN_CLAMP)
        ang = np.clip(self.angular_velocity, -ANG_CLAMP, ANG_CLAMP)
        if task == "lift":
            ang = np.zeros(3)
        return Action(lin, ang, min(1.0, max(-1.0, self.grip)))

    def to_vector(self, task: str) -> np.ndarray:
        if task == "lift":
            return np.concatenate([self.linear_velocity, [self.grip]])
        return np.concatenate([self.linear_velocity, self.angular_velocity, [self.grip]])

    @staticmethod
    def from_vector(vec: np.ndarray, task: str) -> "Action":
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.shape[0] != ACTION_DIMS[task]:
            raise ValueError(f"action dim {vec.shape[0]} != {ACTION_DIMS[task]} for {task}")
        if task == "lift":
            return Action(vec[:3], np.zeros(3), vec[3])
        return Action(vec[:3], vec[3:6], vec[6])


@dataclass
class Observation:
    rgb: np.ndarray  # (48, 64, 3) uint8
    depth: np.ndarray  # (48, 64) float32, +inf on miss
    ee_pose_base: np.ndarray  # (7,) position + wxyz quaternion
    finger_positions: np.ndarray  # (3, 2) current and previous two, both fingers

    def proprio_vector(self) -> np.ndarray:
        return np.concatenate([self.ee_pose_base, self.finger_positions.ravel()])


@dataclass
class WorldState:
    task: str
    base: Pose2
    prenoise_phi: float
    ee_pose_world: Pose3
    finger_opening: float
    finger_history: tuple[float, float, float]  # (current, prev, prev2)
    objects: dict
    grasped_object: int | None = None
    grasp_offset: Pose3 | None = None
    door_grab_z: float | None = None
    time_step: int = 0
    done: bool = False


@dataclass
class EpisodeConfig:
    task: str
    view_mode: str  # "multi" | "fixed"
    horizon: int
    sampler: BaseSamplerConfig
    camera: CameraModel = field(default_factory=geom.default_camera)
    seed: int | None = None

    def __post_init__(self):
        if self.task not in HORIZONS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.view_mode not in ("multi", "fixed"):
            raise ValueError(f"view_mode must be 'multi' or 'fixed', got {self.view_mode!r}")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


def make_sampler(task: str, phi_range: tuple[float, float] | None = None) -> BaseSamplerConfig:
    lo, hi = phi_range if phi_range is not None else PHI_TRAIN_RANGE
    return BaseSamplerConfig(
        center=VIEW_CENTERS[task],
        horizontal_distance=VIEW_DISTANCES[task],
        phi_min=lo,
        phi_max=hi,
    )


def make_episode_config(
    task: str,
    view_mode: str,
    phi_range: tuple[float, float] | None = None,
    horizon: int | None = None,
) -> EpisodeConfig:
    return EpisodeConfig(
        task=task,
        view_mode=view_mode,
        horizon=horizon if horizon is not None else HORIZONS[task],
        sampler=make_sampler(task, phi_range),
    )


# ---------------------------------------------------------------------------
# derived door geometry


def door_edge_direction(angle: float) -> np.ndarray:
    return np.array([-math.sin(angle), -math.cos(angle)])


def door_handle_position(angle: float) -> np.ndarray:
    xy = DOOR_HINGE + DOOR_WIDTH * door_edge_direction(angle)
    return np.array([xy[0], xy[1], DOOR_Z_CENTER])


def door_panel_pose(angle: float) -> Pose3:
    xy = DOOR_HINGE + 0.5 * DOOR_WIDTH * door_edge_direction(angle)
    return Pose3(np.array([xy[0], xy[1], DOOR_Z_CENTER]), geom.quat_from_yaw(-angle))


def _door_angle_of_point(xy: np.ndarray) -> float:
    w = xy - DOOR_HINGE
    return math.atan2(-w[0], -w[1])


# ---------------------------------------------------------------------------
# scene construction


def build_scene(state: WorldState) -> list[rend.Primitive]:
    prims = [rend.Primitive(0, rend.GroundPlane(), Pose3(), np.array([0.35, 0.45, 0.35]))]
    if state.task in ("lift", "stack"):
        prims.append(
            rend.Primitive(
                1,
                rend.Box((0.30, 0.40, TABLE_TOP / 2)),
                Pose3(np.array([0.67, 0.0, TABLE_TOP / 2])),
                np.array([0.55, 0.40, 0.25]),
            )
        )
    if state.task == "lift":
        prims.append(
            rend.Primitive(
                2, rend.Box((BLOCK_HALF,) * 3), state.objects["block"], np.array([0.85, 0.15, 0.10])
            )
        )
    elif state.task == "stack":
        prims.append(
            rend.Primitive(
                2, rend.Box((BLOCK_HALF,) * 3), state.objects["blue"], np.array([0.15, 0.25, 0.90])
            )
        )
        prims.append(
            rend.Primitive(
                3, rend.Box((BLOCK_HALF,) * 3), state.objects["green"], np.array([0.10, 0.70, 0.20])
            )
        )
    elif state.task == "door":
        angle = state.objects["door_angle"]
        prims.append(
            rend.Primitive(
                1,
                rend.Box((0.15, 0.25, 0.25)),
                Pose3(np.array([0.95, 0.0, DOOR_Z_CENTER])),
                np.array([0.45, 0.45, 0.50]),
            )
        )
        prims.append(
            rend.Primitive(
                2, rend.Box(DOOR_PANEL_HALF), door_panel_pose(angle), np.array([0.20, 0.45, 0.85])
            )
        )
        prims.append(
            rend.Primitive(
                3,
                rend.Cylinder(HANDLE_RADIUS, HANDLE_HALF_HEIGHT),
                Pose3(door_handle_position(angle)),
                np.array([0.95, 0.10, 0.10]),
            )
        )
    palm_id, fl_id, fr_id = GRIPPER_IDS[state.task]
    ee = state.ee_pose_world
    gap = state.finger_opening
    palm = geom.compose(ee, Pose3(np.array([0.0, 0.0, 0.085])))
    fl = geom.compose(ee, Pose3(np.array([0.0, gap / 2 + 0.005, 0.035])))
    fr = geom.compose(ee, Pose3(np.array([0.0, -(gap / 2 + 0.005), 0.035])))
    prims.append(rend.Primitive(palm_id, rend.Box((0.02, 0.055, 0.015)), palm, np.array([0.95, 0.80, 0.15])))
    finger_color = np.array([0.25, 0.25, 0.30])
    prims.append(rend.Primitive(fl_id, rend.Box((0.01, 0.005, 0.035)), fl, finger_color))
    prims.append(rend.Primitive(fr_id, rend.Box((0.01, 0.005, 0.035)), fr, finger_color))
    return prims


# ---------------------------------------------------------------------------
# observation generator


def observe_buffers(state: WorldState, cam: CameraModel) -> rend.FrameBuffers:
    camera_world = geom.camera_pose_world(state.base, cam)
    return rend.render(build_scene(state), camera_world, cam)


def observation_from_buffers(state: WorldState, fb: rend.FrameBuffers) -> Observation:
    base3 = geom.pose2_to_pose3(state.base)
    ee_base = geom.compose(geom.inverse(base3), state.ee_pose_world)
    fingers = np.array([[h / 2.0, h / 2.0] for h in state.finger_history], dtype=float)
    return Observation(
        rgb=fb.rgb,
        depth=fb.depth,
        ee_pose_base=ee_base.as_seven_tuple(),
        finger_positions=fingers,
    )


def observe(state: WorldState, cam: CameraModel) -> Observation:
    return observation_from_buffers(state, observe_buffers(state, cam))


# ---------------------------------------------------------------------------
# success predicates


def success(state: WorldState, task: str | None = None) -> bool:
    task = task or state.task
    if task == "lift":
        block_bottom = state.objects["block"].position[2] - BLOCK_HALF
        return bool(block_bottom - TABLE_TOP > 0.075)
    if task == "door":
        return bool(state.objects["door_angle"] > math.pi / 2)
    if task == "stack":
        blue = state.objects["blue"].position
        green = state.objects["green"].position
        if state.grasped_object == 2:
            return False
        planar = math.hypot(blue[0] - green[0], blue[1] - green[1])
        resting = abs(blue[2] - (green[2] + 2 * BLOCK_HALF)) <= 1e-3
        return bool(planar <= 0.02 and resting)
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# reset


def _workspace_contains(base: Pose2, p_world: np.ndarray, margin: float = 0.0) -> bool:
    base3 = geom.pose2_to_pose3(base)
    p_base = geom.apply(geom.inverse(base3), p_world)
    return bool(np.all(p_base >= WORKSPACE_LO + margin) and np.all(p_base <= WORKSPACE_HI - margin))


def _clamp_to_workspace(base: Pose2, p_world: np.ndarray) -> np.ndarray:
    base3 = geom.pose2_to_pose3(base)
    p_base = geom.apply(geom.inverse(base3), p_world)
    p_base = np.clip(p_base, WORKSPACE_LO, WORKSPACE_HI)
    return geom.apply(base3, p_base)


def canonical_base_pose(cfg: EpisodeConfig) -> Pose2:
    return geom.base_pose_for_phi(cfg.sampler, cfg.camera, 0.0)


def reset(cfg: EpisodeConfig, rng: np.random.Generator) -> tuple[WorldState, Observation]:
    for _ in range(100):
        if cfg.view_mode == "multi":
            base, prenoise_phi = geom.sample_base_pose_with_phi(cfg.sampler, cfg.camera, rng)
        else:
            base, prenoise_phi = canonical_base_pose(cfg), 0.0
        camera_world = geom.camera_pose_world(base, cfg.camera)
        base3 = geom.pose2_to_pose3(base)

        def in_view(p_world):
            return geom.in_frustum(cfg.camera, camera_world, p_world)

        objects: dict = {}
        if cfg.task == "lift":
            xy = LIFT_BLOCK_CENTER + rng.uniform(
                -LIFT_BLOCK_HALF_RANGE, LIFT_BLOCK_HALF_RANGE, size=2
            )
            block = np.array([xy[0], xy[1], TABLE_TOP + BLOCK_HALF])
            ee_world = geom.apply(base3, LIFT_EE_START)
            if not (_workspace_contains(base, block) and in_view(block)):
                continue
            objects["block"] = Pose3(block)
        elif cfg.task == "stack":
            bxy = LIFT_BLOCK_CENTER + rng.uniform(
                -STACK_BLOCK_HALF_RANGE, STACK_BLOCK_HALF_RANGE, size=2
            )
            gxy = LIFT_BLOCK_CENTER + rng.uniform(
                -STACK_BLOCK_HALF_RANGE, STACK_BLOCK_HALF_RANGE, size=2
            )
            blue = np.array([bxy[0], bxy[1], TABLE_TOP + BLOCK_HALF])
            green = np.array([gxy[0], gxy[1], TABLE_TOP + BLOCK_HALF])
            ee_world = geom.apply(base3, STACK_EE_START)
            ok = (
                np.linalg.norm(bxy - gxy) >= STACK_MIN_SEPARATION
                and _workspace_contains(base, blue)
                and _workspace_contains(base, green)
                and in_view(blue)
                and in_view(green)
            )
            if not ok:
                continue
            objects["blue"] = Pose3(blue)
            objects["green"] = Pose3(green)
        elif cfg.task == "door":
            ee_base = DOOR_EE_CENTER + rng.uniform(-1.0, 1.0, size=3) * DOOR_EE_HALF
            ee_world = geom.apply(base3, ee_base)
            handle = door_handle_position(0.0)
            if not (_workspace_contains(base, ee_world) and in_view(ee_world) and in_view(handle)):
                continue
            objects["door_angle"] = 0.0
        else:
            raise ValueError(f"unknown task {cfg.task!r}")

        state = WorldState(
            task=cfg.task,
            base=base,
            prenoise_phi=prenoise_phi,
            ee_pose_world=Pose3(ee_world),
            finger_opening=FINGER_MAX,
            finger_history=(FINGER_MAX, FINGER_MAX, FINGER_MAX),
            objects=objects,
        )
        return state, observe(state, cfg.camera)
    raise ResetError(f"could not sample a valid initial state for {cfg.task} in 100 tries")


# ---------------------------------------------------------------------------
# transition


def _graspable_features(state: WorldState) -> list[tuple[int, np.ndarray]]:
    if state.task == "lift":
        return [(2, state.objects["block"].position)]
    if state.task == "stack":
        return [(2, state.objects["blue"].position), (3, state.objects["green"].position)]
    if state.task == "door":
        handle = door_handle_position(state.objects["door_angle"])
        # Nearest point on the handle axis segment to the gripper center.
        z = min(max(state.ee_pose_world.position[2], handle[2] - HANDLE_HALF_HEIGHT), handle[2] + HANDLE_HALF_HEIGHT)
        return [(3, np.array([handle[0], handle[1], z]))]
    return []


def _settle_block(state: WorldState, name: str) -> None:
    """Instant kinematic drop of a released block onto its highest support."""
    pose = state.objects[name]
    x, y = pose.position[0], pose.position[1]
    support = 0.0
    if 0.37 - 1e-9 <= x <= 0.97 + 1e-9 and -0.40 <= y <= 0.40:
        support = TABLE_TOP
    if state.task == "stack":
        other = state.objects["blue" if name == "green" else "green"]
        dx, dy = abs(x - other.position[0]), abs(y - other.position[1])
        other_top = other.position[2] + BLOCK_HALF
        if max(dx, dy) < 2 * BLOCK_HALF and other_top > support and other_top <= pose.position[2] + BLOCK_HALF + 1e-6:
            support = other_top
    state.objects[name] = Pose3(
        np.array([x, y, support + BLOCK_HALF]), pose.orientation.copy()
    )


def step(
    state: WorldState, action: Action, cfg: EpisodeConfig
) -> tuple[WorldState, Observation, bool]:
    if state.done:
        raise SimError("cannot step a finished episode")
    act = action.clamped(cfg.task)
    base3 = geom.pose2_to_pose3(state.base)
    r_base = base3.rotation_matrix()

    new_state = replace(
        state,
        ee_pose_world=state.ee_pose_world.copy(),
        objects={
            k: (v.copy() if isinstance(v, Pose3) else v) for k, v in state.objects.items()
        },
    )

    # Integrate the end-effector in the world frame; commands are base-frame.
    lin_world = r_base @ act.linear_velocity
    ang_world = r_base @ act.angular_velocity
    pos = new_state.ee_pose_world.position + DT * lin_world
    pos = _clamp_to_workspace(state.base, pos)
    quat = new_state.ee_pose_world.orientation
    ang_norm = np.linalg.norm(ang_world)
    if ang_norm > 1e-12:
        dq = geom.quat_from_axis_angle(ang_world / ang_norm, ang_norm * DT)
        quat = geom.quat_multiply(dq, quat)
    new_state.ee_pose_world = Pose3(pos, quat)

    # Fingers move toward the commanded opening at a fixed speed.
    target = 0.0 if act.grip > 0.0 else FINGER_MAX
    delta = np.clip(target - state.finger_opening, -FINGER_SPEED * DT, FINGER_SPEED * DT)
    opening = float(state.finger_opening + delta)
    new_state.finger_opening = opening
    new_state.finger_history = (opening, state.finger_history[0], state.finger_history[1])

    # Grasp logic.
    if act.grip > 0.0:
        if new_state.grasped_object is None:
            ee_pos = new_state.ee_pose_world.position
            for oid, feature in _graspable_features(new_state):
                if np.linalg.norm(ee_pos - feature) <= GRASP_RADIUS:
                    new_state.grasped_object = oid
                    if cfg.task == "door":
                        new_state.door_grab_z = float(ee_pos[2])
                        handle = door_handle_position(new_state.objects["door_angle"])
                        new_state.ee_pose_world = Pose3(
                            np.array([handle[0], handle[1], new_state.door_grab_z]),
                            new_state.ee_pose_world.orientation,
                        )
                    else:
                        obj_name = {2: "block" if cfg.task == "lift" else "blue", 3: "green"}[oid]
                        new_state.grasp_offset = geom.compose(
                            geom.inverse(new_state.ee_pose_world), new_state.objects[obj_name]
                        )
                    break
    else:
        if new_state.grasped_object is not None:
            released = new_state.grasped_object
            new_state.grasped_object = None
            new_state.grasp_offset = None
            new_state.door_grab_z = None
            if cfg.task in ("lift", "stack"):
                name = {2: "block" if cfg.task == "lift" else "blue", 3: "green"}[released]
                _settle_block(new_state, name)

    # Constrained/attached object updates.
    if new_state.grasped_object is not None:
        if cfg.task == "door":
            angle = new_state.objects["door_angle"]
            proj = _door_angle_of_point(new_state.ee_pose_world.position[:2])
            new_angle = min(DOOR_MAX_ANGLE, max(angle, proj))
            new_state.objects["door_angle"] = new_angle
            handle = door_handle_position(new_angle)
            new_state.ee_pose_world = Pose3(
                np.array([handle[0], handle[1], new_state.door_grab_z]),
                new_state.ee_pose_world.orientation,
            )
        else:
            name = {2: "block" if cfg.task == "lift" else "blue", 3: "green"}[
                new_state.grasped_object
            ]
            new_state.objects[name] = geom.compose(new_state.ee_pose_world, new_state.grasp_offset)

    new_state.time_step = state.time_step + 1
    new_state.done = bool(success(new_state) or new_state.time_step >= cfg.horizon)
    return new_state, observe(new_state, cfg.camera), new_state.done
