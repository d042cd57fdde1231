import numpy as np
import pytest

from mvbc import featviz, geometry as geom, nn, renderer, sim
from mvbc.seeding import stream

from conftest import TEST_ARCH, make_ensemble, make_norm_stats


def rec(channel, slot, label="door", point=(0.0, 0.0, 0.0), activation=1.0, ee=None):
    ep, t = divmod(slot, 5)
    return featviz.SSAMRecord(
        episode_index=ep,
        time_step=t,
        channel=channel,
        pixel=(10, 10),
        activation=activation,
        world_point=None if point is None else np.asarray(point, float),
        object_id=-1 if point is None else 2,
        label=label,
        ee_pose=ee if ee is not None else geom.identity_pose(),
        camera_world=geom.identity_pose(),
    )


def channel_records(channel, n_hit, of=5, label="door", activation=1.0):
    out = []
    for s in range(of):
        if s < n_hit:
            out.append(rec(channel, s, label=label, activation=activation))
        else:
            out.append(rec(channel, s, label="", point=None, activation=activation))
    return out


# ---------------------------------------------------------------------------
# receptive fields and pixel mapping


def test_receptive_field_centers():
    assert featviz.receptive_field_centers(nn.policy_arch(4)) == (2.0, 6.0)
    assert featviz.receptive_field_centers(TEST_ARCH) == (4.0, 8.0)


def test_coords_to_pixels_corners():
    arch = nn.policy_arch(4)
    coords = np.array([-1.0, -1.0, 1.0, 1.0, 0.0, 0.0])
    px = featviz.coords_to_pixels(coords, arch)
    assert px.shape == (3, 2)
    assert tuple(px[0]) == (6, 6)
    assert tuple(px[1]) == (56, 40)
    # center of an 18x26 map: j3 = 12.5 -> u = 31, i3 = 8.5 -> v = 23
    assert tuple(px[2]) == (31, 23)


# ---------------------------------------------------------------------------
# selection


def test_select_features_ranking_and_threshold():
    records = []
    records += channel_records(0, 5, label="door", activation=1.0)
    records += channel_records(1, 4, label="door", activation=2.0)
    records += channel_records(2, 3, label="door", activation=9.9)  # below min_hits
    records += channel_records(3, 5, label="gripper", activation=0.5)
    records += channel_records(4, 5, label="door", activation=2.0)  # ties channel 1
    records += channel_records(5, 5, label="door", activation=0.1)
    out = featviz.select_features(records, min_hits=4, of=5, top_k=2)
    door = [f for f in out if f.target == "door"]
    grip = [f for f in out if f.target == "gripper"]
    assert [f.channel for f in door] == [1, 4]
    assert [f.channel for f in grip] == [3]
    assert door[0].hits == 4 and door[0].mean_activation == 2.0
    assert len(door[0].records) == 4
    assert all(f.target == "door" for f in door)


def test_select_features_order_invariant():
    records = []
    records += channel_records(0, 5, activation=3.0)
    records += channel_records(1, 5, activation=1.0)
    out_a = featviz.select_features(records, min_hits=4, of=5, top_k=3)
    rng = stream(0, "shuffle-sel")
    shuffled = [records[i] for i in rng.permutation(len(records))]
    out_b = featviz.select_features(shuffled, min_hits=4, of=5, top_k=3)
    assert [f.channel for f in out_a] == [f.channel for f in out_b]
    assert [f.mean_activation for f in out_a] == [f.mean_activation for f in out_b]


def test_select_features_rejects_uneven_slots():
    records = channel_records(0, 5, of=5) + channel_records(1, 4, of=4)
    with pytest.raises(ValueError, match="expected 5"):
        featviz.select_features(records, min_hits=4, of=5)


def test_mean_activation_counts_misses():
    # activation averages over every slot, hit or not
    records = []
    for s in range(5):
        pt = (0.0, 0.0, 0.0) if s < 4 else None
        lab = "door" if s < 4 else ""
        records.append(rec(0, s, label=lab, point=pt, activation=float(s)))
    out = featviz.select_features(records, min_hits=4, of=5, top_k=1)
    assert out[0].mean_activation == 2.0


# ---------------------------------------------------------------------------
# spread geometry


def test_feature_points_gripper_frame():
    ee = geom.Pose3(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.0, 0.0, 0.0]))
    recs = [rec(0, s, label="gripper", point=(1.0 + s, 2.0, 3.0), ee=ee) for s in range(4)]
    feat = featviz.SelectedFeature(0, "gripper", 4, 1.0, recs)
    pts = featviz.feature_points(feat)
    assert np.allclose(pts, [[s, 0.0, 0.0] for s in range(4)], atol=1e-12)
    feat_door = featviz.SelectedFeature(0, "door", 4, 1.0, recs)
    assert np.allclose(featviz.feature_points(feat_door)[:, 0], [1.0, 2.0, 3.0, 4.0])


def test_feature_spread_hand_covariance():
    n = 25
    recs = [rec(0, s % 5, label="door", point=(0.1 * s, 0.0, 0.0)) for s in range(n)]
    feat = featviz.SelectedFeature(0, "door", n, 1.0, recs)
    (res,) = featviz.feature_spread([feat])
    var = 0.01 * 1300.0 / 24.0  # sum (i - 12)^2 over 0..24 is 1300
    assert abs(res.covariance[0, 0] - var) < 1e-12
    assert abs(res.trace - var) < 1e-12
    assert abs(res.semi_axes[-1] - 2.0 * np.sqrt(var)) < 1e-12
    assert res.sqrt_det == 0.0
    assert res.n_points == n
    assert featviz.mean_trace([res, res]) == pytest.approx(var)


def test_feature_spread_needs_four_points():
    recs = [rec(0, s, point=(float(s), 0, 0)) for s in range(3)]
    feat = featviz.SelectedFeature(0, "door", 3, 1.0, recs)
    with pytest.raises(featviz.FeatvizError, match="need >= 4"):
        featviz.feature_spread([feat])


# ---------------------------------------------------------------------------
# overlay and report


def visible_world_point(task="door"):
    cfg = sim.make_episode_config(task, "fixed")
    state, _ = sim.reset(cfg, stream(0, "featviz", "overlay"))
    cam = geom.default_camera()
    camera_world = geom.camera_pose_world(state.base, cam)
    fb = renderer.render(sim.build_scene(state), camera_world, cam)
    hits = np.argwhere(fb.object_id >= 1)
    iv, iu = hits[len(hits) // 2]
    p_cam = geom.backproject(cam, iu + 0.5, iv + 0.5, float(fb.depth[iv, iu]))
    return geom.apply(camera_world, p_cam), (iu, iv)


def test_draw_overlay_marks_exact_pixels():
    point, (iu, iv) = visible_world_point()
    recs = [rec(0, s, point=tuple(point)) for s in range(4)]
    feat = featviz.SelectedFeature(0, "door", 4, 1.0, recs)
    image, markers = featviz.draw_overlay([feat], "door")
    assert image.shape == (48, 64, 3) and image.dtype == np.uint8
    assert len(markers) == 4
    f_idx, p_idx, u, v = markers[0]
    assert (f_idx, p_idx) == (0, 0)
    assert abs(u - (iu + 0.5)) < 1e-9 and abs(v - (iv + 0.5)) < 1e-9
    assert int(round(u - 0.5)) == iu and int(round(v - 0.5)) == iv
    assert np.array_equal(image[iv, iu], featviz.MARKER_PALETTE[0])


def test_draw_overlay_skips_out_of_view():
    recs = [rec(0, s, point=(0.0, 0.0, 50.0)) for s in range(4)]
    feat = featviz.SelectedFeature(0, "door", 4, 1.0, recs)
    _, markers = featviz.draw_overlay([feat], "door")
    assert markers == []
    behind = [rec(0, s, point=(-5.0, 0.0, 0.2)) for s in range(4)]
    featb = featviz.SelectedFeature(0, "door", 4, 1.0, behind)
    _, markers_b = featviz.draw_overlay([featb], "door")
    assert markers_b == []


def test_write_ppm_format(tmp_path):
    img = np.zeros((2, 3, 3), np.uint8)
    img[0, 0] = (255, 0, 0)
    path = tmp_path / "img.ppm"
    featviz.write_ppm(path, img)
    raw = path.read_bytes()
    assert raw == b"P6\n3 2\n255\n" + img.tobytes()


def test_export_report_files_and_determinism(tmp_path):
    point, _ = visible_world_point()
    recs = [rec(0, s, point=tuple(point), activation=0.5) for s in range(5)]
    feat = featviz.SelectedFeature(0, "door", 5, 0.5, recs)
    spreads = featviz.feature_spread([feat])
    out_a = featviz.export_report([feat], spreads, tmp_path / "a")
    out_b = featviz.export_report([feat], spreads, tmp_path / "b")
    assert set(out_a) == {"points", "metrics", "overlay"}
    for key in out_a:
        assert out_a[key].exists()
        assert out_a[key].read_bytes() == out_b[key].read_bytes()
    points_lines = out_a["points"].read_text().strip().splitlines()
    assert points_lines[:3] == featviz.POINTS_HEADER
    assert points_lines[3].startswith("channel,target,")
    assert len(points_lines) == 4 + 5
    metrics_lines = out_a["metrics"].read_text().strip().splitlines()
    assert metrics_lines[:3] == featviz.METRICS_HEADER
    assert len(metrics_lines) == 4 + 1


def test_export_report_empty_selection(tmp_path):
    out = featviz.export_report([], [], tmp_path)
    assert out["points"].read_text().strip().splitlines()[:3] == featviz.POINTS_HEADER
    assert len(out["points"].read_text().strip().splitlines()) == 4
    assert len(out["metrics"].read_text().strip().splitlines()) == 4


# ---------------------------------------------------------------------------
# recording rollouts


def crossing_policy():
    """Zero-weight policy wired so the grip output turns positive as the
    end effector rises: grip = 50 * relu(ee_z - z0), lin z velocity constant."""
    cfg = sim.make_episode_config("lift", "fixed")
    _, obs = sim.reset(cfg, stream(0, "featviz", 0))
    z0 = float(obs.proprio_vector()[2]) + 0.06
    arch = TEST_ARCH
    params = nn.init_policy(arch, member_seed=0)
    for k in params:
        params[k] = np.zeros_like(params[k])
    params["fc1_w"][2 * arch.ssam_channels + 2, 0] = 1.0
    params["fc1_b"][0] = -z0
    params["fc2_w"][0, 0] = 1.0
    params["out_w"][0, 3] = 50.0
    params["out_b"][2] = 0.5
    return nn.PolicyEnsemble(arch, [params] * 5, make_norm_stats(), [0] * 5)


def test_record_ssam_windows_around_grip_crossing():
    policy = crossing_policy()
    records = featviz.record_ssam(policy, "lift", "fixed", n_episodes=1, n_steps=5, seed=0)
    assert len(records) == 5 * TEST_ARCH.ssam_channels
    steps = sorted({r.time_step for r in records})
    assert len(steps) == 5
    assert steps[0] >= 0 and steps == list(range(steps[0], steps[0] + 5))
    t0 = steps[0] + 1  # window starts one step before the crossing
    assert t0 >= 1
    for r in records:
        assert r.episode_index == 0
        assert 0 <= r.channel < TEST_ARCH.ssam_channels
        assert np.isfinite(r.activation)
        iu, iv = r.pixel
        assert 0 <= iu < 64 and 0 <= iv < 48
        if r.world_point is None:
            assert r.object_id == -1 and r.label == ""
        else:
            assert r.object_id >= 0


def test_record_ssam_deterministic():
    policy = crossing_policy()
    a = featviz.record_ssam(policy, "lift", "fixed", n_episodes=1, n_steps=5, seed=0)
    b = featviz.record_ssam(policy, "lift", "fixed", n_episodes=1, n_steps=5, seed=0)
    for ra, rb in zip(a, b):
        assert ra.pixel == rb.pixel and ra.activation == rb.activation
        assert ra.label == rb.label


def test_record_ssam_exhausts_attempts():
    # an all-zero policy never closes the gripper, so every attempt is discarded
    arch = TEST_ARCH
    params = nn.init_policy(arch, member_seed=0)
    for k in params:
        params[k] = np.zeros_like(params[k])
    policy = nn.PolicyEnsemble(arch, [params] * 5, make_norm_stats(), [0] * 5)
    with pytest.raises(featviz.FeatvizError, match="attempt"):
        featviz.record_ssam(policy, "lift", "fixed", n_episodes=1, n_steps=5, seed=0, max_attempts=2)
