import base64
import json
import socket
import threading

import numpy as np
import pytest
from websockets.sync.client import connect

from mvbc import dataset, expert, service, sim
from mvbc.seeding import derive_seed, stream


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def start_server(tmp_path, task="lift", view_mode="fixed", seed=5, hz=20.0):
    out = tmp_path / "teleop_data"
    srv = service.TeleopServer(task, view_mode, out, seed=seed, hz=hz)
    port = free_port()
    thread = threading.Thread(target=srv.run, args=(port,), daemon=True)
    thread.start()
    assert srv._ready.wait(5.0)
    return srv, port, out, thread


def stop_server(srv, thread):
    srv._server.shutdown()
    thread.join(timeout=5.0)
    assert not thread.is_alive()


@pytest.fixture()
def lift_server(tmp_path):
    srv, port, out, thread = start_server(tmp_path)
    yield srv, port, out
    stop_server(srv, thread)


def send(conn, obj):
    conn.send(json.dumps(obj))


def recv(conn, timeout=10.0):
    return json.loads(conn.recv(timeout=timeout))


def decode_rgb(frame):
    return np.frombuffer(base64.b64decode(frame["rgb"]), np.uint8).reshape(48, 64, 3)


def test_info_message(lift_server):
    _, port, _ = lift_server
    with connect(f"ws://127.0.0.1:{port}") as conn:
        info = recv(conn)
    assert info == {
        "type": "info",
        "task": "lift",
        "action_dim": 4,
        "horizon": sim.HORIZONS["lift"],
    }


def test_loopback_episode_matches_mirror_and_replays(lift_server):
    # drive the served episode with expert actions computed on a lockstep
    # mirror simulation; every streamed frame must match the mirror exactly
    srv, port, out = lift_server
    cfg = sim.make_episode_config("lift", "fixed")
    mirror_state, mirror_obs = sim.reset(cfg, stream(5, "teleop", 0))
    mem = expert.initial_memory("lift")
    clamps = expert.clamp_vector("lift")
    n_frames = 0
    with connect(f"ws://127.0.0.1:{port}") as conn:
        recv(conn)  # info
        send(conn, {"type": "start"})
        while True:
            frame = recv(conn)
            assert frame["type"] == "frame"
            assert frame["time_step"] == n_frames
            assert np.array_equal(decode_rgb(frame), mirror_obs.rgb)
            assert frame["ee_pose"] == [float(x) for x in mirror_obs.ee_pose_base]
            if frame["done"]:
                assert frame["success"] is True
                break
            act = expert.expert_action(mirror_state, "lift", mem)
            vec = np.clip(act.to_vector("lift"), -clamps, clamps).astype(np.float32)
            send(
                conn,
                {
                    "type": "cmd",
                    "lin": [float(x) for x in vec[:3]],
                    "ang": [0.0, 0.0, 0.0],
                    "grip": float(vec[3]),
                },
            )
            mirror_state, mirror_obs, _ = sim.step(
                mirror_state, sim.Action.from_vector(vec.astype(float), "lift"), cfg
            )
            n_frames += 1
        send(conn, {"type": "stop", "save": True})
        saved = recv(conn)
    assert saved == {"type": "saved", "episode_file": "episode_0000.mvbc"}

    ds = dataset.load(out)
    assert ds.task == "lift" and ds.view_mode == "fixed"
    ep = ds.episodes[0]
    assert ep.success and ep.length == n_frames
    assert ep.seed == derive_seed(5, "teleop", 0) and ep.attempt == 0

    state, obs = sim.reset(cfg, stream(5, "teleop", 0))
    for t in range(ep.length):
        assert np.array_equal(obs.rgb, ep.rgb[t])
        assert np.array_equal(obs.proprio_vector().astype(np.float32), ep.proprio[t])
        state, obs, _ = sim.step(
            state, sim.Action.from_vector(ep.actions[t].astype(float), "lift"), cfg
        )
    assert sim.success(state)


def test_actions_clipped_and_zero_before_first_cmd(lift_server):
    _, port, out = lift_server
    with connect(f"ws://127.0.0.1:{port}") as conn:
        recv(conn)
        send(conn, {"type": "start"})
        frame0 = recv(conn)
        frame1 = recv(conn)  # no cmd sent: zero action holds the pose
        assert frame1["time_step"] == 1
        assert frame1["ee_pose"] == frame0["ee_pose"]
        send(conn, {"type": "cmd", "lin": [9.0, -9.0, 0.0], "ang": [0, 0, 0], "grip": 5.0})
        recv(conn)
        send(conn, {"type": "stop", "save": True})
        recv(conn)
    ep = dataset.load(out).episodes[0]
    assert np.array_equal(ep.actions[0], np.zeros(4, np.float32))
    clamps = expert.clamp_vector("lift")
    assert np.all(np.abs(ep.actions) <= clamps[None, :])
    assert ep.actions[-1, 0] == np.float32(clamps[0])
    assert ep.actions[-1, 3] == np.float32(clamps[3])


def test_protocol_errors(lift_server):
    _, port, _ = lift_server
    with connect(f"ws://127.0.0.1:{port}") as conn:
        recv(conn)
        send(conn, {"type": "cmd", "lin": [0, 0, 0], "ang": [0, 0, 0], "grip": 0})
        assert recv(conn)["msg"] == "no active episode"
        send(conn, {"type": "stop"})
        assert recv(conn)["msg"] == "no active episode"
        conn.send("not json")
        assert recv(conn)["msg"] == "malformed message"
        send(conn, {"type": "bogus"})
        assert "unknown message type" in recv(conn)["msg"]
        send(conn, {"type": "start"})
        frame = recv(conn)
        assert frame["type"] == "frame"
        send(conn, {"type": "start"})
        msgs = [recv(conn) for _ in range(2)]
        errors = [m for m in msgs if m["type"] == "error"]
        assert errors and errors[0]["msg"] == "episode already active"
        send(conn, {"type": "cmd", "lin": [0.0, 0.0], "ang": [0, 0, 0], "grip": 0})
        msgs = [recv(conn) for _ in range(2)]
        errors = [m for m in msgs if m["type"] == "error"]
        assert errors and errors[0]["msg"].startswith("bad cmd")
        send(conn, {"type": "stop", "save": False})


def test_stop_without_save_discards(lift_server):
    _, port, out = lift_server
    with connect(f"ws://127.0.0.1:{port}") as conn:
        recv(conn)
        send(conn, {"type": "start"})
        recv(conn)
        send(conn, {"type": "stop", "save": False})
        send(conn, {"type": "start"})
        frame = recv(conn)
        assert frame["type"] == "frame" and frame["time_step"] == 0
        send(conn, {"type": "stop", "save": False})
    assert not (out / "manifest.json").exists()


def test_disconnect_discards_episode(lift_server):
    _, port, out = lift_server
    conn = connect(f"ws://127.0.0.1:{port}")
    recv(conn)
    send(conn, {"type": "start"})
    recv(conn)
    conn.close()
    # the slot frees up and a new client can start over
    deadline = 20
    for _ in range(deadline):
        with connect(f"ws://127.0.0.1:{port}") as conn2:
            first = recv(conn2)
            if first["type"] == "info":
                send(conn2, {"type": "start"})
                frame = recv(conn2)
                assert frame["time_step"] == 0
                send(conn2, {"type": "stop", "save": False})
                break
    else:
        pytest.fail("slot never released")
    assert not (out / "manifest.json").exists()


def test_second_client_rejected(lift_server):
    _, port, _ = lift_server
    with connect(f"ws://127.0.0.1:{port}") as c1:
        recv(c1)
        with connect(f"ws://127.0.0.1:{port}") as c2:
            msg = recv(c2)
            assert msg["type"] == "error" and "another client" in msg["msg"]


def test_shutdown_message_stops_server(tmp_path):
    srv, port, _, thread = start_server(tmp_path)
    with connect(f"ws://127.0.0.1:{port}") as conn:
        recv(conn)
        send(conn, {"type": "shutdown"})
    thread.join(timeout=5.0)
    assert not thread.is_alive()


def test_constructor_validation(tmp_path):
    with pytest.raises(ValueError):
        service.TeleopServer("flip", "fixed", tmp_path)
    with pytest.raises(ValueError):
        service.TeleopServer("lift", "sideways", tmp_path)
