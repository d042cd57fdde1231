import numpy as np
import pytest

from mvbc import dataset, nn, train
from mvbc.seeding import derive_seed, stream

from conftest import TEST_ARCH


def stores_from(ds, seed=0):
    tr, va = dataset.split_holdout(ds, 0.2, seed=seed)
    stats = dataset.compute_norm_stats(tr)
    return dataset.build_frame_store(tr, stats), dataset.build_frame_store(va, stats)


def synthetic_store(n, seed, zero_actions=False):
    rng = stream(seed, "store")
    images = rng.uniform(0, 1, (n, TEST_ARCH.image_h, TEST_ARCH.image_w, 4)).astype(np.float32)
    proprio = rng.normal(size=(n, TEST_ARCH.proprio_dim)).astype(np.float32)
    if zero_actions:
        actions = np.zeros((n, TEST_ARCH.action_dim), np.float32)
    else:
        actions = rng.uniform(-1, 1, (n, TEST_ARCH.action_dim)).astype(np.float32)
    return dataset.FrameStore(images, proprio, actions)


def test_profiles():
    assert train.PAPER_PROFILE.max_epochs == 200 and train.PAPER_PROFILE.patience == 30
    assert train.CI_PROFILE.max_epochs == 60 and train.CI_PROFILE.patience == 15
    assert train.PAPER_PROFILE.batch_size == 64
    assert train.PAPER_PROFILE.learning_rate == 0.001
    assert train.PAPER_PROFILE.holdout_fraction == 0.2


def test_zero_action_regression_converges_toward_zero():
    # constant-zero targets: loss falls steeply and outputs shrink toward 0
    tr = synthetic_store(1638, seed=99, zero_actions=True)
    va = synthetic_store(410, seed=98, zero_actions=True)
    cfg = train.TrainConfig(max_epochs=25, patience=25)
    params, hist = train.train_member(tr, va, 0, cfg, TEST_ARCH)
    assert hist.best_val < 5e-3
    assert hist.best_val < hist.epochs[0].val_mse / 10
    out = nn.forward(params, va.images[:64], va.proprio[:64], TEST_ARCH)
    assert float(np.abs(out).mean()) < 0.05


def test_training_loss_decreases_on_real_data(lift_fixed_mini):
    tr, va = stores_from(lift_fixed_mini)
    cfg = train.TrainConfig(max_epochs=30, patience=30)
    _, hist = train.train_member(tr, va, 0, cfg, TEST_ARCH)
    best_train = min(r.train_mse for r in hist.epochs)
    assert hist.epochs[0].train_mse / best_train >= 10.0


def test_best_params_match_recorded_best(lift_fixed_mini):
    tr, va = stores_from(lift_fixed_mini)
    cfg = train.TrainConfig(max_epochs=8, patience=8)
    params, hist = train.train_member(tr, va, 0, cfg, TEST_ARCH)
    vals = [r.val_mse for r in hist.epochs]
    assert hist.best_val == min(vals)
    assert hist.epochs[hist.best_epoch - 1].val_mse == hist.best_val
    assert abs(train.evaluate_mse(params, va, TEST_ARCH) - hist.best_val) < 1e-12


def test_patience_stops_training_on_plateau(lift_fixed_mini):
    # zero learning rate freezes the network, so epoch 1 is the only
    # improvement and training stops after exactly `patience` flat epochs
    tr, va = stores_from(lift_fixed_mini)
    cfg = train.TrainConfig(learning_rate=0.0, max_epochs=50, patience=4)
    _, hist = train.train_member(tr, va, 0, cfg, TEST_ARCH)
    assert hist.best_epoch == 1
    assert len(hist.epochs) == 1 + cfg.patience


def test_max_epochs_respected(lift_fixed_mini):
    tr, va = stores_from(lift_fixed_mini)
    cfg = train.TrainConfig(max_epochs=3, patience=30)
    _, hist = train.train_member(tr, va, 0, cfg, TEST_ARCH)
    assert len(hist.epochs) == 3


def test_member_determinism(lift_fixed_mini):
    tr, va = stores_from(lift_fixed_mini)
    cfg = train.TrainConfig(max_epochs=3, patience=3)
    p1, h1 = train.train_member(tr, va, 7, cfg, TEST_ARCH)
    p2, h2 = train.train_member(tr, va, 7, cfg, TEST_ARCH)
    for k in nn.PARAM_ORDER:
        assert np.array_equal(p1[k], p2[k])
    assert [r.val_mse for r in h1.epochs] == [r.val_mse for r in h2.epochs]


def test_empty_split_rejected():
    empty = dataset.FrameStore(
        np.zeros((0, TEST_ARCH.image_h, TEST_ARCH.image_w, 4), np.float32),
        np.zeros((0, TEST_ARCH.proprio_dim), np.float32),
        np.zeros((0, TEST_ARCH.action_dim), np.float32),
    )
    full = synthetic_store(64, seed=1)
    with pytest.raises(ValueError):
        train.train_member(empty, full, 0, train.CI_PROFILE, TEST_ARCH)
    with pytest.raises(ValueError):
        train.train_member(full, empty, 0, train.CI_PROFILE, TEST_ARCH)


def test_ensemble_structure(lift_fixed_mini):
    cfg = train.TrainConfig(max_epochs=2, patience=2)
    ens = train.train_ensemble(lift_fixed_mini, base_seed=5, config=cfg, arch=TEST_ARCH)
    assert len(ens.members) == 5
    assert ens.member_seeds == [derive_seed(5, "member", i) for i in range(5)]
    for i in range(5):
        for j in range(i + 1, 5):
            dist = sum(
                float(np.linalg.norm(ens.members[i][k] - ens.members[j][k]))
                for k in nn.PARAM_ORDER
            )
            assert dist > 0.01
    tr, _ = dataset.split_holdout(lift_fixed_mini, cfg.holdout_fraction, seed=5)
    stats = dataset.compute_norm_stats(tr)
    assert np.array_equal(ens.norm_stats.action_scale, stats.action_scale)


def test_ensemble_bytes_deterministic_across_workers(lift_fixed_mini, tmp_path):
    cfg = train.TrainConfig(max_epochs=2, patience=2)
    a = train.train_ensemble(lift_fixed_mini, base_seed=1, config=cfg, arch=TEST_ARCH)
    b = train.train_ensemble(
        lift_fixed_mini, base_seed=1, config=cfg, arch=TEST_ARCH, workers=2
    )
    assert nn.ensemble_bytes(a) == nn.ensemble_bytes(b)
    c = train.train_ensemble(lift_fixed_mini, base_seed=1, config=cfg, arch=TEST_ARCH)
    assert nn.ensemble_bytes(a) == nn.ensemble_bytes(c)


def test_history_csv_written(lift_fixed_mini, tmp_path):
    cfg = train.TrainConfig(max_epochs=2, patience=2)
    train.train_ensemble(
        lift_fixed_mini, base_seed=0, config=cfg, history_dir=tmp_path, arch=TEST_ARCH
    )
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == [f"member_{i}.csv" for i in range(5)]
    lines = (tmp_path / "member_0.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,train_mse,val_mse,wall_seconds"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "1" and float(first[1]) > 0
