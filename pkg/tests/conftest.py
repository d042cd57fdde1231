import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mvbc import nn
from mvbc.expert import collect_demos
from mvbc.train import TrainConfig

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# Populated by the acceptance tests; echoed after the run so the one-line
# verdict per criterion is visible without -s.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

# small conv stack on the full 48x64 image: fast enough to train in tests
TEST_ARCH = nn.ArchDescriptor(
    image_channels=4,
    image_h=48,
    image_w=64,
    proprio_dim=13,
    action_dim=4,
    hidden_dim=32,
    conv_channels=(8, 8, 8),
    conv_kernels=(5, 3, 3),
    conv_strides=(2, 2, 1),
)

FAST_TRAIN = TrainConfig(batch_size=64, learning_rate=0.001, max_epochs=4, patience=4)


@pytest.fixture(scope="session")
def lift_fixed_mini():
    return collect_demos("lift", "fixed", 6, seed=3)


@pytest.fixture(scope="session")
def lift_multi_mini():
    return collect_demos("lift", "multi", 6, seed=4)


def make_norm_stats(action_dim=4, proprio_dim=13):
    from mvbc.dataset import NormStats

    return NormStats(
        action_scale=np.ones(action_dim),
        proprio_mean=np.zeros(proprio_dim),
        proprio_std=np.ones(proprio_dim),
        depth_max=3.0,
    )


def make_ensemble(arch, base_seed=0):
    from mvbc.seeding import derive_seed

    seeds = [derive_seed(base_seed, "member", i) for i in range(nn.ENSEMBLE_SIZE)]
    members = [nn.init_policy(arch, s) for s in seeds]
    return nn.PolicyEnsemble(
        arch=arch,
        members=members,
        norm_stats=make_norm_stats(arch.action_dim, arch.proprio_dim),
        member_seeds=seeds,
    )
