import pytest

from quadprior.poses import make_gait_poses
from quadprior.vae import TrainConfig, new_prior, train


@pytest.fixture(scope="session")
def trained_prior():
    """Small prior trained once per session; good enough for sampling tests."""
    data = make_gait_poses(400, seed=1)
    config = TrainConfig(epochs=80, batch_size=64, seed=11)
    model, _ = train(new_prior(seed=5), data, config)
    return model
