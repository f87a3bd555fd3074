"""Shared fixtures: the 3-log standard fixture and models trained on it.

The expensive 300-epoch adversarial runs are session-scoped so the trainer
tests and the acceptance suite reuse one training each.
"""

import time

import pytest

from simtwin.core import NormSpec, make_dataset
from simtwin.laneworld import ControllerConfig, LaneKeepingController, collect_fot_logs
from simtwin.nets import GaussianHead
from simtwin.trainers import (
    GailHyper,
    make_critic,
    make_discriminator,
    make_env_model,
    train_bcxgail,
    train_gail,
)

STANDARD_SEED = 1207


@pytest.fixture(scope="session")
def fot3_logs():
    """Standard fixture: three field-test logs of the x=30 controller."""
    return collect_fot_logs(
        ControllerConfig(30.0), count=3, duration=25, noise_sigma=0.5, base_seed=STANDARD_SEED
    )


@pytest.fixture(scope="session")
def fot3_dataset(fot3_logs):
    return make_dataset(fot3_logs, 10, NormSpec())


@pytest.fixture(scope="session")
def controller30():
    return LaneKeepingController(30.0)


def _adversarial_parts():
    return (
        GaussianHead(make_env_model(10, seed=STANDARD_SEED)),
        make_discriminator(10, seed=STANDARD_SEED + 1),
        make_critic(10, seed=STANDARD_SEED + 2),
    )


@pytest.fixture(scope="session")
def gail_standard(fot3_dataset, controller30):
    """GAIL trained 300 epochs on the standard fixture (train time attached)."""
    head, disc, critic = _adversarial_parts()
    start = time.perf_counter()
    model = train_gail(
        head, disc, critic, controller30, fot3_dataset, GailHyper(epochs=300), seed=STANDARD_SEED
    )
    model.train_seconds = time.perf_counter() - start
    return model


@pytest.fixture(scope="session")
def bcxgail_standard(fot3_dataset, controller30):
    """BCxGAIL trained 300 epochs on the standard fixture, same seeds as GAIL."""
    head, disc, critic = _adversarial_parts()
    return train_bcxgail(
        head, disc, critic, controller30, fot3_dataset, GailHyper(epochs=300), seed=STANDARD_SEED
    )
