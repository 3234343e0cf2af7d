import numpy as np
import pytest

from deepboost.deepmodel import ModelConfig
from deepboost.filters import GaborParams
from deepboost.synth import make_bars
from utils.logger import Logger


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def bars_train():
    return make_bars(8, seed=7, size=20)


@pytest.fixture(scope="session")
def bars_test():
    return make_bars(8, seed=8, size=20)


@pytest.fixture
def fast_config():
    """Small budgets so whole-model tests stay quick"""
    return ModelConfig(
        layers=1,
        rounds=(8,),
        grad_steps=2,
        outer_iters=2,
        bins=8,
        gabor=GaborParams(orientations=8),
        seed=3,
    )


@pytest.fixture(autouse=True)
def reset_logger():
    yield
    Logger.shutdown()
