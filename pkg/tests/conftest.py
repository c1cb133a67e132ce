import numpy as np
import pytest

from acwm.cohort import SynthConfig, synth_generate
from acwm.models import ModelConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end experiments")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_model_cfg():
    return ModelConfig(in_channels=2, stem_width=4, stage_blocks=[1, 1], stage_widths=[8, 16],
                       latent_dim=8, predictor_hidden=16, projector_layers=3, num_classes=4)


@pytest.fixture(scope="session")
def tiny_synth_cfg():
    return SynthConfig(n_patients=24, channels=2, samples=64, seed=3, onset_prob=[0.3])


@pytest.fixture(scope="session")
def tiny_cohort(tiny_synth_cfg):
    return synth_generate(tiny_synth_cfg)
