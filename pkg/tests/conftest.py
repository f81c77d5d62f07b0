import numpy as np
import pytest

from micromotion.bandpass import BandpassSpec, bandpass_video
from micromotion.synthgen import SynthConfig, default_regions, gen_dataset


@pytest.fixture(scope="session")
def small_dataset():
    """A quick 32x32 synthetic recording shared by integration-style tests."""
    cfg = SynthConfig(frames=1500, height=32, width=32, seed=7,
                      regions=default_regions(32, 32))
    return gen_dataset(cfg)


@pytest.fixture(scope="session")
def small_filtered(small_dataset):
    return bandpass_video(small_dataset.transmission,
                          BandpassSpec(fps=small_dataset.transmission.fps))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
