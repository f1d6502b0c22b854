import numpy as np
import pytest

from styleback.data import ImageTensor, SyntheticSceneSpec, synthesize_scene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, channels=3, h=16, w=16, dtype=np.float32):
    return ImageTensor(rng.random((channels, h, w)).astype(dtype), "unit")


def scene(pattern="gradient", shape="square", fraction=0.05, seed=0, size=32):
    return synthesize_scene(SyntheticSceneSpec(pattern, shape, fraction, seed,
                                               height=size, width=size))


@pytest.fixture
def small_scene():
    return scene(size=32)
