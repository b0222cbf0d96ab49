import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedmfs.datagen import ModalitySpec, SynthSpec, generate, gen_data

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def tiny_spec(seed=0, clients=3, samples=40, absence=None):
    mods = (
        ModalitySpec(0, 3, 6, 0.9, 0.3, "a"),
        ModalitySpec(1, 4, 5, 0.5, 0.5, "b"),
        ModalitySpec(2, 6, 9, 0.2, 0.6, "c"),
    )
    return SynthSpec(clients, 3, samples, mods, absence or {}, seed)


@pytest.fixture
def tiny_data():
    return generate(tiny_spec())


@pytest.fixture
def tiny_dir(tmp_path):
    path = tmp_path / "data"
    gen_data(tiny_spec(absence={2: {2}}), path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
