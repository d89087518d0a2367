import numpy as np
import pytest
from hypothesis import settings

from targ.synthetic import SyntheticConfig, generate_synthetic, split_corpus

settings.register_profile("default", deadline=None, derandomize=True)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SyntheticConfig(n_dialogues=12, seed=3))


@pytest.fixture(scope="session")
def small_split(small_corpus):
    return split_corpus(small_corpus, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
