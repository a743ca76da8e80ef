from pathlib import Path

import numpy as np
import pytest

from freeseg.backbones.cache import TensorCache
from freeseg.backbones.clients import ReplayBackend
from freeseg.backbones.features import ImageRecord, load_image

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def replay_backend() -> ReplayBackend:
    return ReplayBackend(TensorCache(FIXTURES / "cache"))


@pytest.fixture(scope="session")
def bird_image() -> ImageRecord:
    return load_image(FIXTURES / "images" / "bird.png")


@pytest.fixture(scope="session")
def dog_image() -> ImageRecord:
    return load_image(FIXTURES / "images" / "dog.png")


@pytest.fixture()
def tmp_cache(tmp_path) -> TensorCache:
    return TensorCache(tmp_path / "cache")


def random_image(rng: np.random.Generator, height: int = 16, width: int = 16) -> ImageRecord:
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    return ImageRecord(id="random", pixels=pixels)
