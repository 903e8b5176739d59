import os
import sys

import numpy as np
import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.config import RunConfig  # noqa: E402
from src.models.image import GrayImage  # noqa: E402
from src.paths import DATA_DIR  # noqa: E402
from src.services.synthetic import random_blobs, render_blobs  # noqa: E402


@pytest.fixture
def blob_image():
    shape = (96, 96)
    return render_blobs(shape, random_blobs(shape, 12, seed=3, margin=24.0))


@pytest.fixture
def flat_image():
    return GrayImage(np.full((64, 64), 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def identity_config():
    cfg = RunConfig(threads=2)
    cfg.detector.channels = "identity"
    return cfg


@pytest.fixture
def graf_dir():
    path = DATA_DIR / "graf"
    if not path.is_dir():
        pytest.skip(f"{path} not available (set AFFINA_DATA_DIR)")
    return path
