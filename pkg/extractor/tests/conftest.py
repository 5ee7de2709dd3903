import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def rng():
    return np.random.default_rng(4242)


def make_png(path, color, size=(8, 8)):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", size, color).save(path)
    return path


@pytest.fixture
def image_tree(tmp_path):
    """A small id/ood directory: 6 ID and 4 OOD distinct solid-color images."""
    for i in range(6):
        make_png(tmp_path / "id" / f"im_{i:02d}.png", (40 * i % 255, 10, 200))
    for i in range(4):
        make_png(tmp_path / "ood" / f"im_{i:02d}.png", (5, 60 * i % 255, 30))
    return tmp_path
