import pytest

from support_images import build_image_tree


@pytest.fixture
def image_tree(tmp_path):
    return build_image_tree(tmp_path / "images"), tmp_path
