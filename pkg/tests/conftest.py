import pytest

from protoad import synth_generate

from support import SMALL_SYNTH


@pytest.fixture
def small_dataset(tmp_path):
    root = tmp_path / "data"
    index = synth_generate(SMALL_SYNTH, root)
    return root, index
