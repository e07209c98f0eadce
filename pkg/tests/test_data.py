import numpy as np
import pytest

from protoad.data import (
    DatasetError,
    SynthConfig,
    _latent_directions,
    _normal_cells,
    load_dataset,
    load_mask,
    synth_generate,
)
from protoad.tensor import FeatureTensor, read_tensor, write_tensor

from support import SMALL_SYNTH


def tree_bytes(root):
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*.pft"))
    }


class TestSynthGenerate:
    def test_same_seed_bit_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        synth_generate(SMALL_SYNTH, a)
        synth_generate(SMALL_SYNTH, b)
        assert tree_bytes(a) == tree_bytes(b)

    def test_different_seed_differs(self, tmp_path):
        from dataclasses import replace

        a = tmp_path / "a"
        b = tmp_path / "b"
        synth_generate(SMALL_SYNTH, a)
        synth_generate(replace(SMALL_SYNTH, seed=12), b)
        assert tree_bytes(a) != tree_bytes(b)

    def test_layout_and_counts(self, small_dataset):
        root, index = small_dataset
        assert len(index.train_normal) == SMALL_SYNTH.n_train
        labels = [item.label for item in index.test_items]
        assert labels.count(0) == SMALL_SYNTH.n_test_normal
        assert labels.count(1) == SMALL_SYNTH.n_test_anomalous
        assert index.image_size == SMALL_SYNTH.grid[0]

    def test_tensors_valid_and_unit_norm(self, small_dataset):
        _, index = small_dataset
        t = read_tensor(index.train_normal[0])
        assert (t.height, t.width, t.channels) == (16, 16, 16)
        norms = np.linalg.norm(t.data.astype(np.float64), axis=2)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)

    def test_masks_are_filled_rectangles_in_range(self, small_dataset):
        _, index = small_dataset
        lo, hi = SMALL_SYNTH.defect_size_range
        for item in index.test_items:
            if item.mask_path is None:
                continue
            mask = load_mask(item.mask_path)
            rows = np.nonzero(mask.any(axis=1))[0]
            cols = np.nonzero(mask.any(axis=0))[0]
            height = rows.max() - rows.min() + 1
            width = cols.max() - cols.min() + 1
            assert lo <= height <= hi and lo <= width <= hi
            assert mask.sum() == height * width  # solid rectangle

    def test_zero_shift_anomalous_equals_source(self, tmp_path):
        from dataclasses import replace

        cfg = replace(SMALL_SYNTH, defect_shift_deg=0.0)
        index = synth_generate(cfg, tmp_path / "d")
        # Reproduce the per-item stream: children are spawned in item order,
        # anomalous items draw their normal source first.
        ss = np.random.SeedSequence(cfg.seed)
        children = ss.spawn(1 + cfg.n_train + cfg.n_test_normal + cfg.n_test_anomalous)
        directions = _latent_directions(
            np.random.Generator(np.random.PCG64(children[0])), cfg.channels
        )
        first_anom = cfg.n_train + cfg.n_test_normal
        rng = np.random.Generator(np.random.PCG64(children[1 + first_anom]))
        source = _normal_cells(rng, cfg, directions)
        anomalous = [item for item in index.test_items if item.label == 1][0]
        written = read_tensor(anomalous.tensor_path)
        np.testing.assert_array_equal(
            written.data, FeatureTensor.from_array(source).data
        )

    def test_defect_cells_shifted_from_source(self, tmp_path):
        cfg = SMALL_SYNTH
        index = synth_generate(cfg, tmp_path / "d")
        ss = np.random.SeedSequence(cfg.seed)
        children = ss.spawn(1 + cfg.n_train + cfg.n_test_normal + cfg.n_test_anomalous)
        directions = _latent_directions(
            np.random.Generator(np.random.PCG64(children[0])), cfg.channels
        )
        first_anom = cfg.n_train + cfg.n_test_normal
        rng = np.random.Generator(np.random.PCG64(children[1 + first_anom]))
        source = _normal_cells(rng, cfg, directions).astype(np.float32)
        anomalous = [item for item in index.test_items if item.label == 1][0]
        written = read_tensor(anomalous.tensor_path).data
        mask = load_mask(anomalous.mask_path)
        np.testing.assert_array_equal(written[~mask], source[~mask])
        cos = np.sum(written.astype(np.float64) * source.astype(np.float64), axis=2)
        expected = np.cos(np.deg2rad(cfg.defect_shift_deg))
        np.testing.assert_allclose(cos[mask], expected, atol=1e-5)


class TestSynthConfig:
    def test_defaults_valid(self):
        SynthConfig()

    @pytest.mark.parametrize(
        "field,value",
        [
            ("n_train", 0),
            ("channels", 0),
            ("smoothness", 0.0),
            ("defect_shift_deg", -1.0),
            ("defect_size_range", (0, 4)),
            ("defect_size_range", (5, 4)),
            ("defect_size_range", (4, 40)),
        ],
    )
    def test_invalid_values(self, field, value):
        from dataclasses import replace

        with pytest.raises(ValueError):
            replace(SynthConfig(), **{field: value})

    def test_zero_test_counts_allowed(self):
        from dataclasses import replace

        replace(SynthConfig(), n_test_anomalous=0)


class TestLoadDataset:
    def test_well_formed_tree(self, small_dataset):
        root, _ = small_dataset
        index = load_dataset(root, "synthetic")
        assert len(index.train_normal) == SMALL_SYNTH.n_train
        assert all(item.mask_path is not None
                   for item in index.test_items if item.label == 1)

    def test_missing_mask_named(self, small_dataset):
        root, index = small_dataset
        anomalous = [i for i in index.test_items if i.label == 1][0]
        anomalous.mask_path.unlink()
        with pytest.raises(DatasetError, match=anomalous.tensor_path.stem):
            load_dataset(root, "synthetic")

    def test_empty_train_rejected(self, small_dataset):
        root, index = small_dataset
        for p in index.train_normal:
            p.unlink()
        with pytest.raises(DatasetError, match="train"):
            load_dataset(root, "synthetic")

    def test_missing_category(self, tmp_path):
        with pytest.raises(DatasetError, match="category"):
            load_dataset(tmp_path, "nope")

    def test_non_binary_mask_rejected(self, small_dataset):
        root, index = small_dataset
        anomalous = [i for i in index.test_items if i.label == 1][0]
        bad = np.full((16, 16, 1), 0.5, dtype=np.float32)
        write_tensor(FeatureTensor(bad), anomalous.mask_path)
        with pytest.raises(DatasetError, match="binary"):
            load_mask(anomalous.mask_path)

    def test_multichannel_mask_rejected(self, small_dataset):
        root, index = small_dataset
        anomalous = [i for i in index.test_items if i.label == 1][0]
        bad = np.zeros((16, 16, 2), dtype=np.float32)
        write_tensor(FeatureTensor(bad), anomalous.mask_path)
        with pytest.raises(DatasetError, match="C=1"):
            load_dataset(root, "synthetic")

    def test_inconsistent_mask_sizes_rejected(self, small_dataset):
        root, index = small_dataset
        anomalous = [i for i in index.test_items if i.label == 1][0]
        bad = np.zeros((8, 8, 1), dtype=np.float32)
        write_tensor(FeatureTensor(bad), anomalous.mask_path)
        with pytest.raises(DatasetError, match="mask sizes"):
            load_dataset(root, "synthetic")
