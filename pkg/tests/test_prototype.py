import numpy as np
import pytest

from protoad.finch import Partition
from protoad.prototype import (
    BankFormatError,
    PrototypeBank,
    build_bank,
    load_bank,
    save_bank,
)
from protoad.scoring import score_image
from protoad.tensor import FeatureTensor

from support import unit_rows


def partition_for(labels, features):
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1
    from protoad.finch import cluster_means

    means, sizes, degenerate = cluster_means(features, labels, k)
    return Partition(labels=labels, num_clusters=k, means=means, sizes=sizes,
                     degenerate=degenerate)


class TestBuildBank:
    def test_singleton_cluster_keeps_vector(self):
        v = np.array([[0.6, 0.8]], dtype=np.float32)
        bank = build_bank(v, partition_for([0], v))
        np.testing.assert_allclose(bank.kernels, v, atol=1e-7)

    def test_two_orthonormal_vectors(self):
        features = np.eye(2, dtype=np.float32)
        bank = build_bank(features, partition_for([0, 0], features))
        np.testing.assert_allclose(bank.kernels[0], [1 / np.sqrt(2)] * 2, atol=1e-6)

    def test_identical_means_deduplicated(self):
        # Two clusters whose members average to the same direction.
        features = np.array(
            [[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]], dtype=np.float32
        )
        bank = build_bank(features, partition_for([0, 0, 1], features))
        assert bank.num_prototypes == 1

    def test_length_mismatch_rejected(self):
        features = np.eye(2, dtype=np.float32)
        part = partition_for([0, 0], features)
        with pytest.raises(ValueError, match="features"):
            build_bank(np.eye(3, dtype=np.float32), part)

    def test_rows_invariant_under_partition_preserving_permutation(self):
        rng = np.random.default_rng(60)
        features = unit_rows(rng, 40, 6)
        labels = np.repeat(np.arange(8), 5)
        bank = build_bank(features, partition_for(labels, features))
        # Shuffle points within clusters only.
        perm = np.concatenate([rng.permutation(np.arange(i * 5, i * 5 + 5)) for i in range(8)])
        bank2 = build_bank(features[perm], partition_for(labels, features[perm]))

        def by_rows(a):
            return a[np.lexsort(a.T[::-1])]

        np.testing.assert_allclose(by_rows(bank.kernels), by_rows(bank2.kernels), atol=1e-6)

    def test_singleton_member_scores_zero(self):
        rng = np.random.default_rng(61)
        features = unit_rows(rng, 9, 8)
        labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 3])  # cluster 3 is a singleton
        bank = build_bank(features, partition_for(labels, features))
        lone = FeatureTensor(features[8].reshape(1, 1, 8))
        m = score_image(lone, bank)
        assert abs(m.image_score) < 1e-6


class TestBankValidation:
    def test_rejects_non_unit_rows(self):
        with pytest.raises(ValueError, match="unit"):
            PrototypeBank(kernels=np.array([[2.0, 0.0]], dtype=np.float32))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            PrototypeBank(kernels=np.zeros((0, 3), dtype=np.float32))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            PrototypeBank(kernels=np.array([[np.nan, 1.0]], dtype=np.float32))


class TestBankFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(62)
        bank = PrototypeBank(
            kernels=unit_rows(rng, 7, 5),
            meta={"category": "widget", "max_clusters": "10000", "note": "a=b"},
        )
        path = tmp_path / "bank.ptb"
        save_bank(bank, path)
        back = load_bank(path)
        assert back.kernels.tobytes() == bank.kernels.tobytes()
        assert back.meta == bank.meta

    def test_empty_meta_roundtrip(self, tmp_path):
        rng = np.random.default_rng(63)
        bank = PrototypeBank(kernels=unit_rows(rng, 2, 3))
        path = tmp_path / "bank.ptb"
        save_bank(bank, path)
        assert load_bank(path).meta == {}

    def test_truncated_file(self, tmp_path):
        rng = np.random.default_rng(64)
        path = tmp_path / "bank.ptb"
        save_bank(PrototypeBank(kernels=unit_rows(rng, 4, 4)), path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(BankFormatError, match="truncated"):
            load_bank(path)

    def test_unsupported_version(self, tmp_path):
        rng = np.random.default_rng(65)
        path = tmp_path / "bank.ptb"
        save_bank(PrototypeBank(kernels=unit_rows(rng, 1, 2)), path)
        raw = bytearray(path.read_bytes())
        raw[8] = 2
        path.write_bytes(bytes(raw))
        with pytest.raises(BankFormatError, match="version"):
            load_bank(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bank.ptb"
        path.write_bytes(b"WRONGMAG" + b"\x00" * 16)
        with pytest.raises(BankFormatError, match="magic"):
            load_bank(path)

    def test_trailing_bytes(self, tmp_path):
        rng = np.random.default_rng(66)
        path = tmp_path / "bank.ptb"
        save_bank(PrototypeBank(kernels=unit_rows(rng, 1, 2)), path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(BankFormatError, match="trailing"):
            load_bank(path)

    def test_meta_rejects_newlines(self, tmp_path):
        rng = np.random.default_rng(67)
        bank = PrototypeBank(kernels=unit_rows(rng, 1, 2), meta={"k": "a\nb"})
        with pytest.raises(ValueError, match="single-line"):
            save_bank(bank, tmp_path / "bank.ptb")

    def test_meta_rejects_equals_in_key(self, tmp_path):
        rng = np.random.default_rng(68)
        bank = PrototypeBank(kernels=unit_rows(rng, 1, 2), meta={"a=b": "c"})
        with pytest.raises(ValueError, match="key"):
            save_bank(bank, tmp_path / "bank.ptb")
