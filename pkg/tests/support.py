"""Shared helpers for the test suite."""

import numpy as np

from protoad import SynthConfig

# Small, fast dataset used by CLI and pipeline tests.
SMALL_SYNTH = SynthConfig(
    seed=11,
    n_train=6,
    n_test_normal=4,
    n_test_anomalous=4,
    grid=(16, 16),
    channels=16,
    defect_size_range=(3, 6),
)


def unit_rows(rng, n, c):
    rows = rng.standard_normal((n, c))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows.astype(np.float32)
