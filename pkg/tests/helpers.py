"""Small shared builders for the test-suite."""

import numpy as np

from iceprune.data import Dataset
from iceprune.netcore import reference_cnn


def small_cnn(seed=0, classes=3):
    """Reference layout at toy size: masks live on layers 0, 3, 7 and 9."""
    return reference_cnn((2, 8, 8), classes, seed, widths=(4, 5, 6, 5))


def random_data(n, shape=(2, 8, 8), classes=3, seed=0, split="train"):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    return Dataset(rng.standard_normal((n, *shape)).astype(np.float32), rng.permutation(y), classes, split)
