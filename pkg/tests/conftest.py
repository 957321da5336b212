"""Shared fixtures: tiny networks, RNG streams, and the cached digit data.

The digit surrogate is generated once per machine into .cache-data at the
repository root; tests regenerate it from seed 0 when the files are missing,
so a fresh checkout needs no downloads.
"""

import sys

import numpy as np
import pytest
from pathlib import Path

from sfnn import (
    Architecture,
    EnumerationBudget,
    RngStream,
    TaskSplit,
    init_params,
)
from sfnn.data import (
    binarize,
    handwritten_digit_surrogate,
    load_idx_images,
    preprocess_classification,
    split_halves,
    write_idx_pair,
)

CACHE_DIR = Path(__file__).resolve().parent.parent / ".cache-data"
SURROGATE_SEED = 0


def scaled_params(arch, rng, scale=1.0):
    params = init_params(arch, rng)
    for name in params:
        if not name.startswith("b") and name != "c":
            params[name] *= scale
    return params


@pytest.fixture
def rng():
    return RngStream(7)


@pytest.fixture
def budget():
    return EnumerationBudget()


@pytest.fixture
def tiny_arch():
    return Architecture((3, 4, 2), "softmax", "stochastic")


@pytest.fixture
def tiny_net(tiny_arch, rng):
    return tiny_arch, scaled_params(tiny_arch, rng.substream("init"), 2.0)


def ensure_surrogate_cache():
    names = (
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    )
    if not all((CACHE_DIR / n).exists() for n in names):
        CACHE_DIR.mkdir(exist_ok=True)
        train, test = handwritten_digit_surrogate(RngStream(SURROGATE_SEED))
        write_idx_pair(CACHE_DIR, "train", train)
        write_idx_pair(CACHE_DIR, "t10k", test)
    return CACHE_DIR


@pytest.fixture(scope="session")
def digit_data():
    cache = ensure_surrogate_cache()
    train = load_idx_images(cache / "train-images-idx3-ubyte",
                            cache / "train-labels-idx1-ubyte")
    test = load_idx_images(cache / "t10k-images-idx3-ubyte",
                           cache / "t10k-labels-idx1-ubyte")
    return train, test


@pytest.fixture(scope="session")
def classify_splits(digit_data):
    train, test = digit_data
    train_x, test_x, _ = preprocess_classification(train.images, test.images)
    return TaskSplit(train_x, train.labels), TaskSplit(test_x, test.labels)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def halves_splits(digit_data):
    root = RngStream(0)

    def prep(ds, tag):
        binary = binarize(ds.images.astype(np.float64) / 255.0,
                          root.substream("binarize", tag))
        return TaskSplit.from_pairs(split_halves(binary))

    train, test = digit_data
    return prep(train, "train"), prep(test, "test")
