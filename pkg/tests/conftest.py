"""Shared fixtures, including the archive-gated BirdChicken experiment."""

import time

import pytest

from decolite.data import load_dataset, resolve_data_root
from decolite.model import model_checksum
from decolite.training import TrainConfig, train_base, train_decorrelated


def ucr_root_or_none(dataset: str):
    """The archive root from DECO_DATA_ROOT when it holds ``dataset``."""
    root = resolve_data_root(None)
    if root is None:
        return None
    return root if (root / dataset / f"{dataset}_TRAIN.tsv").is_file() else None


@pytest.fixture(scope="session")
def birdchicken_runs():
    """One reference plus five (plain, decorrelated) twins on BirdChicken.

    Trains 11 models at 500 epochs, shared by every archive-gated test so
    the expensive runs happen at most once per session. Skips when the
    archive is not available.
    """
    root = ucr_root_or_none("BirdChicken")
    if root is None:
        pytest.skip(
            "BirdChicken is not available offline (point DECO_DATA_ROOT at the UCR "
            "archive to enable); desk-scale decorrelation evidence runs in "
            "tests/test_training.py::TestDecorrelationEffect")
    start = time.perf_counter()
    train_ds, test_ds = load_dataset(root, "BirdChicken")
    assert (train_ds.n, test_ds.n, train_ds.length, train_ds.n_classes) == (20, 20, 512, 2)

    ref, _ = train_base(train_ds, TrainConfig(epochs=500, seed=0))
    ref_checksum = model_checksum(ref)
    pairs = []
    for seed in range(1, 6):
        base, _ = train_base(train_ds, TrainConfig(epochs=500, seed=seed))
        deco, _ = train_decorrelated(train_ds, TrainConfig(epochs=500, seed=seed), [ref])
        pairs.append({"seed": seed, "base": base, "deco": deco})
    return {
        "train": train_ds,
        "test": test_ds,
        "ref": ref,
        "ref_checksum": ref_checksum,
        "pairs": pairs,
        "elapsed": time.perf_counter() - start,
    }
