import functools
import os
from pathlib import Path

import numpy as np
import pytest

from foresthash import _pykernels
from foresthash.io import load_idx
from foresthash.training import Dataset

try:
    from foresthash import _ckernels
except ImportError:  # extension not built
    _ckernels = None

KERNEL_BACKENDS = [pytest.param(_pykernels, id="python")]
if _ckernels is not None:
    KERNEL_BACKENDS.append(pytest.param(_ckernels, id="cython"))


@pytest.fixture(params=KERNEL_BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def two_blobs():
    """Two well separated Gaussian classes in 5-D."""
    rng = np.random.default_rng(3)
    a = rng.normal(0.0, 0.3, size=(40, 5))
    b = rng.normal(0.0, 0.3, size=(40, 5)) + np.array([4.0, 0, 0, 0, 0])
    return Dataset(np.vstack([a, b]), np.repeat([0, 1], 40))


@pytest.fixture
def multiclass():
    rng = np.random.default_rng(11)
    centers = rng.normal(0, 5, size=(6, 8))
    labels = np.repeat(np.arange(6), 30)
    return Dataset(centers[labels] + rng.normal(0, 1, size=(180, 8)), labels)


# ---------------------------------------------------------------- desk MNIST

def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        path = Path(directory) / name
        if path.exists():
            return path
    raise FileNotFoundError(f"{stem} not found in {directory}")


@functools.lru_cache(maxsize=None)
def desk_mnist(per_class=100, seed=0):
    """Train / query / database split of MNIST raw pixels scaled to [0, 1].

    With ``FORESTHASH_MNIST_DIR`` pointing at the four standard IDX files:
    ``per_class`` training images per digit from the training set, 1,000
    queries and 9,000 database items from the test set.  Otherwise the
    5,000-image MNIST sample bundled with mlxtend (500 per digit) is split
    per digit into ``per_class`` train, 100 query and the rest database.
    """
    rng = np.random.default_rng(seed)
    mnist_dir = os.environ.get("FORESTHASH_MNIST_DIR")
    if mnist_dir:
        train = load_idx(_find(mnist_dir, "train-images-idx3-ubyte"), _find(mnist_dir, "train-labels-idx1-ubyte"))
        test = load_idx(_find(mnist_dir, "t10k-images-idx3-ubyte"), _find(mnist_dir, "t10k-labels-idx1-ubyte"))
        rows = np.concatenate([rng.permutation(np.flatnonzero(train.labels == c))[:per_class] for c in range(10)])
        order = rng.permutation(test.n_samples)
        return train.subset(rows), test.subset(order[:1000]), test.subset(order[1000:10000]), "MNIST IDX"
    mlxtend_data = pytest.importorskip("mlxtend.data")
    x, y = mlxtend_data.mnist_data()
    data = Dataset(x.astype(np.float64) / 255.0, y)
    tr, qu, db = [], [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(data.labels == c))
        tr.append(idx[:per_class])
        qu.append(idx[per_class : per_class + 100])
        db.append(idx[per_class + 100 :])
    return (
        data.subset(np.concatenate(tr)),
        data.subset(np.concatenate(qu)),
        data.subset(np.concatenate(db)),
        "mlxtend MNIST sample",
    )


@functools.lru_cache(maxsize=None)
def desk_mnist_uint8():
    """The mlxtend sample as raw uint8 images and labels (for CLI/IDX runs)."""
    mlxtend_data = pytest.importorskip("mlxtend.data")
    x, y = mlxtend_data.mnist_data()
    return x.astype(np.uint8).reshape(-1, 28, 28), y.astype(np.uint8)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
