import os
import time
from pathlib import Path

import numpy as np
import pytest

from relutopo.data_io import ImageSet, load_mnist
from relutopo.mlp import MlpNetwork, TrainConfig, train

MNIST_DIR = Path(os.environ.get("RELUTOPO_MNIST_DIR", "/root/mnist"))
TIMINGS: dict[str, float] = {}


def _have_mnist() -> bool:
    return (MNIST_DIR / "train-images-idx3-ubyte").is_file() or (MNIST_DIR / "train-images.idx3-ubyte").is_file()


@pytest.fixture(scope="session")
def mnist_dir():
    if not _have_mnist():
        pytest.skip(f"MNIST not found in {MNIST_DIR} (set RELUTOPO_MNIST_DIR)")
    return MNIST_DIR


@pytest.fixture(scope="session")
def mnist(mnist_dir):
    return load_mnist(mnist_dir)


@pytest.fixture(scope="session")
def trained(mnist):
    """Default-configuration MNIST network and its training log."""
    train_set, test_set = mnist
    start = time.perf_counter()
    result = train(train_set, test_set, TrainConfig())
    TIMINGS["train"] = time.perf_counter() - start
    return result


@pytest.fixture(scope="session")
def trained_network(trained):
    return trained[0]


@pytest.fixture(scope="session")
def trained_model_file(trained_network, tmp_path_factory):
    from relutopo.data_io import save_model
    path = tmp_path_factory.mktemp("model") / "model.json"
    save_model(trained_network, path)
    return path


def blob_data(centers, sigma, count, seed=0) -> ImageSet:
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=np.float64)
    labels = rng.integers(0, len(centers), count)
    points = centers[labels] + sigma * rng.standard_normal((count, 2))
    return ImageSet(points, labels)


TOY_CENTERS = [(-2.0, -1.0), (2.0, -1.0), (0.0, 2.0)]


@pytest.fixture(scope="session")
def toy_network() -> MlpNetwork:
    """2-8-3 network on three overlapping blobs, trained briefly so probabilities stay soft."""
    data = blob_data(TOY_CENTERS, 1.0, 600)
    net, _ = train(data, data, TrainConfig(epochs=2, lr=0.05, batch=32, seed=1), d_hidden=8, d_out=3)
    return net


def random_network(d_in=784, d_hidden=256, d_out=10, seed=0, scale=1.0) -> MlpNetwork:
    rng = np.random.default_rng(seed)
    return MlpNetwork(scale * rng.standard_normal((d_in, d_hidden)) / np.sqrt(d_in),
                      0.1 * rng.standard_normal(d_hidden),
                      scale * rng.standard_normal((d_hidden, d_out)) / np.sqrt(d_hidden),
                      0.1 * rng.standard_normal(d_out))
