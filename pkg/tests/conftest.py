import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ghostconv.kernels import available_backends  # noqa: E402

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
MNIST_DIR = os.path.join(DATA_DIR, "mnist1k")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(available_backends()))
def backend(request, monkeypatch):
    """Run a test once per importable kernel backend."""
    from ghostconv import kernels

    impl = available_backends()[request.param]
    for name in ("im2col", "col2im", "depthwise_forward", "depthwise_backward"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def mnist_dir():
    return MNIST_DIR


# A tiny Ghost CNN briefly trained on the MNIST fixture; pinned config, ~3 s.
TRAINED_CONFIG = dict(lr=0.05, batch_size=32, epochs=3, seed=0)
TRAINED_SUBSET = 300


@pytest.fixture(scope="session")
def mnist_data():
    from ghostconv.data import load_dataset

    return load_dataset("mnist", MNIST_DIR)


@pytest.fixture(scope="session")
def trained_tiny(mnist_data):
    """``(net, history)`` for the pinned short training run, as a float64 network."""
    from ghostconv.arch import build_tiny
    from ghostconv.network import materialize
    from ghostconv.train import TrainConfig, train

    train_set, _ = mnist_data
    net = materialize(build_tiny(), seed=0)
    hist = train(net, train_set.subset(TRAINED_SUBSET, seed=0), TrainConfig(**TRAINED_CONFIG))
    net64 = materialize(build_tiny(), seed=0, dtype=np.float64)
    net64.load_state_dict(net.state_dict())
    return net64, hist


def pytest_terminal_summary(terminalreporter):
    """Print the one-line-per-criterion acceptance verdicts collected during the run."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
