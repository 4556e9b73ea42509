import os
from pathlib import Path

import numpy as np
import pytest

MNIST_DIR = Path(os.environ.get("QNNLAB_MNIST_DIR", "/root/data/mnist"))
_MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)

ACCEPTANCE_RESULTS: dict = {}


def _have_mnist() -> bool:
    return all((MNIST_DIR / f).exists() or (MNIST_DIR / (f + ".gz")).exists() for f in _MNIST_FILES)


@pytest.fixture(scope="session")
def mnist_dir() -> Path:
    if not _have_mnist():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set QNNLAB_MNIST_DIR)")
    return MNIST_DIR


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit_vector(rng, dim, nonneg=False, complex_=False):
    v = rng.normal(size=dim)
    if complex_:
        v = v + 1j * rng.normal(size=dim)
    if nonneg:
        v = np.abs(v)
    return v / np.linalg.norm(v)


def random_density(rng, n):
    dim = 2**n
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
