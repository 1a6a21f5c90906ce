import numpy as np
import pytest


def manifold_data(n=60, d=12, classes=3, seed=0, noise=0.05):
    """Labelled points on a curved 2-d manifold embedded in d dimensions."""
    rng = np.random.default_rng(seed)
    lab = np.repeat(np.arange(classes), n // classes)
    t = rng.uniform(0, 1, lab.size) + 1.2 * lab
    lat = np.c_[np.cos(2 * t), np.sin(2 * t)] * (1 + 0.3 * lab[:, None])
    W = rng.normal(size=(2, d))
    return np.tanh(lat @ W) + noise * rng.normal(size=(lab.size, d)), lab


def write_labelled_csv(path, Y, labels):
    with open(path, "w") as fh:
        fh.write(",".join([f"f{i}" for i in range(Y.shape[1])] + ["label"]) + "\n")
        for row, lab in zip(Y, labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(lab)}\n")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def airline():
    from psilvm.dataio import load_series
    return load_series().series


# one line per acceptance criterion, filled by test_acceptance and echoed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
