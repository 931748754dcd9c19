import numpy as np
import pytest

from grasplab.nn.model import ModelCheckpoint, init_params, mlp_arch


def make_mlp(sizes, seed=0, dtype=np.float64, flatten_shape=None):
    """Dense/ReLU stack with the given layer widths."""
    arch = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i:
            arch.append({"type": "relu"})
        arch.append({"type": "dense", "in": a, "out": b})
    input_shape = (sizes[0],)
    if flatten_shape is not None:
        arch.insert(0, {"type": "flatten"})
        input_shape = tuple(flatten_shape)
    arch = tuple(arch)
    return ModelCheckpoint(arch, tuple(init_params(arch, seed, dtype)), sizes[-1], input_shape)


def linear_model(W, b, input_shape=None):
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    arch = ({"type": "dense", "in": W.shape[1], "out": W.shape[0]},)
    shape = (W.shape[1],)
    if input_shape is not None:
        arch = ({"type": "flatten"},) + arch
        shape = tuple(input_shape)
    return ModelCheckpoint(arch, (W, b), W.shape[0], shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist_desk():
    from grasplab.data import load_mnist_desk
    return load_mnist_desk()


__all__ = ["make_mlp", "linear_model", "mlp_arch"]


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
