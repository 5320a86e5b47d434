import numpy as np
import pytest

from lvnet.config import LVNetConfig
from lvnet.numerics import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def randn(rng):
    """Factory for float64 leaf tensors that require grad."""

    def make(*shape, scale=1.0):
        return Tensor(scale * rng.standard_normal(shape), requires_grad=True)

    return make


@pytest.fixture
def default_cfg():
    return LVNetConfig().validate()


@pytest.fixture
def tiny_cfg():
    """Reduced-width network that still exercises every component."""
    return LVNetConfig().with_embed_dim(12).replace(**{"vst.depths": (2, 1)}).validate()


def jitter_biases(store, seed=0, scale=0.1):
    """Move every bias off zero so finite differences never sit on a ReLU kink."""
    rng = np.random.default_rng(seed)
    for name, param in store.items():
        if name.endswith(".bias"):
            param.data = param.data + scale * rng.standard_normal(param.shape)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
