import numpy as np
import pytest
import torch

from feat_video.numerics import RngStream

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def stream():
    return RngStream(1234)


def randn(stream, *shape, scale=1.0, dtype=torch.float64):
    return torch.from_numpy(scale * stream.normal(shape)).to(dtype)


def randomise(module, stream, scale=0.5):
    """Overwrite every parameter (zero-initialised gates included) with Gaussian noise."""
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.from_numpy(np.asarray(scale * stream.normal(tuple(p.shape)))))
    return module


def numpy_params(module):
    return {k: v.detach().numpy().astype(np.float64) for k, v in module.named_parameters()}
