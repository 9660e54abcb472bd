import numpy as np
import pytest

from elai.dataset import SyntheticSpec, generate_synthetic
from elai.model import ModelConfig, init_model


def random_model(mode="gated", k=6, F=3, kc=3, H=4, seed=0, scale=0.5):
    """Initialized model with perturbed (non-zero) biases and weights."""
    model = init_model(ModelConfig(k, F, kc, mode, H, seed))
    rng = np.random.default_rng(10_000 + seed)
    for a in model.params.values():
        a += rng.normal(0.0, scale, a.shape)
    return model


@pytest.fixture
def synthetic():
    return generate_synthetic(SyntheticSpec(100, 100, 6, 6.0, 1.0, 3), seed=1)


# acceptance lines, echoed once more in the terminal summary so they survive capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
