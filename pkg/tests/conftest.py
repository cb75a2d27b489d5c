import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import strategies as st

from alohastab.model import SystemParams

probs = st.floats(0.05, 0.95)


@st.composite
def bernoulli_params(draw, min_J=1, max_J=5, max_lam=0.3):
    J = draw(st.integers(min_J, max_J))
    p = draw(st.lists(probs, min_size=J, max_size=J))
    lam = draw(st.lists(st.floats(0.0, max_lam), min_size=J, max_size=J))
    return SystemParams.bernoulli(p, lam)


def random_params(rng: np.random.Generator, J: int, lam_hi: float = 0.3) -> SystemParams:
    return SystemParams.bernoulli(rng.uniform(0.05, 0.95, J), rng.uniform(0.0, lam_hi, J))


def load_schema(name: str) -> dict:
    return json.loads(resources.files("alohastab").joinpath("schemas", name).read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
