import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from stablepriv.concepts import ConceptClass, Hypothesis

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

#: lines recorded by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@st.composite
def concept_classes(draw, max_domain=5, max_members=12, min_members=1):
    """Random nonempty classes of distinct hypotheses."""
    X = draw(st.integers(1, max_domain))
    cap = min(max_members, 2**X)
    codes = draw(st.lists(st.integers(0, 2**X - 1), min_size=min(min_members, cap), max_size=cap, unique=True))
    return ConceptClass([Hypothesis.from_code(c, X) for c in codes], X)


@pytest.fixture
def rs():
    return np.random.default_rng(12345)
