import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from activecine.corpus import generate_corpus  # noqa: E402
from activecine.phantom import PhantomParams, generate_phantom  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def phantom():
    params = PhantomParams(lv_ef=0.6, rv_ef=0.5, seed=3)
    image, truth = generate_phantom(params)
    return params, image, truth


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(root, 2, seed=11)
    return root


# acceptance results, filled by test_acceptance and printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, detail, seconds = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} ({seconds:.1f} s) {detail}")
