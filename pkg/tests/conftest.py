import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def small_problem(seed=0, num_users=40, num_items=60, ipu=8):
    from clearrec.evaluation import split_dataset
    from clearrec.synthetic import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec(num_users=num_users, num_items=num_items, raw_dim_v=12, raw_dim_t=10,
                         shared_rank=2, specific_rank=3, interactions_per_user=ipu, seed=seed)
    raw_v, raw_t, inter = generate_synthetic(spec)
    return split_dataset(inter, seed=seed), raw_v, raw_t


@pytest.fixture
def problem():
    return small_problem()


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
