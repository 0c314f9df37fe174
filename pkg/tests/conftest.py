import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

torch.set_num_threads(1)

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy():
    from hopose.model import make_toy_hand

    return make_toy_hand()


@pytest.fixture(scope="session")
def short_seq():
    """Four-frame synthetic grasp shared by the module tests (read-only)."""
    from hopose.synth import GraspSpec, synth_sequence

    return synth_sequence(GraspSpec(n_frames=4))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[dict]()
N_CRITERIA = 9


@pytest.fixture
def criterion(request):
    """Record one acceptance result; the terminal summary prints a line per criterion."""
    results = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def report(number: int, passed: bool, detail: str) -> None:
        results[number] = (bool(passed), detail)

    return report


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE_KEY, None)
    if results is None:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        passed, detail = results.get(n, (False, "not run or errored before reporting"))
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
