import numpy as np
import pytest

from grpo_mc.policy import PolicyParams, PolicySnapshot, make_vocabulary
from grpo_mc.tasks import Task, letter


def make_task(d_task, n_options=4, gold="A", seed=0, tid="t"):
    rng = np.random.default_rng(seed)
    return Task(tid, rng.standard_normal(d_task), tuple(f"option {letter(j)}" for j in range(n_options)), {gold})


def random_params(rng, V, k, d_task, scale=0.5):
    return PolicyParams(scale * rng.standard_normal(V * (d_task + k * V)), V, k, d_task)


def random_snapshot(rng, n_letters=4, n_fillers=4, k=2, d_task=5, scale=0.5, role="current"):
    vocab = make_vocabulary(n_letters, n_fillers)
    return PolicySnapshot(random_params(rng, len(vocab), k, d_task, scale), vocab, role)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


# --- acceptance report ------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} -- {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    def skip(number, reason):
        line = f"criterion {number}: SKIP -- {reason}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        pytest.skip(reason)

    record.skip = skip
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
