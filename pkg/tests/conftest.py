import numpy as np
import pytest

from stair.dataset import InteractionDataset


def random_dataset(rng, num_users=6, num_items=5, density=0.5, held_out=0.2):
    """Every user and item gets at least one train edge."""
    mask = rng.random((num_users, num_items)) < density
    for u in range(num_users):
        mask[u, rng.integers(num_items)] = True
    for i in range(num_items):
        mask[rng.integers(num_users), i] = True
    pairs = np.argwhere(mask)
    hold = rng.random(len(pairs)) < held_out
    train = pairs[~hold]
    # keep coverage after holding out
    covered_u = set(train[:, 0].tolist())
    covered_i = set(train[:, 1].tolist())
    back = np.array([(u not in covered_u) or (i not in covered_i) for u, i in pairs[hold]], dtype=bool)
    held = pairs[hold]
    train = np.concatenate([train, held[back]])
    held = held[~back]
    half = len(held) // 2
    return InteractionDataset(num_users, num_items, train, held[:half], held[half:])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
