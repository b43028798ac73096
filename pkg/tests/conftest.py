import numpy as np
import pytest

from popbias.data import RatingDataset

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        )


def random_ratings(rng: np.random.Generator, n_users: int, n_items: int, density: float):
    """Random dataset where every user has at least one rating."""
    triples = []
    for u in range(n_users):
        mask = rng.random(n_items) < density
        if not mask.any():
            mask[rng.integers(n_items)] = True
        for i in np.flatnonzero(mask):
            triples.append((f"u{u:02d}", f"i{i:02d}", int(rng.integers(1, 11))))
    return RatingDataset.from_triples(triples)
