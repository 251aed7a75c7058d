import time

import pytest

from vitcae.config import TrainConfig
from vitcae.trainer import Trainer

TINY = dict(embed_dim=16, n_heads=2, n_layers=2, dec_layers=1, d_global=8, d_local=4, pt_hidden=16,
            pt_layers=2, batch_size=16, dataset_size=32, heldout_size=8, probe_size=8, epochs=2)

# desk configuration, 40 epochs, seed 0; freezing off so both runs see every epoch
DESK_RUN = dict(epochs=40, seed=0, drift_threshold=0.0)


@pytest.fixture
def tiny_cfg():
    return TrainConfig(**TINY)


def fit_desk(trainer_cls=Trainer, **changes) -> Trainer:
    start = time.perf_counter()
    tr = trainer_cls(TrainConfig(**{**DESK_RUN, **changes}))
    tr.fit()
    tr.elapsed = time.perf_counter() - start
    return tr


@pytest.fixture(scope="session")
def controlled_run() -> Trainer:
    """Scheduled temperatures; also the trained model for the task-level tests."""
    return fit_desk(temperature_schedule=True)


@pytest.fixture(scope="session")
def uncontrolled_run() -> Trainer:
    return fit_desk(temperature_schedule=False)


# -- acceptance report -------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records and prints one line per acceptance criterion."""
    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
