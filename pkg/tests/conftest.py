import numpy as np
import pytest

from advcp.dataio import generate_synthetic, stratified_split
from advcp.model import Classifier, TrainConfig, init_classifier, train


def random_classifier(kind, num_classes, dim, seed, scale=1.0, hidden=8):
    rng = np.random.default_rng(seed)
    if kind == "linear":
        return Classifier("linear", scale * rng.normal(size=(num_classes, dim)), rng.normal(size=num_classes))
    return Classifier(
        "mlp1",
        scale * rng.normal(size=(hidden, dim)),
        rng.normal(size=hidden),
        scale * rng.normal(size=(num_classes, hidden)),
        rng.normal(size=num_classes),
    )


@pytest.fixture(scope="session")
def small_ds():
    return generate_synthetic(3, 4, 60, 0.1, seed=11)


@pytest.fixture(scope="session")
def small_split(small_ds):
    return stratified_split(small_ds, "rq12", seed=3)


@pytest.fixture(scope="session")
def clean_model(small_ds, small_split):
    return train(small_ds, small_split.train, cfg=TrainConfig(epochs=60, seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["random_classifier", "init_classifier", "record_criterion"]


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
